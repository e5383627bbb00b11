"""Shortest open Hamiltonian path over selected views from a fixed start.

Exact Held-Karp dynamic programming up to ``EXACT_LIMIT`` views, otherwise
nearest neighbour followed by 2-opt. Costs are straight-line Euclidean
distances between view positions.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = ["ViewPath", "EXACT_LIMIT", "held_karp", "nearest_neighbor_2opt", "path_cost",
           "shortest_hamiltonian_path"]

EXACT_LIMIT = 20


@dataclass(frozen=True)
class ViewPath:
    order: tuple
    total_cost: float
    hops: tuple
    method: str = "exact"

    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.hops)])

    def to_text(self) -> str:
        lines = [f"method {self.method}", f"total_cost {self.total_cost:.9f}", "# step view_id cumulative_cost"]
        for step, (vid, cum) in enumerate(zip(self.order, self.cumulative())):
            lines.append(f"{step} {vid} {cum:.9f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def read_text(text: str) -> tuple[list[int], list[float]]:
        ids, cums = [], []
        for line in text.splitlines():
            tok = line.split()
            if len(tok) == 3 and tok[0].isdigit():
                ids.append(int(tok[1]))
                cums.append(float(tok[2]))
        return ids, cums


def path_cost(positions: np.ndarray, order) -> float:
    pts = np.asarray(positions, dtype=float)[list(order)]
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def held_karp(dist: np.ndarray, tol: float = 1e-12) -> list[int]:
    """Optimal open path over nodes ``0..n`` starting at node 0.

    Cost-to-go table ``h[S, i]``: cheapest path from ``i`` through every
    node of ``S``. Reconstruction walks forward taking the smallest node
    index that keeps the optimum, giving the lexicographically smallest
    optimal order.
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0] - 1
    if n <= 0:
        return [0]
    d = dist[1:, 1:]
    full = (1 << n) - 1
    h = np.full((1 << n, n), np.inf)
    h[0, :] = 0.0
    for size in range(1, n):
        masks = np.array([sum(1 << b for b in c) for c in combinations(range(n), size)], dtype=np.int64)
        best = np.full((len(masks), n), np.inf)
        for j in range(n):
            has = (masks >> j) & 1 == 1
            sub = masks[has]
            cand = d[:, j][None, :] + h[sub ^ (1 << j), j][:, None]
            best[has] = np.minimum(best[has], cand)
        # h[S, i] only defined for i not in S
        for i in range(n):
            best[(masks >> i) & 1 == 1, i] = np.inf
        h[masks] = best
    start_cost = np.array([dist[0, 1 + j] + h[full ^ (1 << j), j] for j in range(n)])
    opt = start_cost.min()

    order = [0]
    remaining = full
    here = None
    target = opt
    while remaining:
        for j in range(n):
            if not (remaining >> j) & 1:
                continue
            step = dist[0, 1 + j] if here is None else d[here, j]
            rest = h[remaining ^ (1 << j), j]
            if step + rest <= target + tol * max(1.0, abs(target)):
                order.append(1 + j)
                target = rest
                remaining ^= 1 << j
                here = j
                break
    return order


def nearest_neighbor_2opt(dist: np.ndarray) -> list[int]:
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    order = [0]
    left = set(range(1, n))
    while left:
        here = order[-1]
        nxt = min(left, key=lambda j: (dist[here, j], j))
        order.append(nxt)
        left.remove(nxt)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for k in range(i + 1, n):
                a, b = order[i - 1], order[i]
                c = order[k]
                after = dist[c, order[k + 1]] if k + 1 < n else 0.0
                before = dist[b, order[k + 1]] if k + 1 < n else 0.0
                delta = dist[a, c] + before - dist[a, b] - after
                if delta < -1e-12:
                    order[i:k + 1] = order[i:k + 1][::-1]
                    improved = True
    return order


def shortest_hamiltonian_path(start, views, exact_limit: int = EXACT_LIMIT) -> ViewPath:
    """Order ``views`` into the cheapest open path beginning at ``start``.

    ``start`` and ``views`` are objects with ``id`` and ``position``.
    """
    views = sorted(views, key=lambda v: v.id)
    if any(v.id == start.id for v in views):
        raise ValueError("start view must not be among the views to visit")
    nodes = [start, *views]
    pos = np.array([np.asarray(v.position, dtype=float) for v in nodes])
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    if len(views) <= exact_limit:
        order, method = held_karp(dist), "exact"
    else:
        order, method = nearest_neighbor_2opt(dist), "heuristic"
    hops = tuple(float(dist[a, b]) for a, b in zip(order[:-1], order[1:]))
    return ViewPath(tuple(nodes[i].id for i in order), float(sum(hops)), hops, method)
