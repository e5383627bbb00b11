"""View selection: visibility indicator, minimum set cover and a greedy NBV.

``solve_cover`` removes the points already seen by visited views, then
either runs the classic greedy heuristic or a branch-and-bound search that
starts from the greedy incumbent. Exact mode additionally returns the
lexicographically smallest optimal id set when it can be found within the
time budget.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .occupancy import OccupancyGrid, SurfacePoints, VoxelState
from .views import Camera, View, ViewSpace

__all__ = [
    "VisibilityMatrix",
    "CoverSolution",
    "InfeasibleCover",
    "build_visibility",
    "solve_cover",
    "greedy_cover",
    "nbv_gains",
    "next_best_view",
]

log = logging.getLogger(__name__)


class InfeasibleCover(ValueError):
    def __init__(self, points):
        self.points = list(points)
        super().__init__(f"{len(self.points)} point(s) cannot be covered by any unvisited view: {self.points[:10]}")


@dataclass(frozen=True)
class VisibilityMatrix:
    """``matrix[p, c]`` is True when surface point ``p`` is seen from view ``view_ids[c]``.

    ``uncoverable`` lists rows (indices into the original surface) that no
    view sees; they are dropped from ``matrix`` and ``keys``.
    """

    matrix: np.ndarray
    view_ids: tuple
    keys: np.ndarray
    uncoverable: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    uncoverable_keys: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def n_points(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_views(self) -> int:
        return self.matrix.shape[1]

    def column(self, view_id: int) -> np.ndarray:
        return self.matrix[:, self.view_ids.index(view_id)]

    @classmethod
    def from_sets(cls, sets: dict, n_points: int | None = None) -> "VisibilityMatrix":
        """Build from ``{view_id: iterable of point indices}``; handy for abstract instances."""
        ids = tuple(sorted(sets))
        n = n_points if n_points is not None else 1 + max((max(s) for s in sets.values() if len(s)), default=-1)
        m = np.zeros((n, len(ids)), dtype=bool)
        for c, vid in enumerate(ids):
            m[list(sets[vid]), c] = True
        return cls(m, ids, np.zeros((n, 3), dtype=np.int64))


@dataclass(frozen=True)
class CoverSolution:
    selected: tuple
    objective: int
    optimality: str
    lower_bound: int
    covered_counts: dict
    precovered: int
    elapsed: float = 0.0

    def to_text(self) -> str:
        lines = [
            f"objective {self.objective}",
            f"optimality {self.optimality}",
            f"lower_bound {self.lower_bound}",
            f"precovered {self.precovered}",
            "views " + ",".join(str(v) for v in self.selected),
            "# view_id covered_points",
        ]
        lines += [f"{v} {self.covered_counts[v]}" for v in self.selected]
        return "\n".join(lines) + "\n"

    @staticmethod
    def read_views(text: str) -> list[int]:
        for line in text.splitlines():
            if line.startswith("views"):
                body = line[len("views"):].strip()
                return [int(tok) for tok in body.split(",") if tok.strip()]
        raise ValueError("plan text has no 'views' line")


def build_visibility(surface: SurfacePoints, views: ViewSpace, grid: OccupancyGrid,
                     camera: Camera | None = None) -> VisibilityMatrix:
    """Evaluate point visibility for every (surface point, view) pair by ray casting."""
    if len(surface) == 0:
        raise ValueError("surface is empty")
    camera = camera or Camera()
    pts = surface.points
    cols = []
    for view in views:
        col = camera.in_frustum(view, pts)
        idx = np.flatnonzero(col)
        col[idx] = grid.visible(view.position, pts[idx])
        cols.append(col)
    full = np.column_stack(cols)
    seen = full.any(axis=1)
    bad = np.flatnonzero(~seen)
    if bad.size:
        log.info("%d surface points are visible from no view; excluded from the cover", bad.size)
    return VisibilityMatrix(full[seen], tuple(v.id for v in views), surface.keys[seen], bad, surface.keys[bad])


# ------------------------------------------------------------------ set cover


def _bits(mask_rows: np.ndarray) -> int:
    """Pack a boolean vector into a Python int bitset."""
    packed = np.packbits(mask_rows.astype(np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def _iter_bits(x: int):
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def greedy_cover(columns: list[int], universe: int) -> list[int]:
    """Greedy on column bitsets; returns column positions in pick order (ties -> lowest position)."""
    chosen = []
    left = universe
    while left:
        best, best_gain = -1, 0
        for c, col in enumerate(columns):
            gain = (col & left).bit_count()
            if gain > best_gain:
                best, best_gain = c, gain
        if best < 0:
            raise InfeasibleCover([])
        chosen.append(best)
        left &= ~columns[best]
    return chosen


class _Budget(Exception):
    pass


class _Search:
    """Branch and bound over reduced row patterns (rows stored as column bitsets)."""

    def __init__(self, rows: list[int], n_cols: int, deadline: float):
        self.rows = rows
        self.n_cols = n_cols
        self.deadline = deadline
        self.nodes = 0
        # column -> bitset of rows it covers
        self.cols = [0] * n_cols
        for r, pattern in enumerate(rows):
            for c in _iter_bits(pattern):
                self.cols[c] |= 1 << r

    def _tick(self):
        self.nodes += 1
        if self.nodes % 512 == 0 and time.perf_counter() > self.deadline:
            raise _Budget

    def lower_bound(self, uncovered: int, allowed: int) -> int:
        if not uncovered:
            return 0
        n_unc = uncovered.bit_count()
        best_col = max(((self.cols[c] & uncovered).bit_count() for c in _iter_bits(allowed)), default=0)
        if best_col == 0:
            return 10**9
        bound = -(-n_unc // best_col)
        # rows with pairwise disjoint column sets each need their own view
        used = 0
        packed = 0
        for r in sorted(_iter_bits(uncovered), key=lambda r: (self.rows[r] & allowed).bit_count()):
            pat = self.rows[r] & allowed
            if pat & used == 0:
                used |= pat
                packed += 1
        return max(bound, packed)

    def minimize(self, incumbent: list[int]) -> list[int]:
        self.best = list(incumbent)
        universe = (1 << len(self.rows)) - 1
        self._dfs(universe, (1 << self.n_cols) - 1, [])
        return self.best

    def _dfs(self, uncovered: int, allowed: int, chosen: list[int]):
        self._tick()
        if not uncovered:
            if len(chosen) < len(self.best):
                self.best = list(chosen)
            return
        if len(chosen) + self.lower_bound(uncovered, allowed) >= len(self.best):
            return
        # branch on the uncovered row with the fewest admissible columns
        r = min(_iter_bits(uncovered), key=lambda r: (self.rows[r] & allowed).bit_count())
        options = sorted(_iter_bits(self.rows[r] & allowed), key=lambda c: (-(self.cols[c] & uncovered).bit_count(), c))
        for c in options:
            chosen.append(c)
            self._dfs(uncovered & ~self.cols[c], allowed, chosen)
            chosen.pop()
            allowed &= ~(1 << c)

    def lexicographic(self, k: int) -> list[int] | None:
        """Smallest ascending column list of length ``k`` that covers every row."""
        universe = (1 << len(self.rows)) - 1
        return self._lex(universe, 0, [], k)

    def _lex(self, uncovered: int, start: int, chosen: list[int], k: int):
        self._tick()
        if not uncovered:
            return list(chosen)
        left = k - len(chosen)
        if left == 0:
            return None
        allowed = ((1 << self.n_cols) - 1) & ~((1 << start) - 1)
        # every remaining pick is >= the next pick, so the next pick may not exceed
        # the largest admissible column of any uncovered row
        limit = self.n_cols - 1
        for r in _iter_bits(uncovered):
            pat = self.rows[r] & allowed
            if not pat:
                return None
            limit = min(limit, pat.bit_length() - 1)
        if self.lower_bound(uncovered, allowed) > left:
            return None
        for c in range(start, limit + 1):
            if not self.cols[c] & uncovered:
                continue
            chosen.append(c)
            found = self._lex(uncovered & ~self.cols[c], c + 1, chosen, k)
            chosen.pop()
            if found is not None:
                return found
        return None


def _reduce_rows(patterns: list[int]) -> list[int]:
    """Unique row patterns with every superset of another pattern removed."""
    uniq = sorted(set(patterns), key=lambda p: (p.bit_count(), p))
    kept: list[int] = []
    for p in uniq:
        if not any(p & q == q for q in kept):
            kept.append(p)
    return kept


def solve_cover(matrix: VisibilityMatrix, visited=(), mode: str = "exact", time_budget: float = 10.0) -> CoverSolution:
    """Minimum number of unvisited views that see every point not yet seen."""
    if mode not in ("exact", "greedy"):
        raise ValueError("mode must be 'exact' or 'greedy'")
    t0 = time.perf_counter()
    visited = set(visited)
    ids = list(matrix.view_ids)
    vis_cols = [c for c, v in enumerate(ids) if v in visited]
    free_cols = [c for c, v in enumerate(ids) if v not in visited]
    M = matrix.matrix
    pre = M[:, vis_cols].any(axis=1) if vis_cols else np.zeros(M.shape[0], dtype=bool)
    rows_left = np.flatnonzero(~pre)
    sub = M[np.ix_(rows_left, free_cols)]
    orphan = rows_left[~sub.any(axis=1)] if len(free_cols) else rows_left
    if orphan.size:
        raise InfeasibleCover(orphan.tolist())

    free_ids = [ids[c] for c in free_cols]
    col_bits = [_bits(sub[:, c]) for c in range(len(free_cols))]
    universe = (1 << len(rows_left)) - 1

    def finish(cols, optimality, bound):
        sel = tuple(sorted(free_ids[c] for c in cols))
        counts = {free_ids[c]: int(sub[:, c].sum()) for c in cols}
        return CoverSolution(sel, len(sel), optimality, bound, counts, int(pre.sum()), time.perf_counter() - t0)

    if len(rows_left) == 0:
        return finish([], "exact", 0)
    greedy = greedy_cover(col_bits, universe)
    if mode == "greedy":
        return finish(greedy, "greedy", 0)

    # reduce to distinct, non-dominated row patterns over the free columns
    row_patterns = [_bits(row) for row in sub]
    search = _Search(_reduce_rows(row_patterns), len(free_cols), t0 + time_budget)
    root_bound = search.lower_bound((1 << len(search.rows)) - 1, (1 << len(free_cols)) - 1)
    try:
        best = search.minimize(greedy)
    except _Budget:
        log.warning("set cover budget exhausted; returning incumbent of size %d", len(search.best))
        return finish(search.best, "greedy", root_bound)
    try:
        lex = search.lexicographic(len(best))
        if lex is not None:
            best = lex
    except _Budget:
        log.info("lexicographic tie-break skipped: budget exhausted")
    return finish(best, "exact", len(best))


# ------------------------------------------------------------------------ NBV


def nbv_gains(current_map: OccupancyGrid, views, camera: Camera | None = None) -> dict:
    """Per view: boundary voxels it would see, approached through unknown space.

    A boundary voxel is occupied with at least one unknown 6-neighbour. It
    counts for a view when it is the first occupied voxel on the sight line
    and the voxel crossed just before it is still unknown.
    """
    camera = camera or Camera()
    keys = current_map.boundary_keys()
    centers = current_map.center_of(keys)
    gains = {}
    for view in views:
        if len(keys) == 0:
            gains[view.id] = 0
            continue
        inside = np.flatnonzero(camera.in_frustum(view, centers))
        hits = current_map.cast_rays(view.position.reshape(1, 3), centers[inside])
        seen = hits.hit & np.all(hits.key == keys[inside], axis=1)
        fresh = current_map.states(hits.prev[seen]) == VoxelState.UNKNOWN
        gains[view.id] = int(fresh.sum())
    return gains


def next_best_view(current_map: OccupancyGrid, candidate_views, visited=(), camera: Camera | None = None) -> View:
    visited = set(visited)
    pool = [v for v in candidate_views if v.id not in visited]
    if not pool:
        raise ValueError("no unvisited candidate view")
    gains = nbv_gains(current_map, pool, camera)
    return max(pool, key=lambda v: (gains[v.id], -v.id))
