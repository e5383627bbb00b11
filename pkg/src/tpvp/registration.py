"""Non-rigid registration with an embedded deformation graph.

Each graph node ``n_j`` carries a rotation ``R_j`` and translation ``t_j``;
a source point moves as the weighted blend of its anchor nodes' rigid
transforms::

    p~_i = sum_j w_ij * (R_j (p_i - n_j) + n_j + t_j)

The objective mixes an ED as-rigid-as-possible term on graph edges, a
symmetric Chamfer term against the target scan and a sampled first-order
Laplacian term on the warped points. It is minimised with Adam; rotation
gradients are taken in the tangent space at the current estimate and
applied as ``R <- R exp(delta)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import PointCloud, voxel_keys

__all__ = [
    "DeformationGraph",
    "AnchorTable",
    "LossWeights",
    "LaplacianTerm",
    "RegistrationResult",
    "RegistrationDivergence",
    "so3_exp",
    "hat",
    "build_graph",
    "warp",
    "loss_arap",
    "arap_value_and_grad",
    "chamfer_value_and_grad",
    "loss_laplacian",
    "point_grad_to_params",
    "register",
]

log = logging.getLogger(__name__)


class RegistrationDivergence(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"registration loss became non-finite at iteration {iteration}")
        self.iteration = iteration


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrices for a (..., 3) array of vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, batched over the leading axes."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)[..., None, None]
    K = hat(omega)
    K2 = K @ K
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * K2


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    flip = np.linalg.det(out) < 0
    if flip.any():
        U[flip, :, -1] *= -1
        out[flip] = U[flip] @ Vt[flip]
    return out


@dataclass(frozen=True)
class LossWeights:
    arap: float = 1.0
    cd: float = 0.1
    lap: float = 0.01

    def __post_init__(self):
        if min(self.arap, self.cd, self.lap) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class DeformationGraph:
    """Nodes, directed k-NN edges (both orientations) and per-node rigid params."""

    nodes: np.ndarray
    edges: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def with_params(self, rotations, translations) -> "DeformationGraph":
        return replace(self, rotations=np.asarray(rotations, float), translations=np.asarray(translations, float))

    def identity(self) -> "DeformationGraph":
        J = len(self.nodes)
        return self.with_params(np.tile(np.eye(3), (J, 1, 1)), np.zeros((J, 3)))

    def rotation_angles(self) -> np.ndarray:
        """Angle of each node rotation in radians."""
        tr = np.trace(self.rotations, axis1=1, axis2=2)
        return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


@dataclass(frozen=True)
class AnchorTable:
    indices: np.ndarray
    weights: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def _knn_edges(nodes: np.ndarray, k: int) -> np.ndarray:
    J = len(nodes)
    if J < 2:
        return np.zeros((0, 2), dtype=np.int64)
    kq = min(k + 1, J)
    _, nn = cKDTree(nodes).query(nodes, k=kq)
    nn = nn.reshape(J, kq)
    pairs = set()
    for j in range(J):
        for m in nn[j]:
            if m != j:
                pairs.add((min(j, int(m)), max(j, int(m))))
    # bridge components with their shortest connecting edge until connected
    while True:
        und = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        adj = coo_matrix((np.ones(len(und)), (und[:, 0], und[:, 1])), shape=(J, J))
        n_comp, labels = connected_components(adj, directed=False)
        if n_comp == 1:
            break
        main = labels == labels[0]
        d, i = cKDTree(nodes[main]).query(nodes[~main])
        best = int(np.argmin(d))
        a = int(np.flatnonzero(main)[i[best]])
        b = int(np.flatnonzero(~main)[best])
        pairs.add((min(a, b), max(a, b)))
    und = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return np.vstack([und, und[:, ::-1]])


def build_graph(source: PointCloud, voxel_size: float = 0.004, k_edges: int = 6, anchors: int = 8,
                sigma: float | None = None) -> tuple[DeformationGraph, AnchorTable]:
    """Deformation graph on voxel centers of ``source`` and per-point anchor weights.

    ``sigma`` defaults to twice the voxel size.
    """
    if source.is_empty:
        raise ValueError("source cloud is empty")
    sigma = 2.0 * voxel_size if sigma is None else sigma
    keys = np.unique(voxel_keys(source.points, voxel_size), axis=0)
    nodes = (keys + 0.5) * voxel_size
    J = len(nodes)
    if J < anchors:
        warnings.warn(f"only {J} graph nodes; using {J} anchors per point instead of {anchors}", stacklevel=2)
        anchors = J
    dist, idx = cKDTree(nodes).query(source.points, k=anchors)
    dist = dist.reshape(len(source), anchors)
    idx = idx.reshape(len(source), anchors)
    d2 = dist**2
    w = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * sigma**2))
    w /= w.sum(axis=1, keepdims=True)
    graph = DeformationGraph(nodes, _knn_edges(nodes, k_edges), np.tile(np.eye(3), (J, 1, 1)), np.zeros((J, 3)))
    return graph, AnchorTable(idx, w)


def warp(graph: DeformationGraph, anchors: AnchorTable, source: PointCloud | np.ndarray) -> np.ndarray:
    pts = source.points if isinstance(source, PointCloud) else np.asarray(source, float)
    idx = anchors.indices
    u = pts[:, None, :] - graph.nodes[idx]
    moved = np.einsum("nkab,nkb->nka", graph.rotations[idx], u) + graph.nodes[idx] + graph.translations[idx]
    return np.einsum("nk,nka->na", anchors.weights, moved)


def arap_value_and_grad(graph: DeformationGraph):
    """ED rigidity term over directed edges and its gradient.

    Returns ``(value, grad_rot, grad_trans)``; ``grad_rot[j]`` is the
    derivative with respect to a right-multiplied rotation increment
    ``R_j exp(hat(delta))`` at ``delta = 0``.
    """
    J = len(graph.nodes)
    g_rot, g_t = np.zeros((J, 3)), np.zeros((J, 3))
    if len(graph.edges) == 0:
        return 0.0, g_rot, g_t
    j, k = graph.edges[:, 0], graph.edges[:, 1]
    d = graph.nodes[k] - graph.nodes[j]
    Rj = graph.rotations[j]
    e = np.einsum("eab,eb->ea", Rj, d) + graph.nodes[j] + graph.translations[j] - graph.nodes[k] - graph.translations[k]
    value = float(np.sum(e * e))
    ge = 2.0 * e
    rt_ge = np.einsum("eba,eb->ea", Rj, ge)
    _scatter(g_rot, j, np.cross(d, rt_ge))
    _scatter(g_t, j, ge)
    _scatter(g_t, k, -ge)
    return value, g_rot, g_t


def loss_arap(graph: DeformationGraph) -> float:
    return arap_value_and_grad(graph)[0]


def _scatter(out, index, values):
    for c in range(out.shape[1]):
        out[:, c] += np.bincount(index, weights=values[:, c], minlength=out.shape[0])


def chamfer_value_and_grad(warped: np.ndarray, target: np.ndarray, src_to_tgt: np.ndarray, tgt_idx: np.ndarray,
                           tgt_to_src: np.ndarray):
    """Symmetric Chamfer with frozen correspondences.

    ``src_to_tgt[i]`` is the target index matched to warped point ``i``;
    target points ``tgt_idx`` are matched to warped points ``tgt_to_src``.
    Each direction is a mean of unsquared distances; the two are averaged.
    """
    grad = np.zeros_like(warped)
    diff = warped - target[src_to_tgt]
    dist = np.linalg.norm(diff, axis=1)
    value = 0.5 * float(dist.mean())
    nz = dist > 1e-12
    grad[nz] += 0.5 * diff[nz] / (dist[nz, None] * len(warped))
    if len(tgt_idx):
        diff2 = warped[tgt_to_src] - target[tgt_idx]
        dist2 = np.linalg.norm(diff2, axis=1)
        value += 0.5 * float(dist2.mean())
        nz2 = dist2 > 1e-12
        contrib = np.zeros_like(diff2)
        contrib[nz2] = 0.5 * diff2[nz2] / (dist2[nz2, None] * len(tgt_idx))
        _scatter(grad, tgt_to_src, contrib)
    return value, grad


@dataclass(frozen=True)
class LaplacianTerm:
    """Sampled first-order Laplacian with neighbourhoods frozen on a reference cloud.

    ``value(x) = mean_s || (x_s - mean(x[nbrs_s])) - offset_s ||^2``. With
    zero offsets this is the plain smoothness functional; with the reference
    cloud's own Laplacian coordinates as offsets it measures how far the
    deformation bends local geometry.
    """

    samples: np.ndarray
    neighbors: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_cloud(cls, reference, sample_count: int = 4096, k_neighbors: int = 6, seed: int = 0,
                   relative: bool = True) -> "LaplacianTerm":
        pts = reference.points if isinstance(reference, PointCloud) else np.asarray(reference, float)
        n = len(pts)
        if n == 0:
            raise ValueError("empty cloud")
        if n <= sample_count:
            samples = np.arange(n)
        else:
            samples = np.sort(np.random.default_rng(seed).choice(n, size=sample_count, replace=False))
        k = min(k_neighbors, n - 1)
        if k < 1:
            return cls(samples, np.zeros((len(samples), 0), dtype=np.int64), np.zeros((len(samples), 3)))
        _, nn = cKDTree(pts).query(pts[samples], k=k + 1)
        nbrs = np.empty((len(samples), k), dtype=np.int64)
        for r, (s, row) in enumerate(zip(samples, nn)):
            row = [m for m in row if m != s][:k]
            nbrs[r] = row
        term = cls(samples, nbrs, np.zeros((len(samples), 3)))
        if relative:
            term = replace(term, offsets=term.coordinates(pts))
        return term

    def coordinates(self, x: np.ndarray) -> np.ndarray:
        if self.neighbors.shape[1] == 0:
            return np.zeros((len(self.samples), 3))
        return x[self.samples] - x[self.neighbors].mean(axis=1)

    def value_and_grad(self, x: np.ndarray):
        r = self.coordinates(x) - self.offsets
        S = len(self.samples)
        value = float(np.sum(r * r) / S)
        grad = np.zeros_like(x)
        k = self.neighbors.shape[1]
        if k == 0:
            return value, grad
        _scatter(grad, self.samples, 2.0 * r / S)
        share = np.repeat(-2.0 * r / (S * k), k, axis=0)
        _scatter(grad, self.neighbors.reshape(-1), share)
        return value, grad


def loss_laplacian(warped: PointCloud | np.ndarray, sample_count: int = 4096, k_neighbors: int = 6,
                   neighborhoods_from: PointCloud | np.ndarray | None = None, seed: int = 0) -> float:
    """Mean squared distance of sampled points to the centroid of their k neighbours.

    Neighbourhoods are taken from ``neighborhoods_from`` (the unwarped
    source) when given, otherwise from ``warped`` itself.
    """
    pts = warped.points if isinstance(warped, PointCloud) else np.asarray(warped, float)
    ref = pts if neighborhoods_from is None else neighborhoods_from
    term = LaplacianTerm.from_cloud(ref, sample_count, k_neighbors, seed, relative=False)
    return term.value_and_grad(pts)[0]


def point_grad_to_params(graph: DeformationGraph, anchors: AnchorTable, source_pts: np.ndarray, grad_pts: np.ndarray):
    """Chain a per-warped-point gradient back to node rotations and translations."""
    J = len(graph.nodes)
    idx = anchors.indices
    w = anchors.weights
    flat = idx.reshape(-1)
    g_t = np.zeros((J, 3))
    g_rot = np.zeros((J, 3))
    wg = (w[:, :, None] * grad_pts[:, None, :]).reshape(-1, 3)
    _scatter(g_t, flat, wg)
    u = (source_pts[:, None, :] - graph.nodes[idx]).reshape(-1, 3)
    rt_g = np.einsum("nba,nb->na", graph.rotations[flat], wg)
    _scatter(g_rot, flat, np.cross(u, rt_g))
    return g_rot, g_t


@dataclass
class RegistrationResult:
    aligned: PointCloud
    graph: DeformationGraph
    anchors: AnchorTable
    trace: np.ndarray = field(repr=False)
    best_iteration: int = 0

    @property
    def initial_loss(self) -> float:
        return float(self.trace[0, 1])

    @property
    def final_loss(self) -> float:
        return float(self.trace[self.best_iteration, 1])

    def trace_csv(self) -> str:
        rows = ["iteration,loss_total,loss_arap,loss_cd,loss_lap"]
        rows += [f"{int(r[0])},{r[1]:.12e},{r[2]:.12e},{r[3]:.12e},{r[4]:.12e}" for r in self.trace]
        return "\n".join(rows) + "\n"


class _Objective:
    """Total loss with correspondences refreshed at every evaluation."""

    def __init__(self, source, target, anchors, weights, laplacian, truncation):
        self.source = source
        self.target = target
        self.anchors = anchors
        self.weights = weights
        self.laplacian = laplacian
        self.truncation = truncation
        self.target_tree = cKDTree(target)

    def __call__(self, graph, need_grad=True):
        x = warp(graph, self.anchors, self.source)
        if not np.all(np.isfinite(x)):
            return (np.nan,) * 4, None, None
        _, s2t = self.target_tree.query(x)
        d_t2s, t2s = cKDTree(x).query(self.target)
        keep = np.flatnonzero(d_t2s < self.truncation)
        l_cd, g_cd = chamfer_value_and_grad(x, self.target, s2t, keep, t2s[keep])
        l_lap, g_lap = self.laplacian.value_and_grad(x)
        l_arap, gr_arap, gt_arap = arap_value_and_grad(graph)
        w = self.weights
        terms = (w.arap * l_arap + w.cd * l_cd + w.lap * l_lap, l_arap, l_cd, l_lap)
        if not need_grad:
            return terms, None, None
        g_pts = w.cd * g_cd + w.lap * g_lap
        gr, gt = point_grad_to_params(graph, self.anchors, self.source, g_pts)
        return terms, gr + w.arap * gr_arap, gt + w.arap * gt_arap


def register(source: PointCloud, target: PointCloud, weights: LossWeights = LossWeights(), lr: float = 0.1,
             iters: int = 300, voxel_size: float = 0.004, k_edges: int = 6, anchors: int = 8,
             sigma: float | None = None, laplacian_samples: int = 4096, laplacian_k: int = 6,
             truncation: float | None = None, translation_scale: float | None = None,
             rotation_scale: float = 1.0, betas=(0.9, 0.999), eps: float = 1e-8,
             reorthonormalize_every: int = 50, seed: int = 0) -> RegistrationResult:
    """Warp ``source`` onto the partial ``target`` scan.

    Adam runs on dimensionless parameters: a node translation is
    ``translation_scale * theta_t`` (default: one voxel) and a rotation
    increment ``rotation_scale * theta_r`` radians. The returned graph holds
    the lowest-loss iterate; ``trace`` has one row per evaluation
    ``(iteration, total, arap, cd, lap)``.
    """
    if source.is_empty or target.is_empty:
        raise ValueError("registration needs non-empty source and target")
    truncation = 5.0 * voxel_size if truncation is None else truncation
    t_scale = voxel_size if translation_scale is None else translation_scale
    graph, table = build_graph(source, voxel_size, k_edges, anchors, sigma)
    lap = LaplacianTerm.from_cloud(source, laplacian_samples, laplacian_k, seed, relative=True)
    objective = _Objective(source.points, target.points, table, weights, lap, truncation)

    J = len(graph)
    R = graph.rotations.copy()
    t = graph.translations.copy()
    m = np.zeros((J, 6))
    v = np.zeros((J, 6))
    b1, b2 = betas
    scale = np.array([rotation_scale] * 3 + [t_scale] * 3)
    trace = np.zeros((iters + 1, 5))
    best = (np.inf, 0, R.copy(), t.copy())

    for it in range(iters + 1):
        current = graph.with_params(R, t)
        with np.errstate(invalid="ignore", over="ignore"):
            terms, g_rot, g_t = objective(current, need_grad=it < iters)
        if not np.isfinite(terms[0]):
            raise RegistrationDivergence(it)
        trace[it] = (it, *terms)
        if terms[0] < best[0]:
            best = (terms[0], it, R.copy(), t.copy())
        if it == iters:
            break
        g = np.hstack([g_rot, g_t]) * scale
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** (it + 1))
        vhat = v / (1 - b2 ** (it + 1))
        delta = -lr * mhat / (np.sqrt(vhat) + eps) * scale
        R = R @ so3_exp(delta[:, :3])
        t = t + delta[:, 3:]
        if reorthonormalize_every and (it + 1) % reorthonormalize_every == 0:
            R = _orthonormalize(R)

    _, best_it, R, t = best
    final = graph.with_params(R, t)
    log.debug("registration: loss %.3e -> %.3e (best at %d)", trace[0, 1], trace[best_it, 1], best_it)
    return RegistrationResult(PointCloud(warp(final, table, source)), final, table, trace, best_it)
