"""Candidate view spaces and a ray-cast virtual depth scanner.

Views sit on a sphere around the plant and look at its center. Directions
are spread out by maximising the minimum pairwise angle (Tammes problem):
an inverse-distance energy relaxation gives a well-spread start, then a
sharpening pairwise repulsion climbs the minimum angle monotonically, with
step halving whenever a trial step would shrink it.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .occupancy import OccupancyGrid

__all__ = [
    "View",
    "ViewSpace",
    "Camera",
    "solve_tammes",
    "tammes_ascent",
    "min_pairwise_angle",
    "look_at",
    "build_view_space",
    "virtual_scan",
    "visible_mask",
    "VIEW_COUNTS",
]

VIEW_COUNTS = {"hemisphere": 32, "sphere": 63}
_SHARPENING = (8, 16, 32, 64)


def min_pairwise_angle(dirs: np.ndarray) -> float:
    dirs = np.asarray(dirs, dtype=float)
    g = dirs @ dirs.T
    np.fill_diagonal(g, -2.0)
    return float(np.arccos(np.clip(g.max(), -1.0, 1.0)))


def _project(x: np.ndarray, hemisphere: bool) -> np.ndarray:
    if hemisphere:
        x = x.copy()
        x[:, 2] = np.maximum(x[:, 2], 0.0)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _pair_terms(x):
    diff = x[:, None, :] - x[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    return diff, dist


def _tangent_unit(force, x):
    force = force - np.sum(force * x, axis=1, keepdims=True) * x
    scale = np.abs(force).max()
    return None if scale < 1e-15 else force / scale


def _relax(x, hemisphere, max_iter=1500):
    """Inverse-distance energy descent used as a warm start."""

    def energy(y):
        _, dist = _pair_terms(y)
        return float(np.sum(1.0 / dist[np.isfinite(dist)]))

    e, step = energy(x), 0.05
    for _ in range(max_iter):
        diff, dist = _pair_terms(x)
        f = _tangent_unit(np.sum(diff / dist[..., None] ** 3, axis=1), x)
        if f is None:
            break
        y = _project(x + step * f, hemisphere)
        ey = energy(y)
        if ey < e:
            if e - ey < 1e-13 * e:
                x = y
                break
            x, e, step = y, ey, min(step * 1.5, 0.05)
        else:
            step *= 0.5
            if step < 1e-10:
                break
    return x


def tammes_ascent(x, hemisphere=False, powers=_SHARPENING, tol=1e-9, max_iter=5000):
    """Monotone min-angle ascent by pairwise repulsion.

    Returns the final directions and the trace of the minimum pairwise angle
    after every accepted step (non-decreasing by construction).
    """
    x = _project(np.asarray(x, dtype=float), hemisphere)
    best = min_pairwise_angle(x)
    trace = [best]
    for power in powers:
        step = 0.01
        for _ in range(max_iter):
            diff, dist = _pair_terms(x)
            dmin = dist.min()
            w = (dmin / dist) ** power / dist
            f = _tangent_unit(np.sum(w[..., None] * diff, axis=1), x)
            if f is None:
                break
            while step >= tol:
                y = _project(x + step * f, hemisphere)
                angle = min_pairwise_angle(y)
                if angle >= best:
                    break
                step *= 0.5
            else:
                break
            moved = np.abs(y - x).max()
            x, best = y, angle
            trace.append(best)
            step = min(step * 2.0, 0.01)
            if moved < tol:
                break
    return x, np.array(trace)


@functools.lru_cache(maxsize=32)
def _solve_cached(n, kind, seed):
    rng = np.random.default_rng(seed)
    hemisphere = kind == "hemisphere"
    x = rng.normal(size=(n, 3))
    if hemisphere:
        x[:, 2] = np.abs(x[:, 2])
    x = _relax(_project(x, hemisphere), hemisphere)
    x, _ = tammes_ascent(x, hemisphere)
    x.setflags(write=False)
    return x


def solve_tammes(n: int, kind: str = "sphere", seed: int = 0) -> np.ndarray:
    """``n`` unit directions with (locally) maximal minimum pairwise angle.

    ``kind="hemisphere"`` keeps every direction in the ``z >= 0`` half space.
    """
    if n < 2:
        raise ValueError("need at least two directions")
    if kind not in VIEW_COUNTS:
        raise ValueError(f"unknown view-space kind {kind!r}")
    return _solve_cached(int(n), kind, int(seed)).copy()


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation; columns are the camera x (right), y (down), z (optical axis)."""
    forward = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    if abs(forward @ up) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


@dataclass(frozen=True)
class View:
    id: int
    position: np.ndarray
    rotation: np.ndarray

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]


@dataclass(frozen=True)
class ViewSpace:
    kind: str
    center: np.ndarray
    radius: float
    views: tuple

    def __len__(self):
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, view_id: int) -> View:
        return self.views[view_id]

    @property
    def positions(self) -> np.ndarray:
        return np.array([v.position for v in self.views])

    @property
    def ids(self) -> list[int]:
        return [v.id for v in self.views]

    def elevations(self) -> np.ndarray:
        """Elevation angle of every view above the horizontal plane through the center."""
        rel = self.positions - self.center
        return np.arcsin(np.clip(rel[:, 2] / self.radius, -1.0, 1.0))

    def to_text(self) -> str:
        lines = ["# id x y z qx-axis(3) qy-axis(3) optical-axis(3)"]
        for v in self.views:
            vals = [*v.position, *v.rotation[:, 0], *v.rotation[:, 1], *v.rotation[:, 2]]
            lines.append(f"{v.id} " + " ".join(f"{c:.9f}" for c in vals))
        return "\n".join(lines) + "\n"


def build_view_space(kind: str = "sphere", center=(0.0, 0.0, 0.0), radius: float = 0.4, seed: int = 0) -> ViewSpace:
    if radius <= 0:
        raise ValueError("radius must be positive")
    if kind not in VIEW_COUNTS:
        raise ValueError(f"unknown view-space kind {kind!r}")
    center = np.asarray(center, dtype=float).reshape(3)
    dirs = solve_tammes(VIEW_COUNTS[kind], kind, seed)
    # ids run from the top ring downwards, then by azimuth
    order = np.lexsort((np.round(np.arctan2(dirs[:, 1], dirs[:, 0]), 12), -np.round(dirs[:, 2], 12)))
    views = []
    for vid, i in enumerate(order):
        pos = center + radius * dirs[i]
        pos.setflags(write=False)
        rot = look_at(pos, center)
        rot.setflags(write=False)
        views.append(View(vid, pos, rot))
    center.setflags(write=False)
    return ViewSpace(kind, center, float(radius), tuple(views))


@dataclass(frozen=True)
class Camera:
    """Pinhole frustum; the pixel size only sets the aspect ratio."""

    vertical_fov_deg: float = 60.0
    width: int = 320
    height: int = 240
    near: float = 0.01
    far: float = 2.0

    def in_frustum(self, view: View, points: np.ndarray) -> np.ndarray:
        cam = (np.asarray(points) - view.position) @ view.rotation
        z = cam[:, 2]
        tan_v = np.tan(np.radians(self.vertical_fov_deg) / 2.0)
        tan_h = tan_v * self.width / self.height
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (z > self.near) & (z < self.far)
            ok &= np.abs(cam[:, 0]) <= tan_h * z
            ok &= np.abs(cam[:, 1]) <= tan_v * z
        return ok


def visible_mask(grid: OccupancyGrid, points: np.ndarray, view: View, camera: Camera | None = None) -> np.ndarray:
    """Points inside the frustum whose voxel is seen from ``view``.

    A voxel is seen when the sight line to its center meets no other
    occupied voxel first, the same test the planner applies to surface
    voxels; all points in a seen voxel are returned together.
    """
    camera = camera or Camera()
    points = np.asarray(points, dtype=float)
    mask = camera.in_frustum(view, points)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return mask
    keys, inverse = np.unique(grid.key_of(points[idx]), axis=0, return_inverse=True)
    seen = grid.visible(view.position, grid.center_of(keys))
    mask[idx] = seen[inverse.reshape(-1)]
    return mask


def virtual_scan(ground_truth: PointCloud, view: View, camera: Camera | None = None,
                 resolution: float = 0.004, grid: OccupancyGrid | None = None) -> PointCloud:
    """Ground-truth points seen from ``view``.

    Pass a prebuilt ``grid`` of the ground truth to scan many views cheaply.
    """
    if ground_truth.is_empty:
        raise ValueError("ground truth is empty")
    if grid is None:
        grid = OccupancyGrid.from_cloud(ground_truth, resolution)
    return PointCloud(ground_truth.points[visible_mask(grid, ground_truth.points, view, camera)])
