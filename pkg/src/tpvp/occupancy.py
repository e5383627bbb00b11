"""Binary voxel occupancy grid with batched ray casting.

The grid is a dense array over an axis-aligned block of voxels whose indices
follow the global ``floor(p / resolution)`` convention. Voxels are OCCUPIED,
FREE (carved by a sensor ray) or UNKNOWN; anything outside the stored block
reads as UNKNOWN. Grids are immutable: insertion returns a new grid.

Ray casting uses Amanatides-Woo stepping, vectorised over many rays at once.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, save_cloud, voxel_keys

__all__ = [
    "VoxelState",
    "OccupancyGrid",
    "SurfacePoints",
    "RayHits",
    "insert_cloud",
    "extract_surface",
    "cast_ray",
    "point_visible",
]

_OUTSIDE = np.iinfo(np.int64).min // 4


class VoxelState(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class SurfacePoints:
    """Centers of occupied voxels, with their integer voxel keys."""

    cloud: PointCloud
    keys: np.ndarray

    def __len__(self):
        return len(self.cloud)

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points


@dataclass(frozen=True)
class RayHits:
    """Result of a batched cast.

    ``hit[i]`` tells whether ray ``i`` met an occupied voxel before its end;
    ``key[i]`` is that voxel and ``prev[i]`` the voxel traversed just before
    it (a far-away sentinel when the hit was the first voxel inside the grid).
    """

    hit: np.ndarray
    key: np.ndarray
    prev: np.ndarray


class OccupancyGrid:
    """Dense binary occupancy block.

    Parameters
    ----------
    resolution : float
        Voxel edge length in meters.
    lo : (3,) int array
        Global voxel key stored at array index ``(0, 0, 0)``.
    occupied, free : bool arrays of identical shape
    """

    def __init__(self, resolution: float, lo=(0, 0, 0), occupied=None, free=None):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.lo = np.asarray(lo, dtype=np.int64).reshape(3)
        if occupied is None:
            occupied = np.zeros((0, 0, 0), dtype=bool)
        occupied = np.array(occupied, dtype=bool)
        free = np.zeros_like(occupied) if free is None else np.array(free, dtype=bool)
        if free.shape != occupied.shape:
            raise ValueError("occupied and free arrays must share a shape")
        free &= ~occupied
        occupied.setflags(write=False)
        free.setflags(write=False)
        self._occ = occupied
        self._free = free

    # ------------------------------------------------------------ construction

    @classmethod
    def from_cloud(cls, cloud: PointCloud, resolution: float, margin: int = 2) -> "OccupancyGrid":
        return cls(resolution).insert_cloud(cloud, margin=margin)

    @classmethod
    def with_bounds(cls, lower, upper, resolution: float) -> "OccupancyGrid":
        """Empty grid covering the metric box ``[lower, upper]``."""
        lo = voxel_keys(np.asarray(lower, dtype=float), resolution)
        hi = voxel_keys(np.asarray(upper, dtype=float), resolution)
        shape = tuple(int(s) for s in hi - lo + 1)
        return cls(resolution, lo, np.zeros(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._occ.shape

    @property
    def origin(self) -> np.ndarray:
        """Metric corner of the stored block."""
        return self.lo * self.resolution

    @property
    def occupied_array(self) -> np.ndarray:
        return self._occ

    @property
    def free_array(self) -> np.ndarray:
        return self._free

    def __len__(self):
        return int(self._occ.sum())

    @property
    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def _grown(self, keys: np.ndarray, margin: int):
        """Copies of the state arrays enlarged to hold ``keys`` +- margin."""
        if keys.size == 0:
            return self.lo, self._occ.copy(), self._free.copy()
        need_lo = keys.min(axis=0) - margin
        need_hi = keys.max(axis=0) + margin
        if self._occ.size == 0:
            lo, hi = need_lo, need_hi
        else:
            lo = np.minimum(self.lo, need_lo)
            hi = np.maximum(self.lo + np.array(self.shape) - 1, need_hi)
        if self._occ.size and np.array_equal(lo, self.lo) and np.array_equal(hi - lo + 1, self.shape):
            return self.lo, self._occ.copy(), self._free.copy()
        shape = tuple(int(s) for s in hi - lo + 1)
        occ = np.zeros(shape, dtype=bool)
        free = np.zeros(shape, dtype=bool)
        if self._occ.size:
            off = self.lo - lo
            sl = tuple(slice(o, o + s) for o, s in zip(off, self.shape))
            occ[sl] = self._occ
            free[sl] = self._free
        return lo, occ, free

    def insert_cloud(self, cloud: PointCloud, margin: int = 2) -> "OccupancyGrid":
        """Mark every voxel holding at least one point as occupied."""
        keys = voxel_keys(cloud.points, self.resolution)
        lo, occ, free = self._grown(keys, margin)
        local = keys - lo
        occ[local[:, 0], local[:, 1], local[:, 2]] = True
        return OccupancyGrid(self.resolution, lo, occ, free)

    def insert_scan(self, sensor_origin, cloud: PointCloud, margin: int = 2) -> "OccupancyGrid":
        """Insert end points as occupied and carve the voxels their rays cross as free."""
        if cloud.is_empty:
            return self
        keys = voxel_keys(cloud.points, self.resolution)
        lo, occ, free = self._grown(keys, margin)
        local = keys - lo
        occ[local[:, 0], local[:, 1], local[:, 2]] = True
        starts = np.broadcast_to(np.asarray(sensor_origin, dtype=float), cloud.points.shape)
        carved = np.zeros_like(occ)
        _traverse(occ, lo, self.resolution, starts, cloud.points, stop_at_occupied=False, mark=carved)
        free |= carved
        return OccupancyGrid(self.resolution, lo, occ, free)

    # ---------------------------------------------------------------- queries

    def key_of(self, point) -> np.ndarray:
        return voxel_keys(np.asarray(point, dtype=float).reshape(-1, 3), self.resolution)

    def center_of(self, keys) -> np.ndarray:
        return (np.asarray(keys, dtype=np.float64) + 0.5) * self.resolution

    def _local(self, keys):
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        local = keys - self.lo
        inside = np.all((local >= 0) & (local < np.array(self.shape)), axis=1) if self._occ.size else np.zeros(len(keys), bool)
        return local, inside

    def states(self, keys) -> np.ndarray:
        """VoxelState codes for an (M, 3) array of keys."""
        local, inside = self._local(keys)
        out = np.full(len(local), VoxelState.UNKNOWN, dtype=np.int8)
        li = local[inside]
        occ = self._occ[li[:, 0], li[:, 1], li[:, 2]]
        fr = self._free[li[:, 0], li[:, 1], li[:, 2]]
        out[np.flatnonzero(inside)] = np.where(occ, VoxelState.OCCUPIED, np.where(fr, VoxelState.FREE, VoxelState.UNKNOWN))
        return out

    def state(self, key) -> VoxelState:
        return VoxelState(int(self.states(np.asarray(key).reshape(1, 3))[0]))

    def is_occupied(self, keys) -> np.ndarray:
        return self.states(keys) == VoxelState.OCCUPIED

    def occupied_keys(self) -> np.ndarray:
        """Global keys of occupied voxels in lexicographic order."""
        return np.argwhere(self._occ).astype(np.int64) + self.lo

    def boundary_keys(self) -> np.ndarray:
        """Occupied voxels with at least one 6-neighbour in UNKNOWN state."""
        keys = self.occupied_keys()
        if keys.size == 0:
            return keys
        is_boundary = np.zeros(len(keys), dtype=bool)
        for axis in range(3):
            for step in (-1, 1):
                nb = keys.copy()
                nb[:, axis] += step
                is_boundary |= self.states(nb) == VoxelState.UNKNOWN
        return keys[is_boundary]

    # ------------------------------------------------------------ ray casting

    def cast_rays(self, starts, ends) -> RayHits:
        """First occupied voxel along each segment ``starts[i] -> ends[i]``."""
        starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
        ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
        starts = np.broadcast_to(starts, ends.shape) if len(starts) == 1 else starts
        return _traverse(self._occ, self.lo, self.resolution, starts, ends, stop_at_occupied=True)

    def visible(self, view_pos, targets) -> np.ndarray:
        """Per target: is its own voxel the first occupied voxel on the ray from ``view_pos``?"""
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
        if len(targets) == 0:
            return np.zeros(0, dtype=bool)
        hits = self.cast_rays(np.asarray(view_pos, dtype=float).reshape(1, 3), targets)
        own = voxel_keys(targets, self.resolution)
        return hits.hit & np.all(hits.key == own, axis=1)

    def cast_ray(self, start, end):
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        if np.array_equal(start, end):
            raise ValueError("ray start and end coincide")
        hits = self.cast_rays(start.reshape(1, 3), end.reshape(1, 3))
        return tuple(int(c) for c in hits.key[0]) if hits.hit[0] else None

    def point_visible(self, view_pos, target) -> bool:
        return bool(self.visible(view_pos, np.asarray(target, dtype=float).reshape(1, 3))[0])

    def extract_surface(self) -> SurfacePoints:
        keys = self.occupied_keys()
        if keys.size == 0:
            raise ValueError("grid has no occupied voxels")
        return SurfacePoints(PointCloud(self.center_of(keys)), keys)

    def save_occupied(self, path) -> None:
        """Debug dump of occupied voxel centers."""
        save_cloud(PointCloud(self.center_of(self.occupied_keys())), path)


def insert_cloud(grid: OccupancyGrid, cloud: PointCloud) -> OccupancyGrid:
    return grid.insert_cloud(cloud)


def extract_surface(grid: OccupancyGrid) -> SurfacePoints:
    return grid.extract_surface()


def cast_ray(grid: OccupancyGrid, start, end):
    return grid.cast_ray(start, end)


def point_visible(grid: OccupancyGrid, view_pos, target) -> bool:
    return grid.point_visible(view_pos, target)


def _traverse(occ, lo, res, starts, ends, stop_at_occupied=True, mark=None) -> RayHits:
    """Batched voxel walk over segments, clipped to the stored block.

    With ``stop_at_occupied`` each ray ends at its first occupied voxel.
    Otherwise every traversed voxel except the one holding the end point is
    flagged in ``mark``.
    """
    m = len(ends)
    hit = np.zeros(m, dtype=bool)
    key = np.full((m, 3), _OUTSIDE, dtype=np.int64)
    prev = np.full((m, 3), _OUTSIDE, dtype=np.int64)
    if m == 0 or occ.size == 0:
        return RayHits(hit, key, prev)

    shape = np.array(occ.shape, dtype=np.int64)
    gs = starts / res - lo
    ge = ends / res - lo
    d = ge - gs
    end_vox = np.floor(ge).astype(np.int64)

    # slab clipping of the parameter range [0, 1] against the block
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(d != 0, (0.0 - gs) / d, -np.inf)
        tb = np.where(d != 0, (shape - gs) / d, np.inf)
    tnear = np.where(d != 0, np.minimum(ta, tb), -np.inf)
    tfar = np.where(d != 0, np.maximum(ta, tb), np.inf)
    parallel_out = (d == 0) & ((gs < 0) | (gs >= shape))
    t0 = np.maximum(tnear.max(axis=1), 0.0)
    t1 = np.minimum(tfar.min(axis=1), 1.0)
    valid = (t0 <= t1) & ~parallel_out.any(axis=1)

    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return RayHits(hit, key, prev)
    gs, d, t0, t1, end_vox = gs[idx], d[idx], t0[idx], t1[idx], end_vox[idx]

    nudge = np.minimum(t0 + 1e-9, t1)
    vox = np.floor(gs + nudge[:, None] * d).astype(np.int64)
    vox = np.clip(vox, 0, shape - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = vox + (step > 0)
        tmax = np.where(d != 0, (boundary - gs) / d, np.inf)
        tdelta = np.where(d != 0, 1.0 / np.abs(d), np.inf)
    pv = np.full_like(vox, _OUTSIDE)

    flat_occ = occ.reshape(-1)
    flat_mark = mark.reshape(-1) if mark is not None else None
    sy, sz = shape[1], shape[2]
    rows = np.arange(idx.size)

    while idx.size:
        flat = (vox[:, 0] * sy + vox[:, 1]) * sz + vox[:, 2]
        if stop_at_occupied:
            h = flat_occ[flat]
            if h.any():
                hi = idx[h]
                hit[hi] = True
                key[hi] = vox[h] + lo
                prev[hi] = np.where(pv[h] == _OUTSIDE, _OUTSIDE, pv[h] + lo)
            keep = ~h
        else:
            at_end = np.all(vox == end_vox, axis=1)
            flat_mark[flat[~at_end]] = True
            keep = ~at_end

        axis = np.argmin(tmax, axis=1)
        t_next = tmax[rows[: idx.size], axis]
        keep &= t_next <= t1
        if not keep.all():
            idx, gs, d, t1, end_vox = idx[keep], gs[keep], d[keep], t1[keep], end_vox[keep]
            vox, pv, step, tmax, tdelta, axis = vox[keep], pv[keep], step[keep], tmax[keep], tdelta[keep], axis[keep]
        if idx.size == 0:
            break
        r = rows[: idx.size]
        pv = vox.copy()
        vox[r, axis] += step[r, axis]
        tmax[r, axis] += tdelta[r, axis]
        inside = np.all((vox >= 0) & (vox < shape), axis=1)
        if not inside.all():
            idx, gs, d, t1, end_vox = idx[inside], gs[inside], d[inside], t1[inside], end_vox[inside]
            vox, pv, step, tmax, tdelta = vox[inside], pv[inside], step[inside], tmax[inside], tdelta[inside]
    return RayHits(hit, key, prev)
