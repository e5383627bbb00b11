"""Point clouds, voxel binning, nearest-neighbour queries and cloud file IO.

Every cloud lives in one global frame, in meters. Voxel indices follow the
``floor(coord / size)`` convention anchored at the frame origin so that two
grids built with the same size always agree on voxel boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "SpatialIndex",
    "CloudFormatError",
    "voxel_keys",
    "voxel_downsample",
    "nearest_neighbor_distance",
    "chamfer_distance",
    "load_cloud",
    "save_cloud",
]


class CloudFormatError(ValueError):
    """Raised for unreadable or unsupported point-cloud files."""


@dataclass(frozen=True)
class PointCloud:
    """Ordered (N, 3) array of points in meters.

    The coordinate array is copied and marked read-only on construction.
    """

    points: np.ndarray
    frame_id: str = "world"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @classmethod
    def empty(cls, frame_id: str = "world") -> "PointCloud":
        return cls(np.zeros((0, 3)), frame_id)

    def concat(self, *others: "PointCloud") -> "PointCloud":
        return PointCloud(np.vstack([self.points, *[o.points for o in others]]), self.frame_id)

    def transformed(self, rotation: np.ndarray | None = None, translation=None) -> "PointCloud":
        pts = self.points
        if rotation is not None:
            pts = pts @ np.asarray(rotation).T
        if translation is not None:
            pts = pts + np.asarray(translation)
        return PointCloud(pts, self.frame_id)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.is_empty:
            raise ValueError("empty cloud has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class SpatialIndex:
    """Exact nearest-neighbour index over one cloud (KD-tree backed)."""

    cloud: PointCloud
    _tree: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.cloud.is_empty:
            raise ValueError("cannot index an empty cloud")
        object.__setattr__(self, "_tree", cKDTree(self.cloud.points))

    def __len__(self) -> int:
        return len(self.cloud)

    def query(self, points, k: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the ``k`` nearest indexed points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        k = min(k, len(self))
        dist, idx = self._tree.query(pts, k=k)
        if k == 1:
            dist, idx = dist.reshape(-1), idx.reshape(-1)
        return dist, idx

    def distances(self, points) -> np.ndarray:
        return self.query(points, k=1)[0]


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel index of each point, ``floor(p / voxel_size)``."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, ordered by voxel index."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if cloud.is_empty:
        return PointCloud.empty(cloud.frame_id)
    keys = voxel_keys(cloud.points, voxel_size)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.size, 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None], cloud.frame_id)


def nearest_neighbor_distance(index: SpatialIndex, query) -> float:
    return float(index.distances(np.asarray(query, dtype=np.float64))[0])


def chamfer_distance(a: PointCloud, b: PointCloud) -> float:
    """Symmetric Chamfer distance: average of the two mean 1-NN distances.

    Unsquared Euclidean distances, so the result is in meters.
    """
    if a.is_empty or b.is_empty:
        raise ValueError("chamfer distance needs two non-empty clouds")
    d_ab = SpatialIndex(b).distances(a.points)
    d_ba = SpatialIndex(a).distances(b.points)
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


# --------------------------------------------------------------------------- IO


def save_cloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".xyz":
        np.savetxt(path, cloud.points, fmt="%.9f")
    elif ext == ".ply":
        header = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(cloud)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n"
        )
        with path.open("w") as fh:
            fh.write(header)
            np.savetxt(fh, cloud.points, fmt="%.9f")
    else:
        raise CloudFormatError(f"unsupported point-cloud extension {ext!r} (use .xyz or .ply)")


def load_cloud(path) -> PointCloud:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".xyz":
        return _read_xyz(path)
    if ext == ".ply":
        return _read_ply(path)
    raise CloudFormatError(f"unsupported point-cloud extension {ext!r} (use .xyz or .ply)")


def _parse_row(tokens, lineno, path, cols=(0, 1, 2)):
    try:
        return [float(tokens[c]) for c in cols]
    except (ValueError, IndexError):
        raise CloudFormatError(f"{path}:{lineno}: expected numeric x y z, got {' '.join(tokens)!r}") from None


def _read_xyz(path: Path) -> PointCloud:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            rows.append(_parse_row(tokens, lineno, path))
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def _read_ply(path: Path) -> PointCloud:
    with path.open("rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise CloudFormatError(f"{path}: binary PLY is not supported, convert to ASCII") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}:1: missing 'ply' magic")

    n_vertex = None
    props: list[str] = []
    current = None
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise CloudFormatError(f"{path}:{lineno}: binary PLY is not supported, convert to ASCII")
        elif tokens[0] == "element":
            current = tokens[1]
            if current == "vertex":
                n_vertex = int(tokens[2])
        elif tokens[0] == "property" and current == "vertex":
            if tokens[1] == "list":
                raise CloudFormatError(f"{path}:{lineno}: list properties on vertices are not supported")
            props.append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = lineno
            break
    if header_end is None:
        raise CloudFormatError(f"{path}: missing end_header")
    if n_vertex is None:
        raise CloudFormatError(f"{path}: no vertex element")
    try:
        cols = tuple(props.index(axis) for axis in ("x", "y", "z"))
    except ValueError:
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z properties") from None

    rows = []
    lineno = header_end
    for line in lines[header_end:]:
        lineno += 1
        if len(rows) == n_vertex:
            break
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < len(props):
            raise CloudFormatError(f"{path}:{lineno}: expected {len(props)} values, got {len(tokens)}")
        rows.append(_parse_row(tokens, lineno, path, cols))
    if len(rows) != n_vertex:
        raise CloudFormatError(f"{path}: header declares {n_vertex} vertices, found {len(rows)}")
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))
