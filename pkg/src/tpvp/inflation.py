"""Growth inflation of an aligned prior.

Candidates are voxel centers on the global grid; a candidate is kept when it
lies close to the current scan but away from the aligned prior, i.e. where
the plant has probably grown since the last cycle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, SpatialIndex, voxel_keys

__all__ = ["InflationParams", "candidate_grid", "inflate", "assemble_approximation"]


@dataclass(frozen=True)
class InflationParams:
    gamma_near: float = 0.003
    gamma_far: float = 0.005
    candidate_voxel: float = 0.004

    def __post_init__(self):
        if min(self.gamma_near, self.gamma_far, self.candidate_voxel) <= 0:
            raise ValueError("inflation parameters must be positive")


def candidate_grid(prior: PointCloud, scan: PointCloud, params: InflationParams) -> np.ndarray:
    """Voxel centers inside the bounding box of both clouds, dilated by ``2 * gamma_near``.

    Rows are in lexicographic voxel-index order.
    """
    pts = np.vstack([prior.points, scan.points])
    pad = 2.0 * params.gamma_near
    lo = voxel_keys(pts.min(axis=0) - pad, params.candidate_voxel)
    hi = voxel_keys(pts.max(axis=0) + pad, params.candidate_voxel)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    keys = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return (keys + 0.5) * params.candidate_voxel


def inflate(prior: PointCloud, scan: PointCloud, params: InflationParams = InflationParams()) -> PointCloud:
    if prior.is_empty or scan.is_empty:
        raise ValueError("inflation needs a non-empty prior and scan")
    cand = candidate_grid(prior, scan, params)
    near_scan = SpatialIndex(scan).distances(cand) < params.gamma_near
    cand = cand[near_scan]
    if len(cand) == 0:
        return PointCloud.empty(prior.frame_id)
    far_prior = SpatialIndex(prior).distances(cand) > params.gamma_far
    return PointCloud(cand[far_prior], prior.frame_id)


def assemble_approximation(prior: PointCloud, scan: PointCloud | None = None,
                           inflation: PointCloud | None = None) -> PointCloud:
    """Multiset union prior + scan + inflation; voxelisation deduplicates later."""
    if prior.is_empty:
        raise ValueError("aligned prior is empty")
    parts = [c for c in (scan, inflation) if c is not None]
    return prior.concat(*parts)
