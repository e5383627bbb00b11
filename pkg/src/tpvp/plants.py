"""Procedural two-cycle plants for desk-scale experiments.

``maize_like`` plants are a stem with long, narrow, drooping ribbon leaves.
``tomato_like`` plants carry compound leaves with broad leaflets, which hide
much more of the plant from any single view. The second cycle is the first
one with every organ rotated about its attachment point, leaves and stem
elongated and a new leaf at the top. Both cycles are scaled and centered
with the transform that brings the *current* plant to a 0.12 m bounding-box
diagonal centered on the origin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, voxel_downsample
from .registration import so3_exp

__all__ = ["SyntheticPlant", "PROFILES", "generate_synthetic_plant", "rotate_about_z"]

PROFILES = ("maize_like", "tomato_like")
PLANT_DIAGONAL = 0.12
POINT_SPACING = 0.0012


@dataclass(frozen=True)
class SyntheticPlant:
    previous: PointCloud
    current: PointCloud
    profile: str
    seed: int

    def rotated(self, degrees: float) -> "SyntheticPlant":
        return SyntheticPlant(rotate_about_z(self.previous, degrees), rotate_about_z(self.current, degrees),
                              self.profile, self.seed)


def rotate_about_z(cloud: PointCloud, degrees: float) -> PointCloud:
    if degrees == 0:
        return cloud
    return cloud.transformed(so3_exp(np.array([0.0, 0.0, np.radians(degrees)])))


@dataclass
class _Organ:
    kind: str  # "ribbon" | "compound"
    height: float
    azimuth: float
    length: float
    width: float
    elevation: float
    droop: float
    bend_axis: np.ndarray
    bend_angle: float
    leaflets: int = 0


def _centerline(s, length, elevation, droop):
    """Drooping arc whose elevation angle drops linearly along the organ."""
    k = droop if abs(droop) > 1e-9 else 1e-9
    horiz = length * (np.sin(elevation) - np.sin(elevation - k * s)) / k
    vert = length * (np.cos(elevation - k * s) - np.cos(elevation)) / k
    return horiz, vert


def _frame(azimuth):
    out = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    side = np.array([-np.sin(azimuth), np.cos(azimuth), 0.0])
    return out, side


def _cylinder(rng, a, b, radius, n):
    a, b = np.asarray(a, float), np.asarray(b, float)
    axis = b - a
    length = np.linalg.norm(axis)
    axis /= length
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    s = rng.uniform(0.0, 1.0, n)
    th = rng.uniform(0.0, 2 * np.pi, n)
    return a + s[:, None] * length * axis + radius * (np.cos(th)[:, None] * u + np.sin(th)[:, None] * w)


def _ribbon(rng, base, organ, density):
    out, side = _frame(organ.azimuth)
    area = organ.length * organ.width * 0.7
    n = max(50, int(area * density))
    s = rng.uniform(0.0, 1.0, n)
    w = rng.uniform(-0.5, 0.5, n)
    horiz, vert = _centerline(s, organ.length, organ.elevation, organ.droop)
    taper = np.sqrt(np.clip(np.sin(np.pi * np.clip(s * 0.95 + 0.05, 0, 1)), 0, 1))
    pts = base + horiz[:, None] * out + vert[:, None] * np.array([0, 0, 1.0])
    pts += (w * organ.width * taper)[:, None] * side
    # slight V-shaped fold along the midrib
    pts[:, 2] += np.abs(w) * organ.width * 0.15
    return pts


def _compound(rng, base, organ, density):
    out, side = _frame(organ.azimuth)
    pts = []
    s_petiole = np.linspace(0.0, 1.0, 64)
    horiz, vert = _centerline(s_petiole, organ.length, organ.elevation, organ.droop)
    petiole = base + horiz[:, None] * out + vert[:, None] * np.array([0, 0, 1.0])
    for a, b in zip(petiole[:-1], petiole[1:]):
        pts.append(_cylinder(rng, a, b, 0.006, 6))
    leaflet_len = organ.width
    leaflet_wid = organ.width * 0.6
    positions = np.linspace(0.35, 1.0, organ.leaflets)
    for i, s in enumerate(positions):
        h, v = _centerline(np.array([s]), organ.length, organ.elevation, organ.droop)
        anchor = base + h[0] * out + v[0] * np.array([0, 0, 1.0])
        sides = [0.0] if i == len(positions) - 1 else [-1.0, 1.0]
        for sgn in sides:
            direction = out if sgn == 0 else (0.35 * out + sgn * side)
            direction = direction / np.linalg.norm(direction)
            lateral = np.cross(np.array([0, 0, 1.0]), direction)
            n = max(40, int(np.pi * leaflet_len * leaflet_wid / 4 * density))
            r = np.sqrt(rng.uniform(0.0, 1.0, n))
            th = rng.uniform(0.0, 2 * np.pi, n)
            x = (1.0 + r * np.cos(th)) * leaflet_len / 2
            y = r * np.sin(th) * leaflet_wid / 2
            tilt = -0.25 - 0.3 * s
            pts.append(anchor + x[:, None] * direction + y[:, None] * lateral
                       + (x * np.sin(tilt) + 0.12 * np.abs(y))[:, None] * np.array([0, 0, 1.0]))
    return np.vstack(pts)


def _organs(rng, profile):
    organs = []
    if profile == "maize_like":
        n = int(rng.integers(5, 7))
        az0 = rng.uniform(0, 2 * np.pi)
        for i in range(n):
            organs.append(_Organ(
                "ribbon",
                height=0.18 + 0.72 * i / n + rng.uniform(-0.03, 0.03),
                azimuth=az0 + np.pi * i + rng.uniform(-0.35, 0.35),
                length=rng.uniform(0.55, 0.75) * (1.0 - 0.35 * i / n),
                width=rng.uniform(0.07, 0.09),
                elevation=np.radians(rng.uniform(35, 60)),
                droop=rng.uniform(1.2, 2.0),
                bend_axis=_unit(rng.normal(size=3)),
                bend_angle=np.radians(rng.uniform(5, 12)),
            ))
    elif profile == "tomato_like":
        n = int(rng.integers(5, 7))
        az0 = rng.uniform(0, 2 * np.pi)
        golden = np.pi * (3 - np.sqrt(5))
        for i in range(n):
            organs.append(_Organ(
                "compound",
                height=0.15 + 0.75 * i / n + rng.uniform(-0.03, 0.03),
                azimuth=az0 + golden * i + rng.uniform(-0.2, 0.2),
                length=rng.uniform(0.45, 0.6) * (1.0 - 0.3 * i / n),
                width=rng.uniform(0.2, 0.26),
                elevation=np.radians(rng.uniform(20, 45)),
                droop=rng.uniform(0.6, 1.2),
                bend_axis=_unit(rng.normal(size=3)),
                bend_angle=np.radians(rng.uniform(5, 12)),
                leaflets=int(rng.integers(3, 5)),
            ))
    else:
        raise ValueError(f"unknown species profile {profile!r}")
    return organs


def _unit(v):
    return v / np.linalg.norm(v)


def _build(rng, profile, organs, stem_height, density):
    stem_r = 0.02 if profile == "maize_like" else 0.016
    n_stem = int(2 * np.pi * stem_r * stem_height * density)
    parts = [_cylinder(rng, [0, 0, 0], [0, 0, stem_height], stem_r, n_stem)]
    for organ in organs:
        base = np.array([0.0, 0.0, min(organ.height, stem_height)])
        pts = _ribbon(rng, base, organ, density) if organ.kind == "ribbon" else _compound(rng, base, organ, density)
        if organ.bend_angle:
            R = so3_exp(organ.bend_axis * organ.bend_angle)
            pts = (pts - base) @ R.T + base
        parts.append(pts)
    return np.vstack(parts)


def generate_synthetic_plant(seed: int = 0, species_profile: str = "maize_like", growth: float = 1.0) -> SyntheticPlant:
    """Deterministic previous/current cloud pair.

    ``growth`` scales the between-cycle elongation and the size of the new
    top leaf; values above 1 give growth-heavy pairs.
    """
    rng = np.random.default_rng([int(seed), PROFILES.index(species_profile)])
    organs = _organs(rng, species_profile)
    density = 1.0 / (0.01**2)  # raw units; equalised by the final downsample

    prev_organs = [_Organ(**{**o.__dict__, "bend_angle": 0.0}) for o in organs]
    stem_prev = 1.0
    cur_organs = []
    for o in organs:
        stretch = 1.0 + growth * rng.uniform(0.08, 0.18)
        cur_organs.append(_Organ(**{**o.__dict__, "length": o.length * stretch}))
    stem_cur = stem_prev * (1.0 + growth * 0.12)
    top = _organs(rng, species_profile)[-1]
    top.height = stem_cur * 0.97
    top.length *= min(1.0, 0.35 * growth + 0.1)
    top.bend_angle = 0.0
    cur_organs.append(top)

    prev_pts = _build(rng, species_profile, prev_organs, stem_prev, density)
    cur_pts = _build(rng, species_profile, cur_organs, stem_cur, density)

    lo, hi = cur_pts.min(axis=0), cur_pts.max(axis=0)
    scale = PLANT_DIAGONAL / np.linalg.norm(hi - lo)
    center = (lo + hi) / 2
    prev = voxel_downsample(PointCloud((prev_pts - center) * scale), POINT_SPACING)
    cur = voxel_downsample(PointCloud((cur_pts - center) * scale), POINT_SPACING)
    return SyntheticPlant(prev, cur, species_profile, int(seed))
