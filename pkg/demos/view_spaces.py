"""Candidate view spaces and the three initial-view policies.

    python demos/view_spaces.py
"""
import numpy as np

from tpvp.pipeline import select_initial_view
from tpvp.views import build_view_space, min_pairwise_angle

for kind in ("sphere", "hemisphere"):
    vs = build_view_space(kind)
    dirs = vs.positions / np.linalg.norm(vs.positions, axis=1, keepdims=True)
    print(f"{kind}: {len(vs)} views, min separation {np.degrees(min_pairwise_angle(dirs)):.2f} deg")
    for policy in ("near-horizontal", "oblique", "near-top"):
        v = select_initial_view(vs, policy)
        print(f"  {policy:<16s} view {v.id:2d} at elevation {np.degrees(vs.elevations()[v.id]):6.1f} deg")
