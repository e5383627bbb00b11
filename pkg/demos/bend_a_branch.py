"""Non-rigid registration of a stem whose side branch has been bent.

A rigid fit cannot follow the branch; the deformation graph can.

    python demos/bend_a_branch.py [bend_degrees]
"""
import sys

import numpy as np

from tpvp.geometry import PointCloud, chamfer_distance
from tpvp.registration import build_graph, register, so3_exp

bend = float(sys.argv[1]) if len(sys.argv) > 1 else 20.0
rng = np.random.default_rng(0)


def tube(a, b, radius, n):
    a, b = np.asarray(a, float), np.asarray(b, float)
    axis = (b - a) / np.linalg.norm(b - a)
    u = np.cross(axis, [0.0, 1.0, 0.0]) if abs(axis[0]) > 0.9 else np.cross(axis, [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    s, th = rng.uniform(0, 1, n), rng.uniform(0, 2 * np.pi, n)
    return a + s[:, None] * (b - a) + radius * (np.cos(th)[:, None] * u + np.sin(th)[:, None] * w)


stem = tube([0, 0, 0], [0, 0, 0.1], 0.002, 1200)
base = np.array([0.0, 0.0, 0.05])
branch = tube(base, [0.045, 0, 0.06], 0.0015, 800)
bent = (branch - base) @ so3_exp(np.array([0.0, np.radians(bend), 0.0])).T + base

P, Q = PointCloud(np.vstack([stem, branch])), PointCloud(np.vstack([stem, bent]))
graph, _ = build_graph(P)
print(f"{len(P)} points, {len(graph)} graph nodes, {len(graph.edges)} directed edges")

r = register(P, Q)
before, after = chamfer_distance(P, Q), chamfer_distance(r.aligned, Q)
print(f"chamfer {before:.2e} -> {after:.2e} m ({before / after:.1f}x)")
print(f"largest node rotation {np.degrees(r.graph.rotation_angles().max()):.1f} deg (bend was {bend:g})")
for it in (0, 50, 100, 200, len(r.trace) - 1):
    print("iter {:3.0f}  total {:.3e}  arap {:.3e}  cd {:.3e}  lap {:.3e}".format(*r.trace[it]))
