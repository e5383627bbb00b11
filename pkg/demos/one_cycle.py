"""One acquisition cycle on a synthetic maize-like plant, stage by stage.

    python demos/one_cycle.py [species] [seed]
"""
import sys

from tpvp.pipeline import ExperimentConfig, run_experiment

species = sys.argv[1] if len(sys.argv) > 1 else "maize_like"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

cfg = ExperimentConfig(species=species, plant_seed=seed)
r = run_experiment(cfg, keep_artifacts=True)
a = r.artifacts

print(f"initial view {r.initial_view_id}, next best view {r.nbv_id}")
print(f"observed {len(a['observed'])} points from those two views")
reg = a["registration"]
print(f"registration loss {reg.initial_loss:.3e} -> {reg.final_loss:.3e} (best at iteration {reg.best_iteration})")
print(f"aligned prior vs ground truth chamfer {r.chamfer_after_registration:.2e} m")
print(f"inflation added {len(a['inflation'])} points; approximation has {len(a['approximation'])}")
print(f"cover: {len(r.selected)} views {list(r.selected)} ({r.cover_optimality})")
print(f"path {list(r.path)}, {r.movement_cost:.3f} m")
print(f"coverage {r.surface_coverage:.2f}% with {r.number_of_views} views in total")
for stage, seconds in r.timings.items():
    print(f"  {stage:<12s} {seconds:6.2f}s")
