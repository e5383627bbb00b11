"""End-to-end two-cycle simulation.

One cycle: scan from an initial view, pick and scan one next-best view,
register the previous-cycle model onto the fused scan, inflate it for
growth, voxelise, solve the set cover over the remaining views, order the
selected views along a shortest path and scan them. Metrics compare the
union of all scans with what the full view space could have seen.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np

from .coverage import build_visibility, next_best_view, solve_cover
from .geometry import PointCloud, chamfer_distance, save_cloud, voxel_keys
from .inflation import InflationParams, assemble_approximation, inflate
from .occupancy import OccupancyGrid
from .paths import shortest_hamiltonian_path
from .plants import generate_synthetic_plant
from .registration import LossWeights, register
from .views import Camera, View, ViewSpace, build_view_space, visible_mask

__all__ = [
    "ExperimentConfig",
    "MetricsReport",
    "StageError",
    "SceneVisibility",
    "select_initial_view",
    "surface_coverage",
    "run_cycle",
    "run_experiment",
    "run_matrix",
    "metrics_table",
    "aggregate_table",
    "INITIAL_POLICIES",
    "METRIC_COLUMNS",
]

log = logging.getLogger(__name__)

INITIAL_POLICIES = ("near-horizontal", "oblique", "near-top", "random")
_POLICY_ELEVATION = {"near-horizontal": 0.0, "oblique": 45.0, "near-top": 90.0}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    species: str = "maize_like"
    plant_seed: int = 0
    growth: float = 1.0
    view_space: str = "sphere"
    initial_view: str = "near-horizontal"
    rotation_deg: float = 0.0
    seed: int = 0
    tammes_seed: int = 0
    radius: float = 0.4
    voxel_size: float = 0.004
    gamma_near: float = 0.003
    gamma_far: float = 0.005
    candidate_voxel: float = 0.004
    lambda_arap: float = 1.0
    lambda_cd: float = 0.1
    lambda_lap: float = 0.01
    lr: float = 0.1
    iters: int = 300
    anchors: int = 8
    k_edges: int = 6
    use_nbv: bool = True
    inflation: bool = True
    cover_mode: str = "exact"
    cover_time_budget: float = 20.0

    def __post_init__(self):
        positive = ("radius", "voxel_size", "gamma_near", "gamma_far", "candidate_voxel", "lr", "iters", "anchors",
                    "k_edges", "cover_time_budget")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.initial_view not in INITIAL_POLICIES:
            raise ValueError(f"initial_view must be one of {INITIAL_POLICIES}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_arap, self.lambda_cd, self.lambda_lap)

    @property
    def inflation_params(self) -> InflationParams:
        return InflationParams(self.gamma_near, self.gamma_far, self.candidate_voxel)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})


METRIC_COLUMNS = (
    "species", "plant_seed", "view_space", "rotation_deg", "initial_view", "inflation", "use_nbv",
    "number_of_views", "planned_views", "surface_coverage", "movement_cost", "movement_cost_inclusive",
    "chamfer_after_registration", "cover_optimality", "uncoverable", "initial_view_id", "nbv_id", "path",
)


@dataclass
class MetricsReport:
    config: ExperimentConfig
    number_of_views: int
    surface_coverage: float
    movement_cost: float
    movement_cost_inclusive: float
    chamfer_after_registration: float
    initial_view_id: int
    nbv_id: int
    selected: tuple
    path: tuple
    cover_optimality: str
    uncoverable: int
    timings: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)

    @property
    def planned_views(self) -> int:
        return len(self.selected)

    def row(self) -> dict:
        c = self.config
        return {
            "species": c.species,
            "plant_seed": c.plant_seed,
            "view_space": c.view_space,
            "rotation_deg": f"{c.rotation_deg:g}",
            "initial_view": c.initial_view,
            "inflation": int(c.inflation),
            "use_nbv": int(c.use_nbv),
            "number_of_views": self.number_of_views,
            "planned_views": self.planned_views,
            "surface_coverage": f"{self.surface_coverage:.6f}",
            "movement_cost": f"{self.movement_cost:.9f}",
            "movement_cost_inclusive": f"{self.movement_cost_inclusive:.9f}",
            "chamfer_after_registration": f"{self.chamfer_after_registration:.9e}",
            "cover_optimality": self.cover_optimality,
            "uncoverable": self.uncoverable,
            "initial_view_id": self.initial_view_id,
            "nbv_id": self.nbv_id,
            "path": " ".join(str(v) for v in self.path),
        }


class SceneVisibility:
    """Per-view visible ground-truth points and voxels, computed once per scene."""

    def __init__(self, ground_truth: PointCloud, views: ViewSpace, resolution: float = 0.004,
                 camera: Camera | None = None):
        self.ground_truth = ground_truth
        self.views = views
        self.resolution = resolution
        self.camera = camera or Camera()
        self.grid = OccupancyGrid.from_cloud(ground_truth, resolution)
        self.keys = voxel_keys(ground_truth.points, resolution)
        _, self.voxel_of_point = np.unique(self.keys, axis=0, return_inverse=True)
        self.voxel_of_point = self.voxel_of_point.reshape(-1)
        self.n_voxels = int(self.voxel_of_point.max()) + 1
        self.point_masks = {}
        for view in views:
            self.point_masks[view.id] = visible_mask(self.grid, ground_truth.points, view, self.camera)
        self.visible_voxels = np.zeros(self.n_voxels, dtype=bool)
        for mask in self.point_masks.values():
            self.visible_voxels[self.voxel_of_point[mask]] = True

    def scan(self, view: View) -> PointCloud:
        return PointCloud(self.ground_truth.points[self.point_masks[view.id]])

    def coverage(self, view_ids) -> float:
        """Percent of view-space-visible ground-truth voxels seen from ``view_ids``."""
        seen = np.zeros(self.n_voxels, dtype=bool)
        for vid in view_ids:
            seen[self.voxel_of_point[self.point_masks[vid]]] = True
        denom = int(self.visible_voxels.sum())
        if denom == 0:
            raise ValueError("no ground-truth voxel is visible from the view space")
        return 100.0 * int((seen & self.visible_voxels).sum()) / denom


def surface_coverage(reconstructed: PointCloud, ground_truth: PointCloud, views: ViewSpace,
                     resolution: float = 0.004, camera: Camera | None = None,
                     scene: SceneVisibility | None = None) -> float:
    """Percent of ground-truth voxels visible from the view space that hold a reconstructed point."""
    if ground_truth.is_empty:
        raise ValueError("ground truth is empty")
    scene = scene or SceneVisibility(ground_truth, views, resolution, camera)
    denom_keys = np.unique(scene.keys[scene.visible_voxels[scene.voxel_of_point]], axis=0)
    if len(denom_keys) == 0:
        raise ValueError("no ground-truth voxel is visible from the view space")
    if reconstructed.is_empty:
        return 0.0
    rec = np.unique(voxel_keys(reconstructed.points, scene.resolution), axis=0)
    both = np.concatenate([denom_keys, rec])
    _, counts = np.unique(both, axis=0, return_counts=True)
    return 100.0 * int((counts > 1).sum()) / len(denom_keys)


def select_initial_view(views: ViewSpace, policy: str, rng: np.random.Generator | None = None) -> View:
    """Initial view for a named elevation band (or a seeded random view)."""
    if policy == "random":
        rng = rng or np.random.default_rng(0)
        return views[int(rng.integers(len(views)))]
    target = np.radians(_POLICY_ELEVATION[policy])
    elev = views.elevations()
    if policy == "near-horizontal":
        # prefer views at or above the horizon
        score = np.abs(elev - target) + np.where(elev < -1e-9, 1e-3, 0.0)
    else:
        score = np.abs(elev - target)
    return views[int(np.argmin(np.round(score, 9)))]


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def run_cycle(config: ExperimentConfig, prior: PointCloud, ground_truth_now: PointCloud,
              views: ViewSpace | None = None, scene: SceneVisibility | None = None,
              keep_artifacts: bool = False) -> MetricsReport:
    timings: dict = {}
    rng = np.random.default_rng(config.seed)
    if views is None:
        views = _stage("view_space", timings, build_view_space, config.view_space, (0.0, 0.0, 0.0),
                       config.radius, config.tammes_seed)
    if scene is None:
        scene = _stage("scene", timings, SceneVisibility, ground_truth_now, views, config.voxel_size)

    v0 = select_initial_view(views, config.initial_view, rng)
    scan0 = scene.scan(v0)
    current_map = _stage("fuse", timings, OccupancyGrid(config.voxel_size).insert_scan, v0.position, scan0)
    visited = [v0]
    scans = [scan0]
    if config.use_nbv:
        v1 = _stage("nbv", timings, next_best_view, current_map, views, {v0.id})
        visited.append(v1)
        scans.append(scene.scan(v1))
    observed = scans[0].concat(*scans[1:])
    if observed.is_empty:
        raise StageError("observe", ValueError("initial observation is empty"))

    reg = _stage("registration", timings, register, prior, observed, config.loss_weights, config.lr, config.iters,
                 config.voxel_size, config.k_edges, config.anchors, seed=config.seed)
    aligned = reg.aligned

    if config.inflation:
        grown = _stage("inflation", timings, inflate, aligned, observed, config.inflation_params)
    else:
        grown = PointCloud.empty()
    approx = assemble_approximation(aligned, observed, grown)

    grid = _stage("voxelize", timings, OccupancyGrid.from_cloud, approx, config.voxel_size)
    surface = grid.extract_surface()
    vis = _stage("visibility", timings, build_visibility, surface, views, grid)
    visited_ids = {v.id for v in visited}
    cover = _stage("set_cover", timings, solve_cover, vis, visited_ids, config.cover_mode, config.cover_time_budget)
    planned = [views[i] for i in cover.selected]
    here = visited[-1]
    path = _stage("path", timings, shortest_hamiltonian_path, here, planned)

    executed = [v.id for v in visited] + list(path.order[1:])
    final_scans = scans + [scene.scan(views[i]) for i in path.order[1:]]
    reconstruction = final_scans[0].concat(*final_scans[1:])
    coverage = scene.coverage(executed)
    hop0 = float(np.linalg.norm(here.position - v0.position))
    report = MetricsReport(
        config=config,
        number_of_views=len(executed),
        surface_coverage=coverage,
        movement_cost=path.total_cost,
        movement_cost_inclusive=path.total_cost + hop0,
        chamfer_after_registration=chamfer_distance(aligned, ground_truth_now),
        initial_view_id=v0.id,
        nbv_id=visited[1].id if len(visited) > 1 else -1,
        selected=cover.selected,
        path=path.order,
        cover_optimality=cover.optimality,
        uncoverable=int(len(vis.uncoverable)),
        timings=timings,
    )
    if keep_artifacts:
        report.artifacts = {
            "observed": observed, "aligned": aligned, "inflation": grown, "approximation": approx,
            "reconstruction": reconstruction, "cover": cover, "path": path, "registration": reg,
            "visibility": vis, "views": views,
        }
    return report


def _scene_for(config: ExperimentConfig, cache: dict | None):
    key = (config.species, config.plant_seed, config.growth, config.rotation_deg, config.view_space,
           config.tammes_seed, config.radius, config.voxel_size)
    if cache is not None and key in cache:
        return cache[key]
    plant = generate_synthetic_plant(config.plant_seed, config.species, config.growth).rotated(config.rotation_deg)
    views = build_view_space(config.view_space, (0.0, 0.0, 0.0), config.radius, config.tammes_seed)
    scene = SceneVisibility(plant.current, views, config.voxel_size)
    out = (plant, views, scene)
    if cache is not None:
        cache[key] = out
    return out


def run_experiment(config: ExperimentConfig, cache: dict | None = None, keep_artifacts: bool = False) -> MetricsReport:
    """Generate the configured synthetic plant pair and run one cycle on it."""
    plant, views, scene = _scene_for(config, cache)
    return run_cycle(config, plant.previous, plant.current, views, scene, keep_artifacts)


def run_matrix(base: ExperimentConfig, species=("maize_like", "tomato_like"), plant_seeds=(0, 1, 2),
               rotations=(0.0, 45.0), initial_views=("near-horizontal", "oblique", "near-top"),
               out_dir=None) -> list[MetricsReport]:
    """Species x plants x rotations x initial views; 36 cases with the defaults."""
    cache: dict = {}
    reports = []
    for sp, ps, rot, iv in product(species, plant_seeds, rotations, initial_views):
        cfg = base.replace(species=sp, plant_seed=ps, rotation_deg=float(rot), initial_view=iv)
        log.info("case %s seed=%d rot=%g init=%s", sp, ps, rot, iv)
        report = run_experiment(cfg, cache, keep_artifacts=out_dir is not None)
        reports.append(report)
        if out_dir is not None:
            write_case(report, Path(out_dir) / f"{sp}_p{ps}_r{int(rot)}_{iv}")
    return reports


def write_case(report: MetricsReport, case_dir: Path) -> None:
    case_dir.mkdir(parents=True, exist_ok=True)
    (case_dir / "config.json").write_text(report.config.to_json())
    art = report.artifacts
    if art:
        for name in ("observed", "aligned", "inflation", "approximation", "reconstruction"):
            if not art[name].is_empty:
                save_cloud(art[name], case_dir / f"{name}.ply")
        (case_dir / "plan.txt").write_text(art["cover"].to_text())
        (case_dir / "path.txt").write_text(art["path"].to_text())
        (case_dir / "loss.csv").write_text(art["registration"].trace_csv())
    (case_dir / "metrics.csv").write_text(metrics_table([report]))


def metrics_table(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def timings_table(reports) -> str:
    stages = sorted({s for r in reports for s in r.timings})
    lines = ["case," + ",".join(stages)]
    for i, r in enumerate(reports):
        lines.append(f"{i}," + ",".join(f"{r.timings.get(s, 0.0):.4f}" for s in stages))
    return "\n".join(lines) + "\n"


def aggregate_table(metrics_csv: str, group_by=("view_space", "species")) -> str:
    """Mean +- standard deviation of the three headline metrics per group."""
    rows = list(csv.DictReader(io.StringIO(metrics_csv)))
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[g] for g in group_by), []).append(row)
    cols = ("number_of_views", "surface_coverage", "movement_cost")
    header = " | ".join([*group_by, "cases", "Number of Views", "Surface Coverage (%)", "Movement Cost (m)"])
    lines = [header, "-" * len(header)]
    for key in sorted(groups):
        vals = [np.array([float(r[c]) for r in groups[key]]) for c in cols]
        cells = [f"{v.mean():.2f} ± {v.std(ddof=1) if len(v) > 1 else 0.0:.2f}" for v in vals]
        lines.append(" | ".join([*key, str(len(groups[key])), *cells]))
    return "\n".join(lines) + "\n"
