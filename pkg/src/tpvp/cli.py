"""Command-line entry points: ``tpvp <subcommand> ...``.

Every subcommand reads and writes plain files (ASCII PLY/XYZ clouds, CSV
tables, small ``key value`` text files), so the stages can be run and
inspected one at a time or chained by ``simulate``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .coverage import CoverSolution, build_visibility, solve_cover
from .geometry import load_cloud, save_cloud
from .inflation import InflationParams, assemble_approximation, inflate
from .occupancy import OccupancyGrid
from .paths import shortest_hamiltonian_path
from .pipeline import (ExperimentConfig, aggregate_table, metrics_table, run_experiment, run_matrix,
                       timings_table, write_case)
from .registration import LossWeights, register
from .views import build_view_space, virtual_scan

log = logging.getLogger("tpvp")

MATRIX_KEYS = ("species", "plant_seeds", "rotations", "initial_views")


def _ids(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _view_space(args):
    return build_view_space(args.viewspace, (0.0, 0.0, 0.0), args.radius, args.tammes_seed)


def _add_view_space_args(p):
    p.add_argument("--viewspace", default="sphere", choices=("sphere", "hemisphere"))
    p.add_argument("--radius", type=float, default=0.4)
    p.add_argument("--tammes-seed", type=int, default=0)


def cmd_viewspace(args):
    text = _view_space(args).to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_scan(args):
    views = _view_space(args)
    gt = load_cloud(args.ground_truth)
    scan = virtual_scan(gt, views[args.view], resolution=args.voxel)
    save_cloud(scan, args.out)
    log.info("view %d: %d of %d points", args.view, len(scan), len(gt))


def cmd_register(args):
    source, target = load_cloud(args.source), load_cloud(args.target)
    weights = LossWeights(*args.lambdas)
    result = register(source, target, weights, lr=args.lr, iters=args.iters, voxel_size=args.voxel,
                      anchors=args.anchors, seed=args.seed)
    save_cloud(result.aligned, args.out)
    if args.trace:
        Path(args.trace).write_text(result.trace_csv())
    log.info("loss %.6g -> %.6g (best iteration %d)", result.initial_loss, result.final_loss, result.best_iteration)


def cmd_inflate(args):
    prior, scan = load_cloud(args.prior), load_cloud(args.scan)
    grown = inflate(prior, scan, InflationParams(args.gamma_near, args.gamma_far, args.voxel))
    out = grown if args.only_inflation else assemble_approximation(prior, scan, grown)
    save_cloud(out, args.out)
    log.info("%d inflation points, %d written", len(grown), len(out))


def cmd_plan(args):
    approx = load_cloud(args.inflated)
    views = _view_space(args)
    grid = OccupancyGrid.from_cloud(approx, args.voxel)
    vis = build_visibility(grid.extract_surface(), views, grid)
    if len(vis.uncoverable):
        log.warning("%d surface voxels are not visible from any view", len(vis.uncoverable))
    cover = solve_cover(vis, set(_ids(args.visited)), args.mode, args.time_budget)
    Path(args.out).write_text(cover.to_text())
    log.info("%d views (%s)", cover.objective, cover.optimality)


def cmd_path(args):
    views = _view_space(args)
    selected = [views[i] for i in CoverSolution.read_views(Path(args.views).read_text()) if i != args.start]
    path = shortest_hamiltonian_path(views[args.start], selected)
    Path(args.out).write_text(path.to_text())
    log.info("total cost %.4f m over %d views (%s)", path.total_cost, len(selected), path.method)


def load_config(path) -> tuple[ExperimentConfig, dict | None]:
    """JSON object of ExperimentConfig fields plus an optional ``matrix`` block."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    matrix = data.pop("matrix", None)
    if matrix is not None:
        unknown = set(matrix) - set(MATRIX_KEYS)
        if unknown:
            raise ValueError(f"{path}: unknown matrix keys {sorted(unknown)}")
    return ExperimentConfig.from_dict(data), matrix


def cmd_simulate(args):
    config, matrix = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if matrix is None:
        reports = [run_experiment(config, keep_artifacts=True)]
        write_case(reports[0], out / "case")
    else:
        reports = run_matrix(config, out_dir=out, **matrix)
    (out / "config.json").write_text(json.dumps({**json.loads(config.to_json()),
                                                 **({"matrix": matrix} if matrix else {})}, indent=2))
    (out / "metrics.csv").write_text(metrics_table(reports))
    (out / "timings.csv").write_text(timings_table(reports))
    for r in reports:
        c = r.config
        log.info("%s seed=%d rot=%g %s: %d views, %.2f%% coverage, %.3f m", c.species, c.plant_seed,
                 c.rotation_deg, c.initial_view, r.number_of_views, r.surface_coverage, r.movement_cost)


def cmd_report(args):
    results = Path(args.results)
    tables = [results / "metrics.csv"] if (results / "metrics.csv").exists() else sorted(results.rglob("metrics.csv"))
    if not tables:
        raise FileNotFoundError(f"no metrics.csv under {results}")
    header, rows = None, []
    for t in tables:
        lines = t.read_text().splitlines()
        header = header or lines[0]
        rows += lines[1:]
    text = aggregate_table("\n".join([header, *rows]) + "\n")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpvp", description="Temporal-prior view planning simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("viewspace", help="print the candidate view poses")
    _add_view_space_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_viewspace)

    p = sub.add_parser("scan", help="virtual scan of a ground-truth cloud from one view")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--voxel", type=float, default=0.004)
    p.add_argument("--out", required=True)
    _add_view_space_args(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("register", help="non-rigid registration of a prior onto a scan")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--lambdas", type=float, nargs=3, default=(1.0, 0.1, 0.01), metavar=("ARAP", "CD", "LAP"))
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--voxel", type=float, default=0.004)
    p.add_argument("--anchors", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("inflate", help="add growth candidates near the scan and far from the prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--only-inflation", action="store_true", help="write only the inflation points")
    p.add_argument("--gamma-near", type=float, default=0.003)
    p.add_argument("--gamma-far", type=float, default=0.005)
    p.add_argument("--voxel", type=float, default=0.004)
    p.set_defaults(func=cmd_inflate)

    p = sub.add_parser("plan", help="minimum set of views covering the approximation surface")
    p.add_argument("--inflated", required=True)
    p.add_argument("--visited", default="")
    p.add_argument("--mode", choices=("exact", "greedy"), default="exact")
    p.add_argument("--time-budget", type=float, default=10.0)
    p.add_argument("--voxel", type=float, default=0.004)
    p.add_argument("--out", required=True)
    _add_view_space_args(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("path", help="shortest open path through the planned views")
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--views", required=True, help="plan file")
    p.add_argument("--out", required=True)
    _add_view_space_args(p)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("simulate", help="run one experiment or a test matrix from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="mean +- std table from a results directory")
    p.add_argument("results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"tpvp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
