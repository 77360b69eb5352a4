"""Command line entry point: ``dispgrid <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import DispgridError, StageError
from .evaluation import evaluate_against_truth, format_text_report, write_metrics
from .grid import AdminLevel, units_at
from .pipeline import _stage, execute, export_outputs, ingest, load_config, read_placements, run_pipeline
from .synthetic import WorldConfig, generate_synthetic, read_truth, write_world
from .weights import assign_buildings, build_proportion_matrix

logger = logging.getLogger("dispgrid")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--min-confidence", type=float, help="minimum building detection confidence (default 0)")
    p.add_argument("--threshold", type=float, help="fuzzy match acceptance threshold in percent (default 80)")
    p.add_argument("--alpha", type=float, help="label spreading clamping factor (default 0.9)")
    p.add_argument("--kernel", choices=["rbf", "knn"], help="similarity kernel (default rbf)")
    p.add_argument("--split", type=float, help="training fraction of labeled records (default 0.8)")
    p.add_argument("--workers", type=int, help="threads for per-admin2 solves (default 1)")
    p.add_argument("--admin", help="admin boundary GeoJSON (overrides config)")
    p.add_argument("--buildings", help="buildings CSV (overrides config)")
    p.add_argument("--settlements", help="settlements CSV (overrides config)")
    p.add_argument("--records", help="records CSV (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="dispgrid", description="Grid-level disaggregation of displacement records")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate and summarise inputs")
    sub.add_parser("weights", parents=[common], help="emit the building proportion matrix")
    sub.add_parser("resolve", parents=[common], help="emit the origin resolution report")
    sub.add_parser("run", parents=[common], help="run the full pipeline")
    ev = sub.add_parser("evaluate", parents=[common], help="score saved placements against truth")
    ev.add_argument("--placements", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--resolved", help="resolved.csv from a run, for per-admin2 accuracy")
    sy = sub.add_parser("synth", parents=[common], help="generate a synthetic world")
    sy.add_argument("--units", type=int, default=10)
    sy.add_argument("--cells-per-unit", type=int, default=3)
    sy.add_argument("--buildings-per-unit", type=int, default=500)
    sy.add_argument("--records-per-unit", type=int, default=1000)
    sy.add_argument("--hidden-fraction", type=float, default=0.5)
    sy.add_argument("--signal", type=float, default=0.0, help="demographic signal strength in [0, 1]")
    sy.add_argument("--typo-rate", type=float, default=0.0)
    sy.add_argument("--admin1-only-rate", type=float, default=0.0)
    sy.add_argument("--single-cell-units", type=int, default=0)
    sy.add_argument("--empty-units", type=int, default=0)
    return parser


def _config(args):
    return load_config(
        args.config,
        seed=args.seed,
        out_dir=args.out,
        min_confidence=args.min_confidence,
        threshold=args.threshold,
        alpha=args.alpha,
        kernel=args.kernel,
        split=args.split,
        workers=args.workers,
        admin=args.admin,
        buildings=args.buildings,
        settlements=args.settlements,
        records=args.records,
    )


def _need_out(cfg) -> Path:
    if not cfg.out_dir:
        raise StageError("config", None, DispgridError("--out (or [output] dir) is required"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    cfg = _config(args)
    inputs = _stage("ingest", ingest, cfg)
    summary = {
        "admin_units": {lvl.value: len(units_at(inputs.units, lvl)) for lvl in AdminLevel},
        "buildings": len(inputs.buildings),
        "settlements": len(inputs.settlements),
        "records": len(inputs.records),
        "input_digests": inputs.digests,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_weights(args) -> int:
    cfg = _config(args)
    out = _need_out(cfg)
    inputs = _stage("ingest", ingest, cfg)
    admin2 = units_at(inputs.units, AdminLevel.ADMIN2)
    assignments, report = _stage("weights", assign_buildings, inputs.buildings, admin2, cfg.grid, cfg.min_confidence)
    matrix, missing = build_proportion_matrix(assignments, [u.canonical_id for u in admin2])
    matrix.write_wide_csv(out / "proportions_wide.csv")
    matrix.write_long_csv(out / "proportions_long.csv")
    print(f"{len(matrix.rows)} admin2 rows over {len(matrix.cols)} cells; "
          f"{report.included}/{report.total} buildings counted; {len(missing)} admin2 without buildings")
    return 0


def cmd_resolve(args) -> int:
    cfg = _config(args)
    out = _need_out(cfg)
    result = execute(_stage("ingest", ingest, cfg), cfg)
    with open(out / "resolved.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "admin2_id", "resolution_method", "settlement"])
        for r in result.resolved:
            w.writerow([r.record_id, r.admin2_id, r.resolution_method, r.admin3_settlement.name if r.admin3_settlement else ""])
    with open(out / "rejected.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "reason"])
        w.writerows(sorted(result.rejected))
    print(f"{len(result.resolved)} resolved, {len(result.rejected)} rejected")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    _need_out(cfg)
    result = run_pipeline(cfg)
    print(format_text_report(result.reports), end="")
    print(f"placements written to {cfg.out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    placements = read_placements(args.placements)
    truth = read_truth(args.truth)
    admin2_of = None
    if args.resolved:
        with open(args.resolved, newline="", encoding="utf-8") as fh:
            admin2_of = {row["record_id"]: row["admin2_id"] for row in csv.DictReader(fh)}
    reports = evaluate_against_truth(placements, truth, admin2_of)
    print(format_text_report(reports), end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_metrics(Path(args.out) / "evaluation.json", reports)
    return 0


def cmd_synth(args) -> int:
    if not args.out:
        raise StageError("synth", None, DispgridError("--out is required"))
    world_cfg = WorldConfig(
        n_units=args.units,
        cells_per_unit=args.cells_per_unit,
        buildings_per_unit=args.buildings_per_unit,
        records_per_unit=args.records_per_unit,
        hidden_fraction=args.hidden_fraction,
        signal_strength=args.signal,
        typo_rate=args.typo_rate,
        admin1_only_rate=args.admin1_only_rate,
        single_cell_units=args.single_cell_units,
        empty_units=args.empty_units,
    )
    world = generate_synthetic(world_cfg, args.seed or 0)
    paths = write_world(world, args.out)
    print(f"wrote {len(world.records)} records, {len(world.buildings)} buildings to {paths['config'].parent}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "weights": cmd_weights,
    "resolve": cmd_resolve,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: stage {exc.stage}" + (f" [{exc.entity}]" if exc.entity else "") + f": {exc.cause}", file=sys.stderr)
        return 2
    except DispgridError as exc:
        print(f"error: stage {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
