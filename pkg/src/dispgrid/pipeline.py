"""End-to-end orchestration: ingest, resolve, weight, partition, solve, aggregate, export."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__
from .errors import ConfigurationError, DispgridError, IntegrityError, StageError
from .evaluation import COMBINED, MODELED_ONLY, MetricsReport, both_reports, format_text_report, write_metrics
from .grid import AdminLevel, AdminLocator, AdminUnit, GeoPoint, GridCellId, GridSpec, intersection_areas, load_admin_units, units_at
from .matching import MatchConfig, build_admin_index
from .records import (
    ADMIN3_DETERMINISTIC,
    MODELED,
    SINGLE_CELL_DETERMINISTIC,
    DisplacementRecord,
    Partition,
    PlacementResult,
    ResolvedRecord,
    Settlement,
    partition_for_modeling,
    read_records_csv,
    read_settlements_csv,
    resolve_records,
)
from .spreading import AttributeSchema, Kernel, SpreadConfig, ValidationReport, admin2_rng, solve_admin2
from .weights import AssignmentReport, ProportionMatrix, assign_buildings, build_proportion_matrix, read_buildings_csv

logger = logging.getLogger(__name__)

INPUT_KEYS = ("admin", "buildings", "settlements", "records")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    matching: MatchConfig = field(default_factory=MatchConfig)
    model: SpreadConfig = field(default_factory=SpreadConfig)
    min_confidence: float = 0.0
    inputs: Mapping[str, Optional[str]] = field(default_factory=dict)
    out_dir: Optional[str] = None
    extent: Optional[tuple[float, float, float, float]] = None
    workers: int = 1

    @property
    def seed(self) -> int:
        return self.model.seed

    def describe(self) -> dict:
        """Config as plain data for the manifest; the output directory is left out."""
        model = self.model
        return {
            "grid": asdict(self.grid),
            "matching": asdict(self.matching),
            "model": {
                "alpha": model.alpha,
                "kernel": asdict(model.kernel),
                "tol": model.tol,
                "max_iter": model.max_iter,
                "train_fraction": model.train_fraction,
                "seed": model.seed,
                "attributes": list(model.schema.attributes),
                "year_range": list(model.schema.year_range) if model.schema.year_range else None,
            },
            "min_confidence": self.min_confidence,
            "extent": list(self.extent) if self.extent else None,
            "inputs": {k: (Path(v).name if v else None) for k, v in sorted(self.inputs.items())},
        }


def _get(section, key, conv, default):
    if section is None or key not in section or section[key].strip() == "":
        return default
    try:
        return conv(section[key])
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from None


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path: Optional[str | Path] = None, **overrides) -> PipelineConfig:
    """Read an INI config; relative input paths resolve against the config's folder.

    Keyword overrides (``seed``, ``out_dir``, ``min_confidence``, ``threshold``, ``alpha``,
    ``kernel``, ``split``, ``workers``) win over file values when not None.
    """
    ini = configparser.ConfigParser()
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} not found")
        ini.read(path, encoding="utf-8")
        base = path.parent
    sec = lambda name: ini[name] if ini.has_section(name) else None  # noqa: E731

    g = sec("grid")
    grid = GridSpec(
        origin_lon=_get(g, "origin_lon", float, -180.0),
        origin_lat=_get(g, "origin_lat", float, -90.0),
        cell_size=_get(g, "cell_size", float, 0.5),
        n_cols=_get(g, "n_cols", int, 720),
        n_rows=_get(g, "n_rows", int, 360),
    )
    extent = _get(g, "extent", lambda s: tuple(float(v) for v in s.split(",")), None)
    if extent is not None and len(extent) != 4:
        raise ConfigurationError("extent needs four numbers: west,south,east,north")

    m = sec("matching")
    matching = MatchConfig(
        threshold=overrides.get("threshold") if overrides.get("threshold") is not None else _get(m, "threshold", float, 80.0),
        normalize=_get(m, "normalize", _bool, True),
        strip_diacritics=_get(m, "strip_diacritics", _bool, True),
    )

    md = sec("model")
    year_min, year_max = _get(md, "year_min", int, None), _get(md, "year_max", int, None)
    attrs = _get(md, "attributes", lambda s: tuple(a.strip() for a in s.split(",") if a.strip()), None)
    schema = AttributeSchema(
        attributes=attrs if attrs is not None else AttributeSchema().attributes,
        year_range=(year_min, year_max) if year_min is not None and year_max is not None else None,
        use_year=_get(md, "use_year", _bool, True),
    )
    kernel = Kernel(
        kind=overrides.get("kernel") or _get(md, "kernel", str, "rbf"),
        gamma=_get(md, "gamma", lambda v: None if v.strip().lower() == "auto" else float(v), None),
        k=_get(md, "k", int, 10),
    )
    pick = lambda key, conv, default: overrides[key] if overrides.get(key) is not None else _get(md, key, conv, default)  # noqa: E731
    model = SpreadConfig(
        alpha=pick("alpha", float, 0.9),
        kernel=kernel,
        tol=_get(md, "tol", float, 1e-6),
        max_iter=_get(md, "max_iter", int, 1000),
        train_fraction=pick("split", float, 0.8),
        seed=pick("seed", int, 0),
        schema=schema,
    )

    inp = sec("inputs")
    inputs = {}
    for key in INPUT_KEYS:
        value = _get(inp, key, str, None)
        inputs[key] = str((base / value) if value and not Path(value).is_absolute() else value) if value else None
    for key in INPUT_KEYS:
        if overrides.get(key):
            inputs[key] = str(overrides[key])

    out_dir = overrides.get("out_dir") or _get(sec("output"), "dir", str, None)
    min_conf = overrides.get("min_confidence")
    if min_conf is None:
        min_conf = _get(sec("buildings"), "min_confidence", float, 0.0)
    if not 0.0 <= min_conf <= 1.0:
        raise ConfigurationError("min_confidence must lie in [0, 1]")
    workers = overrides.get("workers") or _get(sec("run"), "workers", int, 1)
    return PipelineConfig(grid, matching, model, min_conf, inputs, out_dir, extent, workers)


@dataclass
class PipelineInputs:
    units: list[AdminUnit]
    buildings: list[GeoPoint]
    settlements: list[Settlement]
    records: list[DisplacementRecord]
    digests: dict[str, Optional[str]] = field(default_factory=dict)


def _digest(path: Optional[str]) -> Optional[str]:
    if not path:
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest(cfg: PipelineConfig) -> PipelineInputs:
    paths = cfg.inputs
    if not paths.get("admin"):
        raise ConfigurationError("an admin boundary file is required")
    for key, p in paths.items():
        if p and not Path(p).is_file():
            raise ConfigurationError(f"input {key} not found: {p}")
    return PipelineInputs(
        units=load_admin_units(paths["admin"]),
        buildings=read_buildings_csv(paths["buildings"]) if paths.get("buildings") else [],
        settlements=read_settlements_csv(paths["settlements"]) if paths.get("settlements") else [],
        records=read_records_csv(paths["records"]) if paths.get("records") else [],
        digests={k: _digest(paths.get(k)) for k in INPUT_KEYS},
    )


@dataclass
class GriddedCounts:
    counts: dict[tuple[GridCellId, int], int]
    extent_cells: Optional[int] = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def cell_totals(self) -> dict[GridCellId, int]:
        out: Counter = Counter()
        for (cell, _), n in self.counts.items():
            out[cell] += n
        return dict(sorted(out.items()))

    @property
    def occupied_cells(self) -> int:
        return len({cell for (cell, _), n in self.counts.items() if n > 0})

    @property
    def occupied_fraction(self) -> Optional[float]:
        if not self.extent_cells:
            return None
        return self.occupied_cells / self.extent_cells


def aggregate_counts(
    placements: Iterable[PlacementResult],
    records: Mapping[str, DisplacementRecord] | Iterable[DisplacementRecord],
    extent_cells: Optional[int] = None,
) -> GriddedCounts:
    if not isinstance(records, Mapping):
        records = {r.record_id: r for r in records}
    counts: Counter = Counter()
    for p in placements:
        rec = records.get(p.record_id)
        if rec is None:
            raise IntegrityError(f"placement for unknown record {p.record_id!r}")
        counts[(p.cell, rec.year)] += 1
    return GriddedCounts(dict(sorted(counts.items())), extent_cells)


@dataclass
class RunResult:
    placements: list[PlacementResult]
    counts: GriddedCounts
    reports: dict[str, Optional[MetricsReport]]
    manifest: dict
    matrix: ProportionMatrix
    partition: Partition
    resolved: list[ResolvedRecord]
    rejected: list[tuple[str, str]]
    validation: list[ValidationReport]


def _stage(name: str, fn, *args, entity: Optional[str] = None, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (DispgridError, ValueError, OSError, KeyError) as exc:
        raise StageError(name, entity or getattr(exc, "entity", None), exc) from exc


def _assign_settlement_admin2(settlements: Sequence[Settlement], locator: AdminLocator) -> list[Settlement]:
    out = []
    for s in settlements:
        if s.admin2_id is None:
            s = replace(s, admin2_id=locator.locate(s.location))
        out.append(s)
    return out


def _fallback_placements(records: Sequence[ResolvedRecord], unit: AdminUnit, g: GridSpec, seed: int) -> list[PlacementResult]:
    areas = intersection_areas(unit, g)
    if not areas:
        raise IntegrityError(f"admin2 {unit.canonical_id} does not overlap the grid")
    cells = sorted(areas)
    total = sum(areas.values())
    shares = [areas[c] / total for c in cells]
    rng = admin2_rng(seed, unit.canonical_id)
    picks = rng.choice(len(cells), size=len(records), p=shares)
    return [
        PlacementResult(r.record_id, cells[j], MODELED, float(shares[j]), fallback=True, admin2_id=unit.canonical_id)
        for r, j in zip(sorted(records, key=lambda r: r.record_id), picks)
    ]


def _extent_cell_count(cfg: PipelineConfig, admin2_units: Sequence[AdminUnit]) -> int:
    g = cfg.grid
    if cfg.extent is not None:
        west, south, east, north = cfg.extent
        cols = max(0, min(g.n_cols, math.ceil((east - g.origin_lon) / g.cell_size)) - max(0, math.floor((west - g.origin_lon) / g.cell_size)))
        rows = max(0, min(g.n_rows, math.ceil((north - g.origin_lat) / g.cell_size)) - max(0, math.floor((south - g.origin_lat) / g.cell_size)))
        return cols * rows
    cells: set[GridCellId] = set()
    for u in admin2_units:
        cells.update(intersection_areas(u, g))
    return len(cells)


def execute(inputs: PipelineInputs, cfg: PipelineConfig) -> RunResult:
    """Run every stage after ingestion, in memory."""
    g = cfg.grid
    admin2_units = units_at(inputs.units, AdminLevel.ADMIN2)
    units_by_id = {u.canonical_id: u for u in admin2_units}

    locator = _stage("match", AdminLocator, admin2_units)
    settlements = _stage("match", _assign_settlement_admin2, inputs.settlements, locator)
    index = _stage("match", build_admin_index, inputs.units, settlements)
    resolved, rejected = _stage("match", resolve_records, inputs.records, index, settlements, cfg.matching)

    assignments, building_report = _stage("weights", assign_buildings, inputs.buildings, admin2_units, g, cfg.min_confidence)
    matrix, empty_admin2 = _stage("weights", build_proportion_matrix, assignments, [u.canonical_id for u in admin2_units])

    partition = _stage("partition", partition_for_modeling, resolved, settlements, matrix, g, cfg.matching)

    def solve(item):
        admin2, subset = item
        return _stage("solve", solve_admin2, subset.labeled, subset.unlabeled, matrix.row(admin2), cfg.model, admin2, entity=admin2)

    items = list(partition.modeling_sets.items())
    if cfg.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            solved = list(pool.map(solve, items))
    else:
        solved = [solve(item) for item in items]

    placements = list(partition.deterministic)
    validation = []
    outcomes = []
    for (admin2, subset), (modeled, report) in zip(items, solved):
        placements.extend(
            PlacementResult(r.record_id, cell, ADMIN3_DETERMINISTIC, 1.0, admin2_id=admin2) for r, cell in subset.labeled
        )
        placements.extend(modeled)
        validation.append(report)
        outcomes.extend((admin2, t, p) for _, t, p in report.outcomes)
    for admin2, recs in partition.fallback.items():
        placements.extend(_stage("reintegrate", _fallback_placements, recs, units_by_id[admin2], g, cfg.seed, entity=admin2))
    placements.sort(key=lambda p: p.record_id)
    if len({p.record_id for p in placements}) != len(placements) or len(placements) != len(resolved):
        raise StageError("reintegrate", None, IntegrityError("placements do not match resolved records one-to-one"))

    records_by_id = {r.record_id: r for r in inputs.records}
    extent_cells = _stage("aggregate", _extent_cell_count, cfg, admin2_units)
    counts = _stage("aggregate", aggregate_counts, placements, records_by_id, extent_cells)
    reports = both_reports(outcomes, [(p.admin2_id, p.cell) for p in partition.deterministic])

    manifest = build_manifest(cfg, inputs, placements, rejected, partition, building_report, empty_admin2, validation, counts)
    return RunResult(placements, counts, reports, manifest, matrix, partition, resolved, rejected, validation)


def build_manifest(cfg, inputs, placements, rejected, partition, building_report: AssignmentReport, empty_admin2, validation, counts) -> dict:
    by_method = Counter(p.method for p in placements)
    return {
        "version": __version__,
        "config": cfg.describe(),
        "seed": cfg.seed,
        "input_digests": dict(sorted(inputs.digests.items())),
        "records": {
            "input": len(inputs.records),
            "resolved": len(placements),
            "rejected": len(rejected),
            "rejected_by_reason": dict(sorted(Counter(r for _, r in rejected).items())),
        },
        "placements": {
            ADMIN3_DETERMINISTIC: by_method.get(ADMIN3_DETERMINISTIC, 0),
            SINGLE_CELL_DETERMINISTIC: by_method.get(SINGLE_CELL_DETERMINISTIC, 0),
            MODELED: sum(1 for p in placements if p.method == MODELED and not p.fallback),
            "fallback": sum(1 for p in placements if p.fallback),
        },
        "partition": partition.sizes(),
        "support_violations": len(partition.support_violations),
        "buildings": {
            "total": building_report.total,
            "included": building_report.included,
            "below_confidence": building_report.below_confidence,
            "outside_admin2": building_report.outside,
            "off_support": building_report.off_support,
        },
        "admin2_without_buildings": list(empty_admin2),
        "grid": {
            "placed": counts.total,
            "occupied_cells": counts.occupied_cells,
            "extent_cells": counts.extent_cells,
            "occupied_fraction": counts.occupied_fraction,
        },
        "validation": [v.to_dict() for v in validation],
    }


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_placements(path, placements: Iterable[PlacementResult]) -> None:
    _write_csv(
        Path(path),
        ["record_id", "grid_id", "method", "score", "fallback"],
        ([p.record_id, str(p.cell), p.method, repr(float(p.score)), "true" if p.fallback else "false"] for p in placements),
    )


def read_placements(path) -> list[PlacementResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            PlacementResult(row["record_id"], GridCellId.parse(row["grid_id"]), row["method"], float(row["score"]), row["fallback"] == "true")
            for row in csv.DictReader(fh)
        ]


def cells_geojson(counts: GriddedCounts, g: GridSpec) -> dict:
    features = []
    for cell, total in counts.cell_totals().items():
        west, south, east, north = g.cell_bounds(cell)
        ring = [[west, south], [east, south], [east, north], [west, north], [west, south]]
        features.append({
            "type": "Feature",
            "properties": {"grid_id": str(cell), "count": total},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return {"type": "FeatureCollection", "features": features}


def export_outputs(
    placements: Sequence[PlacementResult],
    counts: GriddedCounts,
    reports: Mapping[str, Optional[MetricsReport]],
    matrix: ProportionMatrix,
    out_dir: str | Path,
    grid: GridSpec = GridSpec(),
    manifest: Optional[dict] = None,
    rejected: Sequence[tuple[str, str]] = (),
    resolved: Sequence[ResolvedRecord] = (),
) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "placements": out / "placements.csv",
            "counts": out / "gridded_counts.csv",
            "proportions_wide": out / "proportions_wide.csv",
            "proportions_long": out / "proportions_long.csv",
            "metrics": out / "metrics.json",
            "metrics_text": out / "metrics.txt",
            "cells": out / "grid_cells.geojson",
            "rejected": out / "rejected.csv",
            "resolved": out / "resolved.csv",
        }
        write_placements(files["placements"], placements)
        _write_csv(files["counts"], ["grid_id", "year", "count"], ([str(c), y, n] for (c, y), n in sorted(counts.counts.items())))
        matrix.write_wide_csv(files["proportions_wide"])
        matrix.write_long_csv(files["proportions_long"])
        extra = {
            "per_admin2_accuracy": {
                mode: (sorted(r.per_admin2.items()) if r is not None else []) for mode, r in reports.items()
            }
        }
        write_metrics(files["metrics"], dict(reports), extra)
        files["metrics_text"].write_text(format_text_report(dict(reports)), encoding="utf-8")
        with open(files["cells"], "w", encoding="utf-8") as fh:
            json.dump(cells_geojson(counts, grid), fh, indent=1)
            fh.write("\n")
        _write_csv(files["rejected"], ["record_id", "reason"], sorted(rejected))
        _write_csv(
            files["resolved"],
            ["record_id", "admin2_id", "resolution_method", "settlement"],
            ([r.record_id, r.admin2_id, r.resolution_method, r.admin3_settlement.name if r.admin3_settlement else ""]
             for r in sorted(resolved, key=lambda r: r.record_id)),
        )
        if manifest is not None:
            files["manifest"] = out / "manifest.json"
            with open(files["manifest"], "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
                fh.write("\n")
    except OSError as exc:
        raise StageError("export", str(getattr(exc, "filename", out)), exc) from exc
    return files


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    inputs = _stage("ingest", ingest, cfg)
    result = execute(inputs, cfg)
    if cfg.out_dir:
        export_outputs(
            result.placements, result.counts, result.reports, result.matrix, cfg.out_dir,
            grid=cfg.grid, manifest=result.manifest, rejected=result.rejected, resolved=result.resolved,
        )
    return result
