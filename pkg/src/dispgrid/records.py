"""Record cleaning, origin resolution and routing into the three placement datasets.

Resolved records go to exactly one of:

* ``deterministic`` - placed without a model, either through a matched settlement
  (admin3) or because the admin2's buildings all sit in one cell;
* ``modeling_sets[admin2].labeled`` / ``.unlabeled`` - multi-cell admin2 units,
  where settlement-placed records become training labels;
* ``fallback[admin2]`` - admin2 units without any buildings, placed later by
  area-weighted sampling.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import InputError
from .grid import GeoPoint, GridCellId, GridSpec, point_to_cell
from .matching import AdminIndex, MatchConfig, normalize_name, passes_threshold, resolve_origin, similarity_ratio
from .weights import ProportionMatrix

logger = logging.getLogger(__name__)

CORE_COLUMNS = ("record_id", "origin_country", "admin1", "admin2", "admin3", "admin4", "year")

ADMIN3_DETERMINISTIC = "admin3_deterministic"
SINGLE_CELL_DETERMINISTIC = "single_cell_deterministic"
MODELED = "modeled"


@dataclass(frozen=True)
class DisplacementRecord:
    record_id: str
    origin_country: str
    admin1_raw: Optional[str]
    admin2_raw: Optional[str]
    admin3_raw: Optional[str]
    year: int
    attributes: Mapping[str, str] = field(default_factory=dict, hash=False)
    admin4_raw: Optional[str] = None


@dataclass(frozen=True)
class Settlement:
    name: str
    location: GeoPoint
    admin2_id: Optional[str] = None

    @property
    def sort_key(self) -> tuple:
        return (self.name, self.location.lon, self.location.lat)

    @property
    def key(self) -> str:
        return f"{self.name}@{self.location.lon!r},{self.location.lat!r}"


@dataclass(frozen=True)
class ResolvedRecord:
    record: DisplacementRecord
    admin2_id: str
    admin3_settlement: Optional[Settlement]
    resolution_method: str  # exact | fuzzy | cascade_admin3 | cascade_admin4

    @property
    def record_id(self) -> str:
        return self.record.record_id


@dataclass(frozen=True)
class PlacementResult:
    record_id: str
    cell: GridCellId
    method: str
    score: float
    fallback: bool = False
    admin2_id: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"{self.record_id}: score {self.score} outside [0, 1]")
        if self.method != MODELED and self.score != 1.0:
            raise ValueError(f"{self.record_id}: deterministic placements carry score 1")


def _blank(value: Optional[str]) -> bool:
    return value is None or not value.strip()


def match_settlement(
    query: Optional[str],
    settlements: Sequence[Settlement],
    admin2_id: Optional[str],
    cfg: MatchConfig = MatchConfig(),
) -> Optional[Settlement]:
    """Best settlement for a raw admin3 name, scoped to ``admin2_id`` where settlements know theirs.

    Ties go to the higher ratio, then the smaller ``(name, lon, lat)``.
    """
    if _blank(query):
        return None
    q = normalize_name(query, cfg)
    best, best_key = None, None
    for s in settlements:
        if s.admin2_id is not None and admin2_id is not None and s.admin2_id != admin2_id:
            continue
        n = normalize_name(s.name, cfg)
        ratio = 100.0 if n == q else similarity_ratio(q, n)
        if not passes_threshold(ratio, cfg.threshold):
            continue
        key = (-ratio, s.sort_key)
        if best_key is None or key < best_key:
            best, best_key = s, key
    return best


_METHOD_BY_LEVEL = {"admin3": "cascade_admin3", "admin4": "cascade_admin4"}


def resolve_records(
    records: Iterable[DisplacementRecord],
    admin_index: AdminIndex,
    settlements: Sequence[Settlement] = (),
    cfg: MatchConfig = MatchConfig(),
) -> tuple[list[ResolvedRecord], list[tuple[str, str]]]:
    """Resolve each record's origin to an admin2 unit.

    Rejection reasons: ``unknown_country``, ``no_admin2`` (no name below admin1),
    ``below_threshold`` (names present but nothing matched).
    """
    resolved, rejected = [], []
    origin_cache: dict[tuple, object] = {}
    settlement_cache: dict[tuple, Optional[Settlement]] = {}
    countries = admin_index.countries
    seen = set()
    for rec in sorted(records, key=lambda r: r.record_id):
        if rec.record_id in seen:
            raise InputError(f"duplicate record_id {rec.record_id!r}")
        seen.add(rec.record_id)
        if rec.origin_country not in countries:
            rejected.append((rec.record_id, "unknown_country"))
            continue
        names = (rec.admin2_raw, rec.admin3_raw, rec.admin4_raw)
        if all(_blank(n) for n in names):
            rejected.append((rec.record_id, "no_admin2"))
            continue
        key = (rec.origin_country, rec.admin1_raw, *names)
        if key not in origin_cache:
            origin_cache[key] = resolve_origin(names, admin_index, rec.origin_country, cfg, admin1_raw=rec.admin1_raw)
        hit = origin_cache[key]
        if hit is None:
            rejected.append((rec.record_id, "below_threshold"))
            continue
        method = _METHOD_BY_LEVEL.get(hit.level, hit.match.method)
        skey = (hit.admin2_id, rec.admin3_raw)
        if skey not in settlement_cache:
            settlement_cache[skey] = match_settlement(rec.admin3_raw, settlements, hit.admin2_id, cfg)
        resolved.append(ResolvedRecord(rec, hit.admin2_id, settlement_cache[skey], method))
    return resolved, rejected


def place_admin3(
    r: ResolvedRecord,
    settlements: Sequence[Settlement],
    g: GridSpec,
    cfg: MatchConfig = MatchConfig(),
) -> Optional[PlacementResult]:
    settlement = r.admin3_settlement
    if settlement is None:
        settlement = match_settlement(r.record.admin3_raw, settlements, r.admin2_id, cfg)
    if settlement is None:
        return None
    return PlacementResult(r.record_id, point_to_cell(settlement.location, g), ADMIN3_DETERMINISTIC, 1.0, admin2_id=r.admin2_id)


def place_single_cell(r: ResolvedRecord, m: ProportionMatrix) -> Optional[PlacementResult]:
    """Deterministic placement for admin2 units whose buildings share one cell.

    Returns None both for multi-cell units and for units missing from the matrix;
    :func:`needs_fallback` separates the two.
    """
    if r.admin2_id not in m:
        return None
    row = m.row(r.admin2_id)
    if len(row) != 1:
        return None
    return PlacementResult(r.record_id, row[0][0], SINGLE_CELL_DETERMINISTIC, 1.0, admin2_id=r.admin2_id)


def needs_fallback(r: ResolvedRecord, m: ProportionMatrix) -> bool:
    return r.admin2_id not in m


@dataclass
class ModelingSet:
    labeled: list[tuple[ResolvedRecord, GridCellId]] = field(default_factory=list)
    unlabeled: list[ResolvedRecord] = field(default_factory=list)


@dataclass
class Partition:
    deterministic: list[PlacementResult]
    modeling_sets: dict[str, ModelingSet]
    fallback: dict[str, list[ResolvedRecord]]
    support_violations: list[str]

    def sizes(self) -> dict[str, int]:
        return {
            "deterministic": len(self.deterministic),
            "labeled": sum(len(s.labeled) for s in self.modeling_sets.values()),
            "unlabeled": sum(len(s.unlabeled) for s in self.modeling_sets.values()),
            "fallback": sum(len(v) for v in self.fallback.values()),
        }


def partition_for_modeling(
    resolved: Iterable[ResolvedRecord],
    settlements: Sequence[Settlement],
    m: ProportionMatrix,
    g: GridSpec,
    cfg: MatchConfig = MatchConfig(),
) -> Partition:
    deterministic: list[PlacementResult] = []
    modeling: dict[str, ModelingSet] = {}
    fallback: dict[str, list[ResolvedRecord]] = {}
    violations: list[str] = []
    for r in sorted(resolved, key=lambda r: r.record_id):
        placed = place_admin3(r, settlements, g, cfg)
        if r.admin2_id not in m:
            if placed is not None:
                deterministic.append(placed)
            else:
                fallback.setdefault(r.admin2_id, []).append(r)
            continue
        support = m.values[r.admin2_id]
        if placed is not None and placed.cell not in support:
            logger.warning(
                "record %s: settlement cell %s has no %s buildings; treated as unlabeled",
                r.record_id, placed.cell, r.admin2_id,
            )
            violations.append(r.record_id)
            placed = None
        if len(support) == 1:
            deterministic.append(placed or place_single_cell(r, m))
            continue
        bucket = modeling.setdefault(r.admin2_id, ModelingSet())
        if placed is not None:
            bucket.labeled.append((r, placed.cell))
        else:
            bucket.unlabeled.append(r)
    return Partition(deterministic, dict(sorted(modeling.items())), dict(sorted(fallback.items())), violations)


def _opt(row: Mapping[str, str], key: str) -> Optional[str]:
    value = row.get(key)
    return value if value not in (None, "") else None


def read_records_csv(path: str | Path) -> list[DisplacementRecord]:
    """Read displacement records; columns outside the core set become attributes."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"record_id", "origin_country", "year"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        extra = [c for c in reader.fieldnames if c not in CORE_COLUMNS]
        for lineno, row in enumerate(reader, 2):
            rid = row["record_id"]
            if not rid:
                raise InputError(f"{path}:{lineno}: empty record_id")
            try:
                year = int(row["year"])
            except (TypeError, ValueError):
                raise InputError(f"{path}:{lineno}: record {rid!r} has no valid year") from None
            records.append(
                DisplacementRecord(
                    record_id=rid,
                    origin_country=row["origin_country"],
                    admin1_raw=_opt(row, "admin1"),
                    admin2_raw=_opt(row, "admin2"),
                    admin3_raw=_opt(row, "admin3"),
                    admin4_raw=_opt(row, "admin4"),
                    year=year,
                    attributes={c: row[c] for c in extra if row.get(c) not in (None, "")},
                )
            )
    return records


def read_settlements_csv(path: str | Path) -> list[Settlement]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "latitude", "longitude"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                loc = GeoPoint(lon=float(row["longitude"]), lat=float(row["latitude"]))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: bad settlement row ({exc})") from exc
            out.append(Settlement(row["name"], loc, _opt(row, "admin2_id")))
    return out
