"""Building-count weights: the (admin2, cell) dual assignment and the proportion matrix."""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import InputError
from .grid import AdminLocator, AdminUnit, GeoPoint, GridCellId, GridSpec, cells_intersecting, point_to_cell

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class BuildingAssignment:
    admin2_id: str
    cell: GridCellId
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise InputError(f"assignment ({self.admin2_id}, {self.cell}) has count {self.count}")


@dataclass
class AssignmentReport:
    """Tallies of buildings that did not contribute to any assignment."""

    total: int = 0
    below_confidence: int = 0
    outside: int = 0
    off_support: int = 0

    @property
    def included(self) -> int:
        return self.total - self.below_confidence - self.outside - self.off_support


def assign_buildings(
    buildings: Iterable[GeoPoint],
    admin2_units: Sequence[AdminUnit],
    g: GridSpec,
    min_confidence: float = 0.0,
) -> tuple[list[BuildingAssignment], AssignmentReport]:
    """Count buildings per (admin2, cell) pair.

    Buildings whose cell has no area overlap with their admin2 (a point sitting on the
    unit's north or east edge) are reported as ``off_support`` and left out, so every
    counted cell lies inside the unit's intersecting set.
    """
    non_admin2 = [u.canonical_id for u in admin2_units if u.level.value != "admin2"]
    if non_admin2:
        raise InputError(f"assign_buildings expects admin2 units, got {non_admin2[:3]}")
    locator = AdminLocator(admin2_units)
    support: dict[str, set[GridCellId]] = {}
    counts: Counter = Counter()
    report = AssignmentReport()
    for b in buildings:
        report.total += 1
        if b.confidence is not None and b.confidence < min_confidence:
            report.below_confidence += 1
            continue
        cell = point_to_cell(b, g)
        admin2 = locator.locate(b)
        if admin2 is None:
            report.outside += 1
            continue
        if admin2 not in support:
            unit = next(u for u in admin2_units if u.canonical_id == admin2)
            support[admin2] = cells_intersecting(unit, g)
        if cell not in support[admin2]:
            report.off_support += 1
            continue
        counts[(admin2, cell)] += 1
    if report.outside:
        logger.info("%d buildings fell outside every admin2 unit", report.outside)
    return merge_assignments(counts), report


def merge_assignments(*parts) -> list[BuildingAssignment]:
    """Combine partial tallies (Counters or assignment lists); order-independent."""
    total: Counter = Counter()
    for part in parts:
        if isinstance(part, Counter):
            total.update(part)
        else:
            for a in part:
                total[(a.admin2_id, a.cell)] += a.count
    return [BuildingAssignment(a, c, n) for (a, c), n in sorted(total.items()) if n > 0]


@dataclass(frozen=True)
class ProportionMatrix:
    """Row-stochastic building shares, stored sparsely by admin2 then cell."""

    values: dict[str, dict[GridCellId, float]]
    counts: dict[str, dict[GridCellId, int]] = field(repr=False)

    @property
    def rows(self) -> list[str]:
        return sorted(self.values)

    @property
    def cols(self) -> list[GridCellId]:
        return sorted({c for row in self.values.values() for c in row})

    def __contains__(self, admin2_id: str) -> bool:
        return admin2_id in self.values

    def row(self, admin2_id: str) -> list[tuple[GridCellId, float]]:
        """Nonzero entries of one row, in cell order."""
        return sorted(self.values[admin2_id].items())

    def support(self, admin2_id: str) -> list[GridCellId]:
        return sorted(self.values[admin2_id])

    def value(self, admin2_id: str, cell: GridCellId) -> float:
        return self.values.get(admin2_id, {}).get(cell, 0.0)

    def to_wide_rows(self) -> list[list[str]]:
        cols = self.cols
        out = [["admin2"] + [str(c) for c in cols]]
        for a in self.rows:
            row = self.values[a]
            out.append([a] + [_fmt(row.get(c, 0.0)) for c in cols])
        return out

    def to_long_rows(self) -> list[list[str]]:
        out = [["admin2_id", "grid_id", "proportion"]]
        for a in self.rows:
            out.extend([a, str(c), _fmt(v)] for c, v in self.row(a))
        return out

    def write_wide_csv(self, path: str | Path) -> None:
        _write_rows(path, self.to_wide_rows())

    def write_long_csv(self, path: str | Path) -> None:
        _write_rows(path, self.to_long_rows())


def _fmt(v: float) -> str:
    return "0" if v == 0 else repr(float(v))


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def build_proportion_matrix(
    assignments: Iterable[BuildingAssignment],
    expected_admin2: Iterable[str] = (),
) -> tuple[ProportionMatrix, list[str]]:
    """Normalise per-admin2 building counts into shares over cells.

    Returns the matrix and the sorted list of expected admin2 ids that had no
    buildings; those rows are left out rather than zero-filled.
    """
    counts: dict[str, dict[GridCellId, int]] = {}
    for a in sorted(assignments):
        row = counts.setdefault(a.admin2_id, {})
        row[a.cell] = row.get(a.cell, 0) + a.count
    values = {}
    for admin2, row in counts.items():
        total = sum(row.values())
        values[admin2] = {cell: n / total for cell, n in sorted(row.items())}
    missing = sorted(set(expected_admin2) - set(values))
    for admin2 in missing:
        logger.warning("admin2 %s has no buildings; excluded from the proportion matrix", admin2)
    return ProportionMatrix(values=values, counts=counts), missing


def single_cell_admins(m: ProportionMatrix) -> set[str]:
    return {a for a, row in m.values.items() if len(row) == 1}


def read_buildings_csv(path: str | Path) -> list[GeoPoint]:
    """Read ``latitude,longitude,confidence`` rows; confidence may be blank."""
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"latitude", "longitude"} - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                conf = row.get("confidence")
                points.append(
                    GeoPoint(
                        lon=float(row["longitude"]),
                        lat=float(row["latitude"]),
                        confidence=float(conf) if conf not in (None, "") else None,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: bad building row ({exc})") from exc
    return points
