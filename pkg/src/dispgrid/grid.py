"""The 0.5 degree analysis lattice and planar point/polygon lookups.

Cells are numbered row-major from the south-west origin, ``index = row * n_cols + col``,
and rendered as ``grid_<index>``. Cell intervals are half-open, so a point on a cell's
east or north edge belongs to the neighbouring cell. All geometry is planar in degrees.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon

from .errors import ExtentError, GeometryError, InputError

_EDGE_EPS = 1e-12

Ring = tuple[tuple[float, float], ...]
PolygonRings = tuple[Ring, ...]


@dataclass(frozen=True)
class GridSpec:
    origin_lon: float = -180.0
    origin_lat: float = -90.0
    cell_size: float = 0.5
    n_cols: int = 720
    n_rows: int = 360

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if not -180.0 <= self.origin_lon < 180.0:
            raise ValueError(f"origin_lon {self.origin_lon} not in [-180, 180)")
        if not -90.0 <= self.origin_lat < 90.0:
            raise ValueError(f"origin_lat {self.origin_lat} not in [-90, 90)")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.n_cols * self.cell_size > 360 + self.cell_size:
            raise ValueError("grid is wider than the globe")
        if self.n_rows * self.cell_size > 180 + self.cell_size:
            raise ValueError("grid is taller than the globe")

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (
            self.origin_lon,
            self.origin_lat,
            self.origin_lon + self.n_cols * self.cell_size,
            self.origin_lat + self.n_rows * self.cell_size,
        )

    def contains(self, lon: float, lat: float) -> bool:
        west, south, east, north = self.bounds
        return west <= lon < east and south <= lat < north

    def row_col(self, lon: float, lat: float) -> tuple[int, int]:
        if not self.contains(lon, lat):
            raise ExtentError(lon, lat)
        col = self._axis_index(lon, self.origin_lon, self.n_cols)
        row = self._axis_index(lat, self.origin_lat, self.n_rows)
        return row, col

    def _axis_index(self, value: float, origin: float, n: int) -> int:
        # the division can round across an edge; nudge so the index agrees with cell_bounds
        i = min(math.floor((value - origin) / self.cell_size), n - 1)
        if i > 0 and value < origin + i * self.cell_size:
            i -= 1
        elif i < n - 1 and value >= origin + (i + 1) * self.cell_size:
            i += 1
        return i

    def cell(self, row: int, col: int) -> GridCellId:
        if not (0 <= row < self.n_rows and 0 <= col < self.n_cols):
            raise ExtentError(col, row, f"cell (row={row}, col={col}) outside a {self.n_rows}x{self.n_cols} grid")
        return GridCellId(row * self.n_cols + col)

    def cell_row_col(self, cell: GridCellId) -> tuple[int, int]:
        if not 0 <= cell.index < self.n_cells:
            raise ExtentError(None, None, f"{cell} outside a grid of {self.n_cells} cells")
        return divmod(cell.index, self.n_cols)

    def cell_bounds(self, cell: GridCellId) -> tuple[float, float, float, float]:
        """Return ``(west, south, east, north)`` of a cell."""
        row, col = self.cell_row_col(cell)
        west = self.origin_lon + col * self.cell_size
        south = self.origin_lat + row * self.cell_size
        return west, south, west + self.cell_size, south + self.cell_size

    def cells_in_bbox(self, west, south, east, north) -> list[GridCellId]:
        """All cells whose closed rectangle touches the closed bbox, clipped to the extent."""
        c0, c1 = self._span(west, east, self.origin_lon, self.n_cols)
        r0, r1 = self._span(south, north, self.origin_lat, self.n_rows)
        return [GridCellId(r * self.n_cols + c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]

    def _span(self, lo, hi, origin, n):
        first = max(0, math.floor((lo - origin) / self.cell_size))
        last = min(n - 1, math.floor((hi - origin) / self.cell_size))
        return first, last


@dataclass(frozen=True, order=True)
class GridCellId:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"cell index must be non-negative, got {self.index}")

    def __str__(self) -> str:
        return f"grid_{self.index}"

    @classmethod
    def parse(cls, text: str) -> GridCellId:
        prefix, _, digits = text.strip().partition("_")
        if prefix != "grid" or not digits.isdigit():
            raise InputError(f"malformed grid id {text!r}")
        return cls(int(digits))


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float
    confidence: Optional[float] = None

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise InputError(f"invalid coordinate (lon={self.lon}, lat={self.lat})")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence} not in [0, 1]")


class AdminLevel(str, enum.Enum):
    ADMIN0 = "admin0"
    ADMIN1 = "admin1"
    ADMIN2 = "admin2"
    ADMIN3 = "admin3"


@dataclass(frozen=True)
class AdminUnit:
    country: str
    level: AdminLevel
    name: str
    canonical_id: str
    parent_id: Optional[str]
    geometry: tuple[PolygonRings, ...]

    def __post_init__(self):
        object.__setattr__(self, "level", AdminLevel(self.level))
        if self.level is not AdminLevel.ADMIN0 and not self.parent_id:
            raise GeometryError(f"{self.canonical_id}: parent_id required at {self.level.value}")
        if not self.geometry:
            raise GeometryError(f"{self.canonical_id}: empty geometry")
        for polygon in self.geometry:
            if not polygon:
                raise GeometryError(f"{self.canonical_id}: polygon without rings")
            for ring in polygon:
                if len(ring) < 2 or ring[0] != ring[-1]:
                    raise GeometryError(f"{self.canonical_id}: ring is not closed")

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        xs = [x for poly in self.geometry for ring in poly for x, _ in ring]
        ys = [y for poly in self.geometry for ring in poly for _, y in ring]
        return min(xs), min(ys), max(xs), max(ys)

    @cached_property
    def shape(self) -> MultiPolygon:
        _check_degenerate(self)
        return MultiPolygon([Polygon(poly[0], poly[1:]) for poly in self.geometry])


def _check_degenerate(unit: AdminUnit) -> None:
    for polygon in unit.geometry:
        for ring in polygon:
            if len(set(ring)) < 3:
                raise GeometryError(f"{unit.canonical_id}: ring has fewer than 3 distinct vertices")


def _locate(x: float, y: float, unit: AdminUnit) -> tuple[bool, bool]:
    """Even-odd ray cast over all rings of the unit; returns ``(inside, on_boundary)``."""
    inside = False
    for polygon in unit.geometry:
        for ring in polygon:
            for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
                cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
                if (
                    abs(cross) <= _EDGE_EPS
                    and min(x1, x2) - _EDGE_EPS <= x <= max(x1, x2) + _EDGE_EPS
                    and min(y1, y2) - _EDGE_EPS <= y <= max(y1, y2) + _EDGE_EPS
                ):
                    return False, True
                if (y1 > y) != (y2 > y):
                    x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                    if x < x_cross:
                        inside = not inside
    return inside, False


def point_to_cell(p: GeoPoint, g: GridSpec) -> GridCellId:
    row, col = g.row_col(p.lon, p.lat)
    return GridCellId(row * g.n_cols + col)


def point_in_admin(p: GeoPoint, units: Sequence[AdminUnit]) -> Optional[str]:
    """Return the canonical id of the unit containing ``p``.

    A point strictly inside a unit wins over boundary contact. Among boundary
    contacts the lexicographically smallest canonical id is returned.
    """
    strictly_inside = []
    touching = []
    for unit in units:
        _check_degenerate(unit)
        west, south, east, north = unit.bbox
        if not (west - _EDGE_EPS <= p.lon <= east + _EDGE_EPS and south - _EDGE_EPS <= p.lat <= north + _EDGE_EPS):
            continue
        inside, boundary = _locate(p.lon, p.lat, unit)
        if inside:
            strictly_inside.append(unit.canonical_id)
        elif boundary:
            touching.append(unit.canonical_id)
    if strictly_inside:
        return min(strictly_inside)
    if touching:
        return min(touching)
    return None


class AdminLocator:
    """Batch point-in-admin lookups backed by an STR-tree candidate filter."""

    def __init__(self, units: Sequence[AdminUnit]):
        levels = {u.level for u in units}
        if len(levels) > 1:
            raise GeometryError(f"units span several levels: {sorted(l.value for l in levels)}")
        self.units = list(units)
        for unit in self.units:
            _check_degenerate(unit)
        boxes = [shapely.box(*u.bbox) for u in self.units]
        self._tree = shapely.STRtree(boxes) if boxes else None

    def locate(self, p: GeoPoint) -> Optional[str]:
        if self._tree is None:
            return None
        hits = self._tree.query(shapely.Point(p.lon, p.lat), predicate="intersects")
        return point_in_admin(p, [self.units[i] for i in sorted(hits)])


def intersection_areas(unit: AdminUnit, g: GridSpec) -> dict[GridCellId, float]:
    """Planar area (square degrees) of the unit inside each cell it overlaps."""
    west, south, east, north = unit.bbox
    candidates = g.cells_in_bbox(west, south, east, north)
    if not candidates:
        return {}
    boxes = shapely.box(*np.array([g.cell_bounds(c) for c in candidates]).T)
    areas = shapely.area(shapely.intersection(unit.shape, boxes))
    return {c: float(a) for c, a in zip(candidates, areas) if a > 0}


def cells_intersecting(unit: AdminUnit, g: GridSpec) -> set[GridCellId]:
    return set(intersection_areas(unit, g))


def _rings_from_coords(coords) -> PolygonRings:
    return tuple(tuple((float(x), float(y)) for x, y, *_ in ring) for ring in coords)


def unit_from_feature(feature: dict) -> AdminUnit:
    props = feature.get("properties") or {}
    geom = feature.get("geometry") or {}
    missing = [k for k in ("country", "level", "name", "id") if props.get(k) in (None, "")]
    if missing:
        raise InputError(f"admin feature {props.get('id')!r} lacks properties {missing}")
    if geom.get("type") == "Polygon":
        polygons = (_rings_from_coords(geom["coordinates"]),)
    elif geom.get("type") == "MultiPolygon":
        polygons = tuple(_rings_from_coords(p) for p in geom["coordinates"])
    else:
        raise GeometryError(f"{props['id']}: unsupported geometry type {geom.get('type')!r}")
    return AdminUnit(
        country=str(props["country"]),
        level=AdminLevel(props["level"]),
        name=str(props["name"]),
        canonical_id=str(props["id"]),
        parent_id=props.get("parent_id") or None,
        geometry=polygons,
    )


def load_admin_units(path: str | Path) -> list[AdminUnit]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise InputError(f"{path}: expected a GeoJSON FeatureCollection")
    units = [unit_from_feature(f) for f in doc.get("features", [])]
    seen = set()
    for unit in units:
        if unit.canonical_id in seen:
            raise InputError(f"{path}: duplicate admin id {unit.canonical_id!r}")
        seen.add(unit.canonical_id)
    return units


def unit_to_feature(unit: AdminUnit) -> dict:
    return {
        "type": "Feature",
        "properties": {
            "country": unit.country,
            "level": unit.level.value,
            "name": unit.name,
            "id": unit.canonical_id,
            "parent_id": unit.parent_id,
        },
        "geometry": {
            "type": "MultiPolygon",
            "coordinates": [[[list(pt) for pt in ring] for ring in poly] for poly in unit.geometry],
        },
    }


def rectangle(west: float, south: float, east: float, north: float) -> tuple[PolygonRings, ...]:
    """Single-polygon geometry for an axis-aligned rectangle, counter-clockwise."""
    ring = ((west, south), (east, south), (east, north), (west, north), (west, south))
    return ((ring,),)


def units_at(units: Iterable[AdminUnit], level: AdminLevel | str) -> list[AdminUnit]:
    level = AdminLevel(level)
    return [u for u in units if u.level is level]
