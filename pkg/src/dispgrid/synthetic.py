"""Synthetic worlds with hidden ground truth, used in place of real registration data.

Admin2 units are grid-aligned rectangles stacked one per grid row. Buildings are
scattered with random per-cell densities, every cell gets one named settlement, and
each record's true cell is drawn from its unit's building shares, optionally pulled
toward an ethnic-group-specific cell by ``signal_strength``.
"""
from __future__ import annotations

import configparser
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .grid import AdminLevel, AdminUnit, GeoPoint, GridCellId, GridSpec, point_to_cell, rectangle, unit_to_feature
from .matching import similarity_ratio
from .records import DisplacementRecord, Settlement

AGE_GROUPS = ("0-17", "18-59", "60+")
GENDERS = ("F", "M")
_SYLLABLES = ("ka", "lo", "mi", "tu", "ra", "se", "bo", "di", "na", "we", "go", "zi", "fa", "ru", "pe", "ya", "ko", "ha")
_INSET = 1e-4


@dataclass(frozen=True)
class WorldConfig:
    n_units: int = 10
    cells_per_unit: int = 3
    buildings_per_unit: int = 500
    records_per_unit: int = 1000
    hidden_fraction: float = 0.5
    signal_strength: float = 0.0
    n_ethnic_groups: int = 3
    typo_rate: float = 0.0
    admin1_only_rate: float = 0.0
    single_cell_units: int = 0
    empty_units: int = 0
    density_concentration: float = 1.0
    country: str = "SYN"
    origin_lon: float = 30.0
    origin_lat: float = 0.0
    year_range: tuple[int, int] = (2000, 2022)

    def __post_init__(self):
        if self.n_units < 1:
            raise ConfigurationError("a world needs at least one unit")
        if self.cells_per_unit < 1:
            raise ConfigurationError("cells_per_unit must be at least 1")
        if self.single_cell_units + self.empty_units > self.n_units:
            raise ConfigurationError("more special units than units")
        for name in ("hidden_fraction", "signal_strength", "typo_rate", "admin1_only_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.buildings_per_unit < 1 and self.empty_units < self.n_units:
            raise ConfigurationError("units with buildings need buildings_per_unit >= 1")


@dataclass
class SyntheticWorld:
    config: WorldConfig
    seed: int
    grid: GridSpec
    units: list[AdminUnit]
    buildings: list[GeoPoint]
    settlements: list[Settlement]
    records: list[DisplacementRecord]
    truth: dict[str, GridCellId]
    proportions: dict[str, dict[GridCellId, float]] = field(default_factory=dict)

    @property
    def admin2_units(self) -> list[AdminUnit]:
        return [u for u in self.units if u.level is AdminLevel.ADMIN2]


def _make_names(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    names: list[str] = []
    while len(names) < count:
        n_syl = int(rng.integers(3, 6))
        name = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), n_syl)).capitalize()
        if name.lower() in taken:
            continue
        # keep names far apart so typos never cross over to a neighbour
        if any(similarity_ratio(name.lower(), other) >= 60 for other in taken):
            continue
        taken.add(name.lower())
        names.append(name)
    return names


def _typo(rng: np.random.Generator, name: str) -> str:
    i = int(rng.integers(1, len(name)))
    replacement = "x" if name[i].lower() != "x" else "q"
    return name[:i] + replacement + name[i + 1 :]


def generate_synthetic(world_cfg: WorldConfig = WorldConfig(), seed: int = 0) -> SyntheticWorld:
    cfg = world_cfg
    rng = np.random.default_rng(seed)
    grid = GridSpec()
    half = grid.cell_size
    taken: set[str] = set()
    unit_names = _make_names(rng, cfg.n_units, taken)

    region_id = f"{cfg.country}-R1"
    east = cfg.origin_lon + cfg.cells_per_unit * half
    north = cfg.origin_lat + cfg.n_units * half
    units = [
        AdminUnit(cfg.country, AdminLevel.ADMIN0, cfg.country, cfg.country, None, rectangle(cfg.origin_lon, cfg.origin_lat, east, north)),
        AdminUnit(cfg.country, AdminLevel.ADMIN1, "Region One", region_id, cfg.country, rectangle(cfg.origin_lon, cfg.origin_lat, east, north)),
    ]
    buildings: list[GeoPoint] = []
    settlements: list[Settlement] = []
    records: list[DisplacementRecord] = []
    truth: dict[str, GridCellId] = {}
    proportions: dict[str, dict[GridCellId, float]] = {}
    ethnic = tuple(f"E{j + 1}" for j in range(cfg.n_ethnic_groups))
    lo_year, hi_year = cfg.year_range
    serial = 0

    for i in range(cfg.n_units):
        uid = f"{cfg.country}-{i + 1:03d}"
        empty = i >= cfg.n_units - cfg.empty_units
        single = not empty and i < cfg.single_cell_units
        n_cells = 1 if single else cfg.cells_per_unit
        south = cfg.origin_lat + i * half
        west = cfg.origin_lon
        units.append(AdminUnit(cfg.country, AdminLevel.ADMIN2, unit_names[i], uid, region_id, rectangle(west, south, west + n_cells * half, south + half)))
        cell_boxes = [(west + c * half, south, west + (c + 1) * half, south + half) for c in range(n_cells)]
        cells = [point_to_cell(GeoPoint(b[0] + half / 2, b[1] + half / 2), grid) for b in cell_boxes]

        if empty:
            weights = np.full(n_cells, 1.0 / n_cells)
        else:
            density = rng.dirichlet(np.full(n_cells, cfg.density_concentration))
            counts = rng.multinomial(cfg.buildings_per_unit, density)
            for (w, s, e, n), k in zip(cell_boxes, counts):
                xs = rng.uniform(w + _INSET, e - _INSET, k)
                ys = rng.uniform(s + _INSET, n - _INSET, k)
                conf = np.round(rng.uniform(0.6, 1.0, k), 4)
                buildings.extend(GeoPoint(float(x), float(y), float(c)) for x, y, c in zip(xs, ys, conf))
            weights = counts / counts.sum()
            proportions[uid] = {c: float(v) for c, v in zip(cells, weights) if v > 0}

        names = _make_names(rng, n_cells, taken)
        cell_settlement = {}
        for (w, s, e, n), cell, name in zip(cell_boxes, cells, names):
            loc = GeoPoint(float(rng.uniform(w + _INSET, e - _INSET)), float(rng.uniform(s + _INSET, n - _INSET)))
            settlement = Settlement(name, loc, uid)
            settlements.append(settlement)
            cell_settlement[cell] = settlement

        support = [j for j in range(n_cells) if weights[j] > 0]
        preferred = {g: int(rng.choice(support)) for g in ethnic}
        for _ in range(cfg.records_per_unit):
            serial += 1
            rid = f"R{serial:07d}"
            group = ethnic[int(rng.integers(len(ethnic)))]
            attrs = {
                "age_group": AGE_GROUPS[int(rng.integers(len(AGE_GROUPS)))],
                "gender": GENDERS[int(rng.integers(len(GENDERS)))],
                "ethnic_group": group,
            }
            probs = (1.0 - cfg.signal_strength) * weights
            probs[preferred[group]] += cfg.signal_strength
            j = int(rng.choice(n_cells, p=probs / probs.sum()))
            truth[rid] = cells[j]
            year = int(rng.integers(lo_year, hi_year + 1))
            admin2 = unit_names[i]
            if rng.random() < cfg.typo_rate:
                admin2 = _typo(rng, admin2)
            admin3 = None if rng.random() < cfg.hidden_fraction else cell_settlement[cells[j]].name
            if rng.random() < cfg.admin1_only_rate:
                admin2 = admin3 = None
            records.append(DisplacementRecord(rid, cfg.country, "Region One", admin2, admin3, year, attrs))

    return SyntheticWorld(cfg, seed, grid, units, buildings, settlements, records, truth, proportions)


def write_world(world: SyntheticWorld, out_dir: str | Path) -> dict[str, Path]:
    """Write the world as pipeline inputs plus ``truth.csv`` and a ready-to-run ``config.ini``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "admin": out / "admin.geojson",
        "buildings": out / "buildings.csv",
        "settlements": out / "settlements.csv",
        "records": out / "records.csv",
        "truth": out / "truth.csv",
        "config": out / "config.ini",
    }
    with open(paths["admin"], "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": [unit_to_feature(u) for u in world.units]}, fh)
        fh.write("\n")
    with open(paths["buildings"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latitude", "longitude", "confidence"])
        w.writerows([repr(b.lat), repr(b.lon), "" if b.confidence is None else repr(b.confidence)] for b in world.buildings)
    with open(paths["settlements"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "latitude", "longitude", "admin2_id"])
        w.writerows([s.name, repr(s.location.lat), repr(s.location.lon), s.admin2_id or ""] for s in world.settlements)
    with open(paths["records"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "origin_country", "admin1", "admin2", "admin3", "year", "age_group", "gender", "ethnic_group"])
        for r in world.records:
            a = r.attributes
            w.writerow([r.record_id, r.origin_country, r.admin1_raw or "", r.admin2_raw or "", r.admin3_raw or "", r.year,
                        a.get("age_group", ""), a.get("gender", ""), a.get("ethnic_group", "")])
    write_truth(world.truth, paths["truth"])

    ini = configparser.ConfigParser()
    ini["inputs"] = {k: paths[k].name for k in ("admin", "buildings", "settlements", "records")}
    ini["model"] = {"seed": str(world.seed), "year_min": str(world.config.year_range[0]), "year_max": str(world.config.year_range[1])}
    with open(paths["config"], "w", encoding="utf-8") as fh:
        ini.write(fh)
    with open(out / "world.json", "w", encoding="utf-8") as fh:
        json.dump({"seed": world.seed, "config": asdict(world.config)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def write_truth(truth: dict[str, GridCellId], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "grid_id"])
        w.writerows([rid, str(cell)] for rid, cell in sorted(truth.items()))


def read_truth(path: str | Path) -> dict[str, GridCellId]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["record_id"]: GridCellId.parse(row["grid_id"]) for row in csv.DictReader(fh)}
