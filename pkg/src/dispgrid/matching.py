"""Exact and Levenshtein-ratio matching of raw place names against a gazetteer."""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

from .errors import ConfigurationError

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class MatchConfig:
    threshold: float = 80.0
    normalize: bool = True
    strip_diacritics: bool = True

    def __post_init__(self):
        if not 0 < self.threshold <= 100:
            raise ConfigurationError(f"threshold must lie in (0, 100], got {self.threshold}")


@dataclass(frozen=True)
class MatchResult:
    query: str
    matched_id: Optional[str]
    ratio: float
    method: str  # "exact" | "fuzzy" | "none"

    @property
    def matched(self) -> bool:
        return self.method != "none"


def levenshtein_distance(a: str, b: str) -> int:
    """Minimum number of single-character insertions, deletions and substitutions turning a into b."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def similarity_ratio(a: str, b: str) -> float:
    """``(1 - D / L) * 100`` with D the edit distance and L the longer length.

    Two empty strings are identical and score 100.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 100.0
    # integer numerator keeps boundary values such as 80 exact
    return 100.0 * (longest - levenshtein_distance(a, b)) / longest


def passes_threshold(ratio: float, threshold: float) -> bool:
    return ratio >= threshold


def normalize_name(text: str, cfg: MatchConfig = MatchConfig()) -> str:
    if not cfg.normalize:
        return text
    if cfg.strip_diacritics:
        text = "".join(c for c in unicodedata.normalize("NFKD", text) if not unicodedata.combining(c))
    return _WS.sub(" ", text.casefold()).strip()


def match_admin_name(query: str, candidates: Sequence[tuple[str, str]], cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Match ``query`` against ``(canonical_id, name)`` pairs.

    Exact matches (after normalisation) win outright. Otherwise the highest ratio
    at or above the threshold is accepted, ties going to the smaller canonical id.
    """
    if not candidates:
        raise ConfigurationError("no candidates to match against")
    q = normalize_name(query, cfg)
    best_id, best_ratio = None, -1.0
    for cid, name in sorted(candidates):
        n = normalize_name(name, cfg)
        if not n:
            raise ConfigurationError(f"candidate {cid!r} has an empty name")
        if n == q:
            return MatchResult(query, cid, 100.0, "exact")
        ratio = similarity_ratio(q, n)
        if ratio > best_ratio:
            best_id, best_ratio = cid, ratio
    if passes_threshold(best_ratio, cfg.threshold):
        return MatchResult(query, best_id, best_ratio, "fuzzy")
    return MatchResult(query, None, max(best_ratio, 0.0), "none")


class GazetteerEntry(NamedTuple):
    canonical_id: str
    name: str
    admin2_id: Optional[str]
    parent_id: Optional[str]


@dataclass
class AdminIndex:
    """Per-country, per-level candidate lists used for origin resolution.

    Levels are ``admin1``, ``admin2``, ``admin3`` and ``admin4``. Lower levels
    carry the admin2 they roll up to.
    """

    entries: dict[tuple[str, str], list[GazetteerEntry]] = field(default_factory=dict)

    def add(self, country: str, level: str, entry: GazetteerEntry) -> None:
        self.entries.setdefault((country, level), []).append(entry)

    @property
    def countries(self) -> set[str]:
        return {country for country, _ in self.entries}

    def candidates(self, country: str, level: str, parent_id: Optional[str] = None) -> list[GazetteerEntry]:
        found = self.entries.get((country, level), [])
        if parent_id is not None:
            found = [e for e in found if e.parent_id == parent_id]
        return found

    def admin2_of(self, country: str, level: str, canonical_id: str) -> Optional[str]:
        for e in self.entries.get((country, level), []):
            if e.canonical_id == canonical_id:
                return e.admin2_id
        return None


class OriginMatch(NamedTuple):
    level: str
    canonical_id: str
    admin2_id: str
    match: MatchResult


def resolve_origin(
    record_origins: tuple[Optional[str], Optional[str], Optional[str]],
    admin_index: AdminIndex,
    country: str,
    cfg: MatchConfig = MatchConfig(),
    admin1_raw: Optional[str] = None,
) -> Optional[OriginMatch]:
    """Resolve an origin by trying admin2, then admin3, then admin4 names.

    Admin2 candidates are narrowed to the children of the record's admin1 when
    that name resolves. A lower-level hit is reported with its own id and the
    admin2 it belongs to.
    """
    parent = None
    if admin1_raw and admin1_raw.strip():
        admin1 = admin_index.candidates(country, "admin1")
        if admin1:
            hit = match_admin_name(admin1_raw, [(e.canonical_id, e.name) for e in admin1], cfg)
            if hit.matched and admin_index.candidates(country, "admin2", hit.matched_id):
                parent = hit.matched_id

    for level, raw in zip(("admin2", "admin3", "admin4"), record_origins):
        if not raw or not raw.strip():
            continue
        pool = admin_index.candidates(country, level, parent if level == "admin2" else None)
        if not pool:
            continue
        hit = match_admin_name(raw, [(e.canonical_id, e.name) for e in pool], cfg)
        if hit.matched:
            admin2_id = next(e.admin2_id for e in pool if e.canonical_id == hit.matched_id)
            if admin2_id is not None:
                return OriginMatch(level, hit.matched_id, admin2_id, hit)
    return None


def build_admin_index(units: Iterable, settlements: Iterable = ()) -> AdminIndex:
    """Index admin units (admin1..admin3) and settlements (admin3/admin4 names)."""
    units = list(units)
    by_id = {u.canonical_id: u for u in units}

    def admin2_ancestor(unit):
        while unit is not None and unit.level.value != "admin2":
            unit = by_id.get(unit.parent_id)
        return unit.canonical_id if unit is not None else None

    index = AdminIndex()
    for u in sorted(units, key=lambda u: u.canonical_id):
        level = u.level.value
        if level == "admin0":
            continue
        admin2 = admin2_ancestor(u) if level in ("admin2", "admin3") else None
        index.add(u.country, level, GazetteerEntry(u.canonical_id, u.name, admin2, u.parent_id))
    for s in sorted(settlements, key=lambda s: s.key):
        if s.admin2_id is None or s.admin2_id not in by_id:
            continue
        country = by_id[s.admin2_id].country
        entry = GazetteerEntry(s.key, s.name, s.admin2_id, s.admin2_id)
        index.add(country, "admin3", entry)
        index.add(country, "admin4", entry)
    return index
