"""Placement-quality metrics in modeled-only and combined reporting modes."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InputError

MODELED_ONLY = "modeled_only"
COMBINED = "combined"


@dataclass(frozen=True)
class ConfusionTable:
    """Rows are true classes, columns predicted classes."""

    classes: tuple
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, true, predicted) -> int:
        i, j = self.classes.index(true), self.classes.index(predicted)
        return int(self.counts[i, j])

    def merge(self, other: ConfusionTable) -> ConfusionTable:
        classes = tuple(sorted(set(self.classes) | set(other.classes)))
        pos = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for table in (self, other):
            idx = [pos[c] for c in table.classes]
            counts[np.ix_(idx, idx)] += table.counts
        return ConfusionTable(classes, counts)


def confusion(true_cells: Sequence[Hashable], predicted_cells: Sequence[Hashable]) -> ConfusionTable:
    if len(true_cells) != len(predicted_cells):
        raise InputError(f"length mismatch: {len(true_cells)} true vs {len(predicted_cells)} predicted")
    pairs = Counter(zip(true_cells, predicted_cells))
    classes = tuple(sorted(set(true_cells) | set(predicted_cells)))
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for (t, p), n in pairs.items():
        counts[pos[t], pos[p]] = n
    return ConfusionTable(classes, counts)


class Metrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def metrics(ct: ConfusionTable, averaging: str = "weighted") -> Metrics:
    """Accuracy plus support-weighted (default) or macro precision, recall and F1.

    Per-class ratios with a zero denominator count as 0. Counts are integers, so the
    averages are formed exactly and rounded to float once.
    """
    if ct.total == 0:
        raise InputError("cannot score an empty confusion table")
    if averaging not in ("weighted", "macro"):
        raise ValueError(f"unknown averaging {averaging!r}")
    c = ct.counts
    tp = [int(v) for v in np.diag(c)]
    support = [int(v) for v in c.sum(axis=1)]
    predicted = [int(v) for v in c.sum(axis=0)]
    precision = [_ratio(t, p) for t, p in zip(tp, predicted)]
    recall = [_ratio(t, s) for t, s in zip(tp, support)]
    # harmonic mean of precision and recall reduces to 2 tp / (support + predicted)
    f1 = [_ratio(2 * t, s + p) for t, s, p in zip(tp, support, predicted)]
    w = support if averaging == "weighted" else [1] * len(tp)
    norm = sum(w)

    def average(values):
        return float(sum(wi * v for wi, v in zip(w, values)) / norm)

    return Metrics(
        accuracy=float(Fraction(sum(tp), ct.total)),
        precision=average(precision),
        recall=average(recall),
        f1=average(f1),
    )


@dataclass
class MetricsReport:
    mode: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int
    per_admin2: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "per_admin2": dict(sorted(self.per_admin2.items())),
        }


def report_from_outcomes(outcomes: Iterable[tuple[str, Hashable, Hashable]], mode: str, averaging: str = "weighted") -> Optional[MetricsReport]:
    """Score ``(admin2_id, true, predicted)`` triples; None when there are none."""
    outcomes = list(outcomes)
    if not outcomes:
        return None
    m = metrics(confusion([t for _, t, _ in outcomes], [p for _, _, p in outcomes]), averaging)
    hits, seen = defaultdict(int), defaultdict(int)
    for admin2, t, p in outcomes:
        seen[admin2] += 1
        hits[admin2] += t == p
    per_admin2 = {a: hits[a] / seen[a] for a in sorted(seen)}
    return MetricsReport(mode, *m, support=len(outcomes), per_admin2=per_admin2)


def combined_report(
    validation_outcomes: Iterable[tuple[str, Hashable, Hashable]],
    deterministic: Iterable[tuple[str, Hashable]],
    mode: str = COMBINED,
    averaging: str = "weighted",
) -> Optional[MetricsReport]:
    """Metrics for one reporting mode.

    ``combined`` counts each deterministic ``(admin2_id, cell)`` placement as a correct
    prediction of its own cell, weighted by record; ``modeled_only`` ignores them.
    """
    outcomes = list(validation_outcomes)
    if mode == COMBINED:
        outcomes += [(a, c, c) for a, c in deterministic]
    elif mode != MODELED_ONLY:
        raise ValueError(f"unknown mode {mode!r}")
    return report_from_outcomes(outcomes, mode, averaging)


def both_reports(validation_outcomes, deterministic, averaging: str = "weighted") -> dict[str, Optional[MetricsReport]]:
    validation_outcomes = list(validation_outcomes)
    deterministic = list(deterministic)
    return {
        MODELED_ONLY: combined_report(validation_outcomes, deterministic, MODELED_ONLY, averaging),
        COMBINED: combined_report(validation_outcomes, deterministic, COMBINED, averaging),
    }


def metrics_document(reports: dict[str, Optional[MetricsReport]], extra: Optional[dict] = None) -> dict:
    doc = {mode: (r.to_dict() if r is not None else None) for mode, r in reports.items()}
    if extra:
        doc.update(extra)
    return doc


def format_text_report(reports: dict[str, Optional[MetricsReport]]) -> str:
    lines = [f"{'metric':<10} {MODELED_ONLY:>14} {COMBINED:>14}"]

    def cell(r, name):
        return f"{getattr(r, name):>14.4f}" if r is not None else f"{'absent':>14}"

    for name in ("accuracy", "f1", "precision", "recall"):
        lines.append(f"{name:<10} {cell(reports.get(MODELED_ONLY), name)} {cell(reports.get(COMBINED), name)}")
    sup = [reports.get(m).support if reports.get(m) else 0 for m in (MODELED_ONLY, COMBINED)]
    lines.append(f"{'support':<10} {sup[0]:>14d} {sup[1]:>14d}")
    return "\n".join(lines) + "\n"


def write_metrics(path, reports, extra: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_document(reports, extra), fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def evaluate_against_truth(placements: Iterable, truth: dict, admin2_of: Optional[dict] = None) -> dict[str, Optional[MetricsReport]]:
    """Score saved placements against known cells.

    ``modeled_only`` covers placements made by the model (fallbacks included);
    ``combined`` covers every placement with a known truth.
    """
    modeled, combined = [], []
    for p in placements:
        if p.record_id not in truth:
            continue
        admin2 = p.admin2_id or (admin2_of or {}).get(p.record_id, "")
        outcome = (admin2, truth[p.record_id], p.cell)
        combined.append(outcome)
        if p.method == "modeled":
            modeled.append(outcome)
    return {
        MODELED_ONLY: report_from_outcomes(modeled, MODELED_ONLY),
        COMBINED: report_from_outcomes(combined, COMBINED),
    }
