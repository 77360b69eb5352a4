"""Per-admin2 label spreading over record similarity graphs.

Each admin2 unit is its own problem: the candidate classes are the cells holding
the unit's buildings, features combine the unit's building shares with one-hot
demographics and a scaled year, and labels come from settlement-placed records.
Scores follow the soft-clamped update ``F <- alpha * S @ F + (1 - alpha) * Y``
started from ``F = Y``.
"""
from __future__ import annotations

import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigurationError, InputError, UnsolvableProblemError
from .evaluation import confusion, metrics
from .grid import GridCellId
from .records import MODELED, PlacementResult

logger = logging.getLogger(__name__)

MISSING = "__missing__"
DEFAULT_ATTRIBUTES = ("age_group", "gender", "ethnic_group")


class DegenerateGraphWarning(UserWarning):
    """Some records have no neighbours in the similarity graph."""


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[str, ...] = DEFAULT_ATTRIBUTES
    categories: Optional[dict[str, tuple[str, ...]]] = None
    year_range: Optional[tuple[int, int]] = None
    use_year: bool = True


@dataclass(frozen=True)
class Kernel:
    kind: str = "rbf"
    gamma: Optional[float] = None  # None -> 1 / n_features
    k: int = 10

    def __post_init__(self):
        if self.kind not in ("rbf", "knn"):
            raise ConfigurationError(f"unknown kernel {self.kind!r}")
        if self.kind == "knn" and self.k < 1:
            raise ConfigurationError("knn kernel needs k >= 1")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")


def _category_value(attrs, name) -> str:
    value = attrs.get(name) if attrs else None
    return MISSING if value in (None, "") else str(value)


def build_features(records: Sequence, proportion_row: Sequence[float], schema: AttributeSchema = AttributeSchema()) -> np.ndarray:
    """Feature matrix for the records of one admin2.

    Columns: the building shares in candidate order, then one one-hot block per
    schema attribute (observed categories sorted, with an explicit missing
    category last), then the min-max scaled year.
    """
    if len(proportion_row) == 0 and not schema.attributes:
        raise ConfigurationError("no spatial columns and no attributes to build features from")
    n = len(records)
    blocks = [np.tile(np.asarray(proportion_row, dtype=float), (n, 1))]
    for name in schema.attributes:
        values = [_category_value(r.attributes, name) for r in records]
        if schema.categories and name in schema.categories:
            known = [c for c in schema.categories[name] if c != MISSING]
            values = [v if v in known else MISSING for v in values]
        else:
            known = sorted({v for v in values if v != MISSING})
        cats = known + [MISSING]
        pos = {c: i for i, c in enumerate(cats)}
        block = np.zeros((n, len(cats)))
        block[np.arange(n), [pos[v] for v in values]] = 1.0
        blocks.append(block)
    if schema.use_year:
        years = np.array([r.year for r in records], dtype=float)
        if schema.year_range is not None:
            lo, hi = schema.year_range
        elif n:
            lo, hi = years.min(), years.max()
        else:
            lo = hi = 0
        span = float(hi - lo)
        scaled = np.zeros(n) if span == 0 else np.clip((years - lo) / span, 0.0, 1.0)
        blocks.append(scaled[:, None])
    return np.hstack(blocks) if n else np.zeros((0, sum(b.shape[1] for b in blocks)))


def build_similarity(features: np.ndarray, kernel: Kernel = Kernel()) -> np.ndarray:
    """Symmetrically normalised affinity ``D^-1/2 W D^-1/2`` with a zero diagonal.

    Rows with zero degree stay zero and trigger a :class:`DegenerateGraphWarning`.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("similarity needs a 2-D feature matrix with at least two rows")
    if not np.all(np.isfinite(X)):
        raise InputError("features contain non-finite values")
    n, d = X.shape
    sq = squareform(pdist(X, "sqeuclidean")) if d else np.zeros((n, n))
    if kernel.kind == "rbf":
        gamma = kernel.gamma if kernel.gamma is not None else 1.0 / max(d, 1)
        W = np.exp(-gamma * sq)
        np.fill_diagonal(W, 0.0)
    else:
        ranked = sq.copy()
        np.fill_diagonal(ranked, np.inf)
        order = np.argsort(ranked, axis=1, kind="stable")[:, : min(kernel.k, n - 1)]
        A = np.zeros((n, n))
        A[np.repeat(np.arange(n), order.shape[1]), order.ravel()] = 1.0
        W = np.maximum(A, A.T)
    degree = W.sum(axis=1)
    isolated = degree <= 0
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated rows in the similarity graph", DegenerateGraphWarning, stacklevel=2)
    inv_sqrt = np.zeros(n)
    inv_sqrt[~isolated] = 1.0 / np.sqrt(degree[~isolated])
    return inv_sqrt[:, None] * W * inv_sqrt[None, :]


@dataclass
class LabelSpreadProblem:
    features: np.ndarray
    labels: Sequence[Optional[int]]
    candidate_cells: Sequence[GridCellId]
    prior: Sequence[float]
    alpha: float = 0.9
    kernel: Kernel = field(default_factory=Kernel)
    tol: float = 1e-6
    max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if len(self.candidate_cells) == 0:
            raise ConfigurationError("no candidate cells")
        if len(self.prior) != len(self.candidate_cells):
            raise ConfigurationError("prior and candidate cells differ in length")
        if len(self.labels) != len(self.features):
            raise ConfigurationError("labels and features differ in length")
        k = len(self.candidate_cells)
        for lab in self.labels:
            if lab is not None and not 0 <= lab < k:
                raise ConfigurationError(f"label {lab} outside 0..{k - 1}")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")

    def label_matrix(self) -> np.ndarray:
        Y = np.zeros((len(self.labels), len(self.candidate_cells)))
        for i, lab in enumerate(self.labels):
            if lab is not None:
                Y[i, lab] = 1.0
        return Y


@dataclass
class SpreadResult:
    class_scores: np.ndarray
    predicted: np.ndarray  # class index per row
    predicted_cells: list[GridCellId]
    confidence: np.ndarray
    no_signal: np.ndarray
    iterations: int
    converged: bool


def _class_order(prior: Sequence[float], cells: Sequence[GridCellId]) -> list[int]:
    """Class indices ranked for tie-breaking: larger prior first, then smaller cell."""
    return sorted(range(len(cells)), key=lambda j: (-prior[j], cells[j].index))


def _argmax_with_ties(row: np.ndarray, order: list[int]) -> int:
    top = row.max()
    slack = 1e-12 * max(1.0, abs(top))
    for j in order:
        if row[j] >= top - slack:
            return j
    return order[0]


def spread(problem: LabelSpreadProblem, S: Optional[np.ndarray] = None) -> SpreadResult:
    """Iterate the soft-clamped update to a fixed point.

    Rows that carried a label report that label as their prediction; the raw scores
    are still returned in ``class_scores``.
    """
    labels = list(problem.labels)
    if not any(lab is not None for lab in labels):
        raise UnsolvableProblemError("no labeled rows")
    n = len(labels)
    if S is None:
        S = build_similarity(problem.features, problem.kernel) if n >= 2 else np.zeros((n, n))
    Y = problem.label_matrix()
    base = (1.0 - problem.alpha) * Y
    F = Y.copy()
    converged = False
    iterations = 0
    for iterations in range(1, problem.max_iter + 1):
        F_next = problem.alpha * (S @ F) + base
        change = float(np.max(np.abs(F_next - F))) if F.size else 0.0
        F = F_next
        if change < problem.tol:
            converged = True
            break

    order = _class_order(problem.prior, problem.candidate_cells)
    k = len(problem.candidate_cells)
    predicted = np.empty(n, dtype=int)
    confidence = np.empty(n)
    no_signal = np.zeros(n, dtype=bool)
    totals = F.sum(axis=1)
    for i in range(n):
        if totals[i] <= 0:
            no_signal[i] = True
            predicted[i] = labels[i] if labels[i] is not None else order[0]
            confidence[i] = 1.0 / k
            continue
        predicted[i] = labels[i] if labels[i] is not None else _argmax_with_ties(F[i], order)
        confidence[i] = min(1.0, max(0.0, F[i, predicted[i]] / totals[i]))
    return SpreadResult(
        class_scores=F,
        predicted=predicted,
        predicted_cells=[problem.candidate_cells[j] for j in predicted],
        confidence=confidence,
        no_signal=no_signal,
        iterations=iterations,
        converged=converged,
    )


def closed_form_scores(S: np.ndarray, Y: np.ndarray, alpha: float) -> np.ndarray:
    """Limit of the iteration, ``(1 - alpha) (I - alpha S)^-1 Y``."""
    n = S.shape[0]
    return (1.0 - alpha) * np.linalg.solve(np.eye(n) - alpha * S, Y)


@dataclass(frozen=True)
class SpreadConfig:
    alpha: float = 0.9
    kernel: Kernel = field(default_factory=Kernel)
    tol: float = 1e-6
    max_iter: int = 1000
    train_fraction: float = 0.8
    seed: int = 0
    schema: AttributeSchema = field(default_factory=AttributeSchema)

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigurationError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass
class ValidationReport:
    admin2_id: str
    n_labeled: int
    n_unlabeled: int
    n_train: int
    n_validation: int
    validated: bool
    outcomes: list[tuple[str, GridCellId, GridCellId]] = field(default_factory=list)
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    baseline_accuracy: Optional[float] = None
    iterations: int = 0
    converged: Optional[bool] = None
    no_signal: int = 0

    def to_dict(self) -> dict:
        return {
            "admin2_id": self.admin2_id,
            "n_labeled": self.n_labeled,
            "n_unlabeled": self.n_unlabeled,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "validated": self.validated,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "baseline_accuracy": self.baseline_accuracy,
            "iterations": self.iterations,
            "converged": self.converged,
            "no_signal": self.no_signal,
        }


def admin2_rng(seed: int, admin2_id: str) -> np.random.Generator:
    """Generator keyed on (seed, admin2) so results do not depend on processing order."""
    return np.random.default_rng([seed, zlib.crc32(admin2_id.encode("utf-8"))])


def validation_size(n_labeled: int, train_fraction: float) -> int:
    n_val = math.floor(n_labeled * (1.0 - train_fraction) + 1e-9)
    if n_labeled >= 5:
        n_val = max(1, n_val)
    return min(n_val, max(n_labeled - 1, 0))


def prior_argmax(cells: Sequence[GridCellId], prior: Sequence[float]) -> GridCellId:
    return cells[_class_order(prior, cells)[0]]


def sample_from_prior(rng: np.random.Generator, prior: Sequence[float], size: int) -> np.ndarray:
    p = np.asarray(prior, dtype=float)
    return rng.choice(len(p), size=size, p=p / p.sum())


def solve_admin2(
    labeled: Sequence[tuple],
    unlabeled: Sequence,
    proportion_row: Sequence[tuple[GridCellId, float]],
    cfg: SpreadConfig = SpreadConfig(),
    admin2_id: str = "",
) -> tuple[list[PlacementResult], ValidationReport]:
    """Validate, then place the unlabeled records of one admin2.

    ``labeled`` holds ``(record, cell)`` pairs and ``unlabeled`` holds records; items
    may be raw or resolved records (anything exposing ``record_id``, ``year`` and
    ``attributes`` directly or through ``.record``).
    """
    cells = [c for c, _ in proportion_row]
    prior = [v for _, v in proportion_row]
    col = {c: j for j, c in enumerate(cells)}
    labeled = sorted(((_raw(r), cell) for r, cell in labeled), key=lambda p: p[0].record_id)
    unlabeled = sorted((_raw(r) for r in unlabeled), key=lambda r: r.record_id)
    for rec, cell in labeled:
        if cell not in col:
            raise InputError(f"{admin2_id}: label {cell} of {rec.record_id} outside the building support")
    rng = admin2_rng(cfg.seed, admin2_id)
    n_lab, n_unl = len(labeled), len(unlabeled)
    report = ValidationReport(admin2_id, n_lab, n_unl, 0, 0, validated=False)

    if n_lab == 0:
        picks = sample_from_prior(rng, prior, n_unl)
        placements = [
            PlacementResult(r.record_id, cells[j], MODELED, float(prior[j]), fallback=True, admin2_id=admin2_id)
            for r, j in zip(unlabeled, picks)
        ]
        return placements, report

    records = [r for r, _ in labeled] + unlabeled
    X = build_features(records, prior, cfg.schema)
    label_idx = [col[cell] for _, cell in labeled]

    n_val = validation_size(n_lab, cfg.train_fraction)
    perm = rng.permutation(n_lab)
    val_rows, train_rows = sorted(perm[:n_val].tolist()), sorted(perm[n_val:].tolist())
    report.n_train, report.n_validation = len(train_rows), n_val

    if n_val:
        rows = train_rows + list(range(n_lab, n_lab + n_unl)) + val_rows
        labels = [label_idx[i] for i in train_rows] + [None] * (n_unl + n_val)
        result = spread(_problem(X[rows], labels, cells, prior, cfg))
        offset = len(train_rows) + n_unl
        truth = [cells[label_idx[i]] for i in val_rows]
        pred = [result.predicted_cells[offset + t] for t in range(n_val)]
        report.outcomes = [(labeled[i][0].record_id, t, p) for i, t, p in zip(val_rows, truth, pred)]
        m = metrics(confusion(truth, pred))
        report.accuracy, report.precision, report.recall, report.f1 = m
        base = prior_argmax(cells, prior)
        report.baseline_accuracy = sum(t == base for t in truth) / n_val
        report.validated = True

    if n_unl == 0:
        return [], report

    labels = label_idx + [None] * n_unl
    result = spread(_problem(X, labels, cells, prior, cfg))
    report.iterations, report.converged = result.iterations, result.converged
    placements = []
    for t, rec in enumerate(unlabeled):
        i = n_lab + t
        if result.no_signal[i]:
            j = int(sample_from_prior(rng, prior, 1)[0])
            placements.append(PlacementResult(rec.record_id, cells[j], MODELED, float(prior[j]), fallback=True, admin2_id=admin2_id))
            report.no_signal += 1
        else:
            placements.append(
                PlacementResult(rec.record_id, result.predicted_cells[i], MODELED, float(result.confidence[i]), admin2_id=admin2_id)
            )
    return placements, report


def _raw(item):
    return getattr(item, "record", item)


def _problem(X, labels, cells, prior, cfg: SpreadConfig) -> LabelSpreadProblem:
    return LabelSpreadProblem(
        features=X,
        labels=labels,
        candidate_cells=cells,
        prior=prior,
        alpha=cfg.alpha,
        kernel=cfg.kernel,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
    )
