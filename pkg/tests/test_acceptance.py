"""Acceptance suite: ten end-to-end checks, each reporting one PASS/FAIL line."""
import filecmp
import math
import time
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from dispgrid.cli import main
from dispgrid.evaluation import COMBINED, MODELED_ONLY, confusion, metrics
from dispgrid.grid import AdminLevel, AdminUnit, GeoPoint, GridCellId, GridSpec, cells_intersecting
from dispgrid.matching import levenshtein_distance, passes_threshold, similarity_ratio
from dispgrid.pipeline import PipelineConfig, PipelineInputs, execute, load_config, run_pipeline
from dispgrid.records import ADMIN3_DETERMINISTIC
from dispgrid.spreading import (
    AttributeSchema,
    Kernel,
    LabelSpreadProblem,
    SpreadConfig,
    build_similarity,
    closed_form_scores,
    spread,
)
from dispgrid.synthetic import WorldConfig, generate_synthetic, write_world
from dispgrid.weights import assign_buildings, build_proportion_matrix

from .conftest import ACCEPTANCE_LINES
from .oracles import all_strings, naive_levenshtein_table


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def pipeline_run(seed, signal, single_cell_units=0):
    world = generate_synthetic(WorldConfig(signal_strength=signal, single_cell_units=single_cell_units), seed)
    cfg = PipelineConfig(model=SpreadConfig(seed=seed, schema=AttributeSchema(year_range=world.config.year_range)))
    result = execute(PipelineInputs(world.units, world.buildings, world.settlements, world.records, {}), cfg)
    return world, result


def pooled_validation(result):
    n = sum(v.n_validation for v in result.validation if v.validated)
    hits = sum(sum(t == p for _, t, p in v.outcomes) for v in result.validation)
    base = sum(v.baseline_accuracy * v.n_validation for v in result.validation if v.validated)
    return hits / n, base / n


def test_levenshtein_oracle_and_ratio_boundary():
    start = time.perf_counter()
    strings = all_strings("abc", 6)
    mismatches = 0
    for a in strings:
        ours = [levenshtein_distance(a, b) for b in strings]
        mismatches += sum(x != y for x, y in zip(ours, naive_levenshtein_table(a, strings)))
    elapsed = time.perf_counter() - start
    ratio = similarity_ratio("kitten", "sitting")
    ok = (
        mismatches == 0
        and elapsed < 60
        and abs(ratio - (1 - 3 / 7) * 100) <= 1e-9
        and abs(ratio - 57.142857) <= 5e-7
        and passes_threshold(80.0, 80.0)
        and not passes_threshold(79.999, 80.0)
        and similarity_ratio("arssi", "arsi") == 80.0
    )
    report(1, "Levenshtein oracle", ok,
           f"{len(strings) ** 2} pairs, {mismatches} mismatches, {elapsed:.1f}s; kitten/sitting = {ratio:.9f}; 80 admits, 79.999 rejects")


def test_spread_matches_closed_form():
    rng = np.random.default_rng(2024)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        n, k, d = int(rng.integers(2, 21)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        X = rng.random((n, d))
        labels = [int(rng.integers(k)) if rng.random() < 0.4 else None for _ in range(n)]
        labels[int(rng.integers(n))] = int(rng.integers(k))
        kernel = Kernel(kind="knn", k=int(rng.integers(1, n))) if rng.random() < 0.3 else Kernel(gamma=float(rng.uniform(0.5, 5)))
        p = LabelSpreadProblem(X, labels, [GridCellId(i) for i in range(k)], [1.0 / k] * k,
                               alpha=float(rng.uniform(0.1, 0.99)), kernel=kernel, tol=1e-13, max_iter=1_000_000)
        S = build_similarity(X, kernel)
        res = spread(p, S)
        worst = max(worst, float(np.max(np.abs(res.class_scores - closed_form_scores(S, p.label_matrix(), p.alpha)))))
    elapsed = time.perf_counter() - start
    report(2, "label-spreading fixed point", worst <= 1e-8, f"200 problems, max |F - closed form| = {worst:.2e}, {elapsed:.1f}s")


def _star(rng, cx, cy, radius):
    n = int(rng.integers(3, 12))
    # one vertex per jittered sector keeps every angular gap below pi, so the ring is star-shaped and simple
    angles = (np.arange(n) + rng.uniform(0, 0.5, n)) * (2 * math.pi / n)
    radii = rng.uniform(0.2, 1.0, n) * radius
    ring = [(float(cx + r * math.cos(a)), float(cy + r * math.sin(a))) for a, r in zip(angles, radii)]
    return tuple(ring + [ring[0]])


def test_row_stochastic_with_support():
    rng = np.random.default_rng(77)
    g = GridSpec(origin_lon=0.0, origin_lat=0.0, n_cols=20, n_rows=20)
    worst, violations, rows = 0.0, 0, 0
    for _ in range(100):
        units = []
        for i in range(int(rng.integers(1, 5))):
            cx, cy = rng.uniform(2, 8, size=2)
            ring = _star(rng, cx, cy, float(rng.uniform(0.2, 2.0)))
            units.append(AdminUnit("TST", AdminLevel.ADMIN2, f"u{i}", f"U{i}", "P", ((ring,),)))
        pts = [GeoPoint(float(x), float(y)) for x, y in rng.uniform(0, 10, size=(600, 2))]
        m, _ = build_proportion_matrix(assign_buildings(pts, units, g)[0])
        for u in units:
            if u.canonical_id not in m:
                continue
            rows += 1
            worst = max(worst, abs(sum(v for _, v in m.row(u.canonical_id)) - 1.0))
            violations += not set(m.support(u.canonical_id)) <= cells_intersecting(u, g)
    report(3, "row-stochastic proportions", worst <= 1e-9 and violations == 0 and rows > 100,
           f"{rows} rows over 100 geometries, max |row sum - 1| = {worst:.1e}, support violations {violations}")


def test_conservation():
    problems = []
    for seed in range(10):
        _, result = pipeline_run(seed, 0.5)
        sizes = result.partition.sizes()
        placed = len(result.placements)
        if placed != len(result.resolved) or sum(sizes.values()) != len(result.resolved) or result.counts.total != placed:
            problems.append(seed)
    report(4, "conservation", not problems, f"10 seeds x 10,000 records, mismatching seeds: {problems or 'none'}")


def test_deterministic_path_exact():
    checked = wrong = 0
    for seed, single in ((0, 0), (1, 3)):
        world, result = pipeline_run(seed, 0.5, single)
        for p in result.placements:
            if p.method == ADMIN3_DETERMINISTIC:
                checked += 1
                wrong += world.truth[p.record_id] != p.cell
    report(5, "deterministic-path exactness", wrong == 0 and checked > 0,
           f"{checked} admin3 placements, accuracy {1 - wrong / checked:.4f}")


@pytest.mark.slow
def test_model_versus_prior_baseline():
    gains = {}
    for signal in (0.5, 0.0):
        acc, base = zip(*(pooled_validation(pipeline_run(seed, signal)[1]) for seed in range(20)))
        gains[signal] = (float(np.mean(acc)), float(np.mean(base)))
    (a5, b5), (a0, b0) = gains[0.5], gains[0.0]
    ok = a5 >= b5 and abs(a0 - b0) <= 0.05
    report(6, "model vs prior baseline", ok,
           f"signal 0.5: {a5:.4f} vs {b5:.4f}; signal 0: {a0:.4f} vs {b0:.4f} (20 seeds each)")


def test_combined_uplift_direction():
    cases = held = 0
    for seed in range(10):
        _, result = pipeline_run(seed, 0.5, 2)
        modeled, combined = result.reports[MODELED_ONLY], result.reports[COMBINED]
        if result.partition.deterministic and modeled is not None and modeled.accuracy < 1:
            cases += 1
            held += combined.accuracy > modeled.accuracy
    report(7, "combined uplift direction", cases > 0 and held == cases, f"{held}/{cases} runs with combined > modeled-only")


def test_metrics_exact():
    pairs = [("A", "A")] * 8 + [("A", "B")] * 2 + [("B", "A")] * 3 + [("B", "B")] * 7
    m = metrics(confusion([t for t, _ in pairs], [p for _, p in pairs]))
    expected = (0.75, float((Fraction(8, 11) + Fraction(7, 9)) / 2), 0.75, float((Fraction(16, 21) + Fraction(14, 19)) / 2))
    xs = list("abcaabbbcd")
    perfect = tuple(metrics(confusion(xs, xs)))
    report(8, "metrics correctness", tuple(m) == expected and perfect == (1.0, 1.0, 1.0, 1.0),
           f"[[8,2],[3,7]] -> {tuple(round(v, 6) for v in m)}; perfect -> {perfect}")


def test_reproducible_outputs(tmp_path):
    world = generate_synthetic(WorldConfig(n_units=5, records_per_unit=400, signal_strength=0.3, single_cell_units=1, empty_units=1), 11)
    paths = write_world(world, tmp_path / "world")
    for name in ("a", "b"):
        run_pipeline(load_config(paths["config"], out_dir=str(tmp_path / name)))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    report(9, "reproducibility", not mismatch and not errors and len(match) == len(names) >= 10,
           f"{len(match)}/{len(names)} output files byte-identical")


@pytest.mark.slow
def test_desk_scale_runtime(tmp_path):
    start = time.perf_counter()
    codes = [
        main(["synth", "--out", str(tmp_path / "w"), "--units", "10", "--records-per-unit", "1000", "--signal", "0.5", "--seed", "3"]),
        main(["run", "--config", str(tmp_path / "w" / "config.ini"), "--out", str(tmp_path / "out")]),
        main(["evaluate", "--placements", str(tmp_path / "out" / "placements.csv"), "--truth", str(tmp_path / "w" / "truth.csv")]),
    ]
    elapsed = time.perf_counter() - start
    report(10, "desk-scale runtime", codes == [0, 0, 0] and elapsed < 300,
           f"synth + run + evaluate on 10 units x 1,000 records in {elapsed:.1f}s (exit codes {codes})")
