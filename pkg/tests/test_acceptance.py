"""Acceptance gate: one test and one PASS/FAIL line per criterion.

The large experiments share one n=16384 model matrix and its dense product,
kept on disk.  Runtime budgets are reported next to each verdict but do
not decide it.
"""

import csv
import io
import math
import time

import numpy as np
import pytest

import test_properties as props
from oracles import hybrid_oracle, random_decay, rel_fro, spamm_oracle, truncmul_oracle
from spammkit import (LeafMatrix, MultiplyRequest, build_from_dense, gen_random_blocksparse,
                      leaf_multiply, predict_product_nonzero, run)
from spammkit.bench import (DenseReference, _best_time, fit_loglog_slope, measure, model_matrix,
                            run_error_vs_tau, run_probe, run_matched_accuracy)
from spammkit.generators import ExperimentConfig

METHODS = ("truncmul", "spamm", "hybrid")
BIG_N = 16384
BIG_LAYOUT = dict(task_size=2048, bs=128)
SWEEP = [10.0 ** -k for k in range(4, 13)]


def layout_for(n):
    return dict(task_size=min(2048, max(n, 128)), bs=128)


@pytest.fixture(scope="module")
def big():
    """Model matrix at n=16384 with its dense square on disk."""
    cfg = ExperimentConfig(n=BIG_N, workers=8, sigma=1e-6, tau_list=SWEEP,
                           methods=list(METHODS), **BIG_LAYOUT)
    t0 = time.perf_counter()
    a = model_matrix(cfg)
    ref = DenseReference(a)
    setup = time.perf_counter() - t0
    yield cfg, a, ref.array, setup
    ref.close()


@pytest.fixture(scope="module")
def matched(big):
    cfg, a, ref, setup = big
    t0 = time.perf_counter()
    report = run_matched_accuracy(cfg, a, ref)
    return report, setup + time.perf_counter() - t0


def test_criterion_01_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for case in range(50):
        n = int(rng.integers(1, 513))
        ts = int(rng.choice([32, 64, 128]))
        bs = int(rng.choice([b for b in (8, 16, 32) if b <= ts and (n <= 256 or b >= 16)]))
        d = random_decay(rng, n)
        tau = float(10.0 ** rng.uniform(-8, -2))
        m = build_from_dense(d, ts, bs)
        exact, _ = run(MultiplyRequest("exact", m, m), workers=int(rng.integers(1, 5)))
        if not rel_fro(exact.to_dense(), d @ d) <= 1e-10:
            failures.append((case, "exact"))
        oracles = {"spamm": spamm_oracle(d, d, tau, ts, bs),
                   "truncmul": truncmul_oracle(d, d, tau, ts, bs),
                   "hybrid": hybrid_oracle(d, d, tau, ts, bs)}
        for method, expected in oracles.items():
            got, _ = run(MultiplyRequest(method, m, m, tau), workers=int(rng.integers(1, 5)))
            if not np.array_equal(got.to_dense(), expected):
                failures.append((case, method))
    elapsed = time.perf_counter() - t0
    ok = verdict(1, not failures, f"50 instances, mismatches {failures or 'none'}", elapsed, 120)
    assert ok


def test_criterion_02_exact_at_zero_tau(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = []
    for case in range(20):
        n = int(rng.integers(16, 300))
        ts, bs = [(32, 8), (64, 16), (64, 32), (128, 16)][case % 4]
        m = build_from_dense(random_decay(rng, n, fill=float(rng.uniform(0.2, 1))), ts, bs)
        ref, _ = run(MultiplyRequest("exact", m, m), workers=1)
        ref = ref.to_dense()
        for method in METHODS:
            for workers in (1, 2, 8):
                got, _ = run(MultiplyRequest(method, m, m, 0.0), workers=workers)
                if not np.array_equal(got.to_dense(), ref):
                    bad.append((case, method, workers))
    elapsed = time.perf_counter() - t0
    ok = verdict(2, not bad, f"20 instances x 3 methods x workers 1/2/8, "
                 f"differences {bad or 'none'}", elapsed, 60)
    assert ok


def test_criterion_03_error_vs_n_slope(verdict, big):
    t0 = time.perf_counter()
    cfg_big, a_big, ref_big, setup = big
    errors = {m: [] for m in METHODS}
    for n in (1024, 2048, 4096, 8192, BIG_N):
        cfg = ExperimentConfig(n=n, workers=8, tau=1e-6, **layout_for(n))
        if n == BIG_N:
            for m in METHODS:
                errors[m].append((n, measure(m, a_big, ref_big, 1e-6, cfg).frob_error))
            continue
        a = model_matrix(cfg)
        with DenseReference(a) as ref:
            for m in METHODS:
                errors[m].append((n, measure(m, a, ref.array, 1e-6, cfg).frob_error))
    slopes = {}
    for m, pts in errors.items():
        slopes[m] = fit_loglog_slope(pts)[0] if all(e > 0 for _, e in pts) else math.nan
    ok = all(0.4 <= s <= 0.6 for s in slopes.values())
    detail = "; ".join(f"{m} slope {slopes[m]:.3f} (errors "
                       + ", ".join(f"{e:.2e}" for _, e in errors[m]) + ")" for m in METHODS)
    verdict(3, ok, f"target [0.4, 0.6]: {detail}", time.perf_counter() - t0 + setup, 900)
    assert ok


def test_criterion_04_error_vs_tau_slope(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(n=8192, workers=8, methods=list(METHODS),
                           tau_list=[10.0 ** -k for k in range(4, 11)], **layout_for(8192))
    report = run_error_vs_tau(cfg)
    slopes = {m: report.slopes[m][0] if report.slopes[m] else math.nan for m in METHODS}
    ok = all(0.9 <= s <= 1.05 for s in slopes.values())
    detail = ", ".join(f"{m} {s:.3f}" for m, s in slopes.items())
    verdict(4, ok, f"target [0.9, 1.05]: {detail}", time.perf_counter() - t0, 600)
    assert ok


def test_criterion_05_insignificant_sum(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(task_size=1024, bs=128)
    report = run_probe(cfg, [16384, 32768, 65536, 131072], 1e-4,
                              [10.0 ** -k for k in range(4, 11)], 8192)
    s_n, s_eps = report.slope_n[0], report.slope_eps[0]
    ok = 0.9 <= s_n <= 1.1 and 1.8 <= s_eps <= 2.05
    verdict(5, ok, f"slope vs n {s_n:.3f} (target [0.9, 1.1]), slope vs eps {s_eps:.3f} "
            f"(target [1.8, 2.05])", time.perf_counter() - t0, 300)
    assert ok


def test_criterion_06_elementwise_bound(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(n=4096, workers=8, **layout_for(4096))
    a = model_matrix(cfg)
    taus = [10.0 ** -k for k in range(4, 9)]
    spread = {}
    with DenseReference(a) as ref:
        for m in METHODS:
            ratios = [measure(m, a, ref.array, t, cfg).max_elem_error / t for t in taus]
            spread[m] = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    ok = all(s <= 3 for s in spread.values())
    detail = ", ".join(f"{m} {s:.2f}" for m, s in spread.items())
    verdict(6, ok, f"max/min of max|E|/tau (target <= 3): {detail}",
            time.perf_counter() - t0, 300)
    assert ok


def test_criterion_07_gemm_reduction(verdict, matched):
    report, elapsed = matched
    sel = report.selected
    ratio = report.gemm_ratio
    ok = (not any(report.unmet.values())
          and ratio["spamm"] is not None and ratio["spamm"] <= 0.8
          and ratio["hybrid"] is not None and ratio["hybrid"] <= 0.8)
    detail = "; ".join(
        f"{m} tau={sel[m].tau:g} err={sel[m].frob_error:.2e} n_gemm={sel[m].n_gemm}"
        + ("" if ratio[m] is None else f" ({100 * ratio[m]:.1f}%)") for m in METHODS)
    verdict(7, ok, f"target ratio <= 0.8: {detail}", elapsed, 600)
    assert ok


def test_criterion_08_communication(verdict, matched):
    report, elapsed = matched
    h = report.selected["hybrid"].bytes_sent_total
    s = report.selected["spamm"].bytes_sent_total
    ok = h < s and not any(report.unmet.values())
    verdict(8, ok, f"bytes sent hybrid {h} vs spamm {s} (ratio {h / s:.3f})", elapsed, 600)
    assert ok


def strip(text, drop):
    rows = list(csv.reader(io.StringIO(text)))
    keep = [i for i, c in enumerate(rows[0]) if c not in drop]
    return [[r[i] for i in keep] for r in rows]


def test_criterion_09_determinism(verdict):
    t0 = time.perf_counter()
    texts = {}
    for workers, rep in [(8, 0), (8, 1), (4, 0), (1, 0)]:
        cfg = ExperimentConfig(n=2048, task_size=512, bs=64, workers=workers, seed=5,
                               methods=list(METHODS), tau_list=[10.0 ** -k for k in range(4, 9)])
        texts[(workers, rep)] = run_error_vs_tau(cfg).csv_text()
    timing = {"wall_ms"}
    movement = timing | {"bytes_sent_total", "bytes_sent_max"}
    rerun_same = strip(texts[(8, 0)], timing) == strip(texts[(8, 1)], timing)
    across = all(strip(texts[(w, 0)], movement) == strip(texts[(8, 0)], movement)
                 for w in (1, 4))
    ok = rerun_same and across
    verdict(9, ok, f"rerun identical: {rerun_same}; workers 1/4/8 identical apart from "
            f"data movement: {across}", time.perf_counter() - t0, 300)
    assert ok


def test_criterion_10_predictor(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    unsound = 0
    for _ in range(1000):
        side = int(rng.choice([8, 16, 32]))
        nb = side // 2
        pa = [(i, j) for i in range(nb) for j in range(nb) if rng.random() < 0.15]
        pb = [(i, j) for i in range(nb) for j in range(nb) if rng.random() < 0.15]
        a = LeafMatrix.from_blocks(side, 2, {p: rng.uniform(-1, 1, (2, 2)) for p in pa})
        b = LeafMatrix.from_blocks(side, 2, {p: rng.uniform(-1, 1, (2, 2)) for p in pb})
        if not predict_product_nonzero(a, b) and not leaf_multiply(a, b).is_empty:
            unsound += 1
    x = gen_random_blocksparse(2048, 64, 0.2, seed=1)
    y = gen_random_blocksparse(2048, 64, 0.2, seed=2)
    t_pred, _ = _best_time(lambda: predict_product_nonzero(x, y), 50)
    t_mult, _ = _best_time(lambda: leaf_multiply(x, y), 3)
    ratio = t_mult / t_pred
    ok = unsound == 0 and ratio >= 50
    verdict(10, ok, f"unsound predictions {unsound}/1000; multiply/predict time ratio "
            f"{ratio:.0f} (target >= 50)", time.perf_counter() - t0, 180)
    assert ok


PROPERTY_TESTS = [
    props.test_norm_additivity, props.test_truncation_monotone, props.test_empty_pruning_sound,
    props.test_band_distance_axioms, props.test_euclidean_distance_axioms,
    props.test_flops_formula,
]


def test_criterion_11_structural_invariants(verdict):
    t0 = time.perf_counter()
    failed = []
    for prop in PROPERTY_TESTS:
        try:
            prop()
        except Exception as exc:  # noqa: BLE001 - report every property
            failed.append(f"{prop.__name__}: {type(exc).__name__}")
    ok = not failed
    verdict(11, ok, f"{len(PROPERTY_TESTS)} properties x 1000 cases, failures "
            f"{failed or 'none'}", time.perf_counter() - t0, 300)
    assert ok
