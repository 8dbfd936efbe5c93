"""Experiment drivers: error scaling, matched accuracy, leaf timings.

Every driver returns rows whose non-timing fields depend only on the
configuration and seed.  Wall-clock columns are informational.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError
from .generators import (ExperimentConfig, dense_reference_product, error_norms,
                         gen_banded_decay, gen_random_blocksparse, iter_banded_leaves)
from .leaf import GemmCounter, leaf_multiply, predict_product_nonzero
from .multiply import Method, MultiplyRequest, run
from .quadtree import HierMatrix, leaf_insignificant_sum_sq

CSV_COLUMNS = ("method", "n", "task_size", "bs", "tau", "frob_error", "max_elem_error",
               "n_gemm", "flops", "bytes_sent_total", "bytes_sent_max", "wall_ms", "seed")
TIMING_COLUMNS = ("wall_ms",)
# references larger than this go to a disk-backed array
MEMMAP_BYTES = 256 * 2 ** 20
MIN_FIT_POINTS = 4


def fit_loglog_slope(points: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares slope of log10(y) against log10(x) and its standard error."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise InputError("a slope fit needs at least two points")
    if any(not (x > 0 and y > 0) for x, y in pts):
        raise InputError("log-log fit requires strictly positive coordinates")
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    if np.ptp(lx) == 0:
        raise InputError("all x values are equal")
    xm, ym = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - xm) ** 2))
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    if len(pts) == 2:
        return slope, 0.0
    resid = ly - (ym + slope * (lx - xm))
    stderr = math.sqrt(float(np.sum(resid ** 2)) / (len(pts) - 2) / sxx)
    return slope, stderr


@dataclass
class ErrorRow:
    method: str
    n: int
    task_size: int
    bs: int
    tau: float
    frob_error: float
    max_elem_error: float
    n_gemm: int
    flops: int
    bytes_sent_total: int
    bytes_sent_max: int
    wall_ms: float
    seed: int

    def values(self) -> List[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out


@dataclass
class ErrorReport:
    """Rows of one experiment plus whatever was derived from them.

    ``slopes`` maps a method to ``(slope, stderr)`` or ``None`` when the fit
    is undefined (too few positive points, or the exact method whose error
    is pure rounding).  ``selected``/``unmet``/``gemm_ratio`` are filled by
    the matched-accuracy driver.
    """

    rows: List[ErrorRow] = field(default_factory=list)
    slopes: Dict[str, Optional[Tuple[float, float]]] = field(default_factory=dict)
    selected: Dict[str, ErrorRow] = field(default_factory=dict)
    unmet: Dict[str, bool] = field(default_factory=dict)
    gemm_ratio: Dict[str, Optional[float]] = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for row in self.rows:
            wr.writerow(row.values())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


class DenseReference:
    """Dense ``a @ a`` kept in memory, or on disk once it is large."""

    def __init__(self, a: HierMatrix, b: Optional[HierMatrix] = None):
        n = a.n_logical
        self._dir = None
        out = None
        if n * n * 8 > MEMMAP_BYTES:
            self._dir = tempfile.TemporaryDirectory(prefix="spammkit-ref-")
            out = np.lib.format.open_memmap(os.path.join(self._dir.name, "ref.npy"),
                                            mode="w+", shape=(n, n))
        self.array = dense_reference_product(a, a if b is None else b, out=out)

    def close(self) -> None:
        self.array = None
        if self._dir is not None:
            self._dir.cleanup()
            self._dir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def model_matrix(cfg: ExperimentConfig, n: Optional[int] = None) -> HierMatrix:
    return gen_banded_decay(cfg.n if n is None else n, cfg.model, cfg.task_size, cfg.bs,
                            cfg.randomized, cfg.seed)


def measure(method, a: HierMatrix, reference: np.ndarray, tau: float,
            cfg: ExperimentConfig) -> ErrorRow:
    """Run one product of ``a`` with itself and compare it to ``reference``."""
    method = Method.parse(method)
    c, st = run(MultiplyRequest(method, a, a, tau), workers=cfg.workers, seed=cfg.seed,
                trace=cfg.trace)
    frob, worst = error_norms(reference, c)
    del c
    return ErrorRow(method.value, a.n_logical, a.task_size, a.bs, float(tau), frob, worst,
                    st.total_gemm, st.flops, st.bytes_sent_total, st.bytes_sent_max,
                    st.wall_s * 1e3, cfg.seed)


def _fit_or_none(points) -> Optional[Tuple[float, float]]:
    pts = list(points)
    if len(pts) < MIN_FIT_POINTS or any(y <= 0 for _, y in pts):
        return None
    return fit_loglog_slope(pts)


def _fit_methods(report: ErrorReport, xname: str) -> None:
    for m in dict.fromkeys(r.method for r in report.rows):
        if m == Method.EXACT.value:
            report.slopes[m] = None
            continue
        report.slopes[m] = _fit_or_none((getattr(r, xname), r.frob_error)
                                        for r in report.rows if r.method == m)


def run_error_vs_n(cfg: ExperimentConfig) -> ErrorReport:
    """Error at fixed ``cfg.tau`` for every size in ``cfg.n_list``."""
    cfg.validate()
    report = ErrorReport()
    for n in cfg.n_list or [cfg.n]:
        a = model_matrix(cfg, n)
        with DenseReference(a) as ref:
            for m in cfg.methods:
                report.rows.append(measure(m, a, ref.array, cfg.tau, cfg))
        del a
    _fit_methods(report, "n")
    return report


def check_tau_list(taus: Sequence[float], decades: float = 4.0) -> None:
    if any(not t > 0 for t in taus):
        raise InputError("tau sweep for a log-scale fit must be strictly positive")
    if math.log10(max(taus) / min(taus)) < decades - 1e-9:
        raise InputError(f"tau sweep must span at least {decades:g} decades")


def run_error_vs_tau(cfg: ExperimentConfig) -> ErrorReport:
    """Error at fixed ``cfg.n`` for every threshold in ``cfg.tau_list``."""
    cfg.validate()
    check_tau_list(cfg.tau_list)
    report = ErrorReport()
    a = model_matrix(cfg)
    with DenseReference(a) as ref:
        for m in cfg.methods:
            for tau in cfg.tau_list:
                report.rows.append(measure(m, a, ref.array, tau, cfg))
    _fit_methods(report, "tau")
    return report


def run_matched_accuracy(cfg: ExperimentConfig, a: Optional[HierMatrix] = None,
                         reference: Optional[np.ndarray] = None) -> ErrorReport:
    """Pick, per method, the largest tau whose error does not exceed ``cfg.sigma``.

    The sweep runs from the largest tau down and stops at the first hit,
    which is by definition the largest qualifying tau.  A method with no
    qualifying tau is marked unmet and reported at the smallest tau.
    ``report.rows`` holds the selected row of each method.
    """
    cfg.validate()
    report = ErrorReport()
    a = model_matrix(cfg) if a is None else a
    ref = None
    if reference is None:
        ref = DenseReference(a)
        reference = ref.array
    try:
        for m in cfg.methods:
            row = None
            for tau in cfg.tau_list:
                row = measure(m, a, reference, tau, cfg)
                if row.frob_error <= cfg.sigma:
                    break
            report.selected[row.method] = row
            report.unmet[row.method] = not row.frob_error <= cfg.sigma
            report.rows.append(row)
    finally:
        if ref is not None:
            ref.close()
    base = report.selected.get(Method.TRUNCMUL.value)
    for m, row in report.selected.items():
        ok = base is not None and base.n_gemm > 0 and not report.unmet[Method.TRUNCMUL.value]
        report.gemm_ratio[m] = row.n_gemm / base.n_gemm if ok else None
    return report


# leaf library timings --------------------------------------------------------

LEAF_COLUMNS = ("n", "bs", "fill", "n_blocks", "n_gemm", "flops", "predict_s", "multiply_s",
                "gflops", "predict_ratio")
LEAF_TIMING_COLUMNS = ("predict_s", "multiply_s", "gflops", "predict_ratio")
DEFAULT_FILLS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0)


def _best_time(fn, repeats: int) -> Tuple[float, object]:
    best, out = math.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_leaf_bench(n: int = 2048, bs_list: Sequence[int] = (64, 256),
                   fill_list: Sequence[float] = DEFAULT_FILLS, seed: int = 0,
                   repeats: int = 3) -> List[dict]:
    """Time the structural predictor and the batched multiply per (bs, fill)."""
    rows = []
    for bs in bs_list:
        for fill in fill_list:
            a = gen_random_blocksparse(n, bs, fill, seed)
            b = gen_random_blocksparse(n, bs, fill, seed + 1)
            t_pred, _ = _best_time(lambda: predict_product_nonzero(a, b), max(repeats, 20))
            counter = GemmCounter()

            def mult():
                counter.n_gemm = 0
                return leaf_multiply(a, b, counter)

            t_mult, _ = _best_time(mult, repeats)
            flops = counter.flops(bs)
            rows.append({
                "n": n, "bs": bs, "fill": fill, "n_blocks": a.n_blocks,
                "n_gemm": counter.n_gemm, "flops": flops,
                "predict_s": t_pred, "multiply_s": t_mult,
                "gflops": flops / t_mult / 1e9 if t_mult > 0 else 0.0,
                "predict_ratio": t_mult / t_pred if t_pred > 0 else math.inf,
            })
    return rows


# insignificant-element probe -------------------------------------------------

PROBE_COLUMNS = ("kind", "n", "eps", "sum_sq")


def banded_insignificant_sums(n: int, eps_list: Sequence[float], cfg: ExperimentConfig
                              ) -> List[float]:
    """Sum of squares of entries with magnitude <= eps, one value per eps.

    Tiles are generated and discarded one by one, so ``n`` is limited by
    time rather than memory.
    """
    sums = [0.0] * len(eps_list)
    for _, _, leaf in iter_banded_leaves(n, cfg.model, cfg.task_size, cfg.bs,
                                         cfg.randomized, cfg.seed):
        for k, eps in enumerate(eps_list):
            sums[k] += leaf_insignificant_sum_sq(leaf, eps)
    return sums


@dataclass
class ProbeReport:
    rows: List[Tuple[str, int, float, float]] = field(default_factory=list)
    slope_n: Optional[Tuple[float, float]] = None
    slope_eps: Optional[Tuple[float, float]] = None


def run_probe(cfg: ExperimentConfig, n_list: Sequence[int], eps: float,
                     eps_list: Sequence[float], n_eps: int) -> ProbeReport:
    """Growth of the insignificant sum in ``n`` (fixed eps) and in eps (fixed n)."""
    cfg.validate()
    check_tau_list(eps_list, decades=1.0)
    report = ProbeReport()
    for n in n_list:
        report.rows.append(("n", n, eps, banded_insignificant_sums(n, [eps], cfg)[0]))
    for e, s in zip(eps_list, banded_insignificant_sums(n_eps, eps_list, cfg)):
        report.rows.append(("eps", n_eps, e, s))
    report.slope_n = _fit_or_none((r[1], r[3]) for r in report.rows if r[0] == "n")
    report.slope_eps = _fit_or_none((r[2], r[3]) for r in report.rows if r[0] == "eps")
    return report


def rows_csv(columns: Sequence[str], rows: Iterable) -> str:
    """CSV text for dict rows (looked up by column) or plain sequences."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for row in rows:
        vals = [row[c] for c in columns] if isinstance(row, dict) else list(row)
        wr.writerow(repr(v) if isinstance(v, float) else v for v in vals)
    return buf.getvalue()
