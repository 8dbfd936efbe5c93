"""Test problems and the dense reference product."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .decay import DecayModel
from .errors import InputError, SizeError
from .leaf import LeafMatrix
from .quadtree import HierMatrix, check_sizes

DENSE_GUARD = 2 ** 14


@dataclass
class ExperimentConfig:
    """Parameters shared by the benchmark drivers."""

    n: int = 1024
    n_list: List[int] = field(default_factory=list)
    task_size: int = 256
    bs: int = 32
    methods: List[str] = field(default_factory=lambda: ["truncmul", "spamm", "hybrid"])
    tau_list: List[float] = field(default_factory=lambda: [10.0 ** -k for k in range(4, 13)])
    tau: float = 1e-6
    sigma: float = 1e-6
    seed: int = 0
    workers: int = 1
    alpha: float = 0.005
    c: float = 1.0
    cutoff: float = 1e-16
    randomized: bool = False
    out: Optional[str] = None
    trace: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        taus = list(self.tau_list)
        if any(b >= a for a, b in zip(taus, taus[1:])):
            raise InputError("tau list must be strictly decreasing")
        if not self.sigma > 0:
            raise InputError(f"target accuracy sigma must be positive, got {self.sigma}")
        check_sizes(self.task_size, self.bs)
        return self

    @property
    def model(self) -> DecayModel:
        return DecayModel(c=self.c, alpha=self.alpha, zero_cutoff=self.cutoff)


def _tile_scaling(rng_seed: int, ti: int, tj: int, ts: int) -> np.ndarray:
    """Symmetric-consistent uniform(0.5, 1) scale factors for tile (ti, tj)."""
    lo, hi = (ti, tj) if ti <= tj else (tj, ti)
    rng = np.random.default_rng([rng_seed, lo, hi])
    s = rng.uniform(0.5, 1.0, size=(ts, ts))
    if lo == hi:
        s = np.triu(s) + np.triu(s, 1).T
    elif ti > tj:
        s = s.T
    return s


def iter_banded_leaves(n: int, model: Optional[DecayModel] = None, task_size: int = 256,
                       bs: int = 32, randomized: bool = False, seed: int = 0):
    """Yield ``(ti, tj, leaf)`` for every nonempty tile of the decay matrix.

    Tiles are produced one at a time, so quantities that are additive over
    tiles can be computed for sizes that would not fit in memory.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InputError(f"matrix dimension must be >= 1, got {n!r}")
    model = model or DecayModel()
    check_sizes(task_size, bs)
    ts = task_size
    ntiles = HierMatrix(n, task_size, bs).ntiles
    halfwidth = model.band_halfwidth() if model.is_banded else math.inf
    for ti in range(ntiles):
        r0 = ti * ts
        if r0 >= n:
            break
        rows = np.arange(r0, r0 + ts)
        for tj in range(ntiles):
            c0 = tj * ts
            if c0 >= n:
                break
            gap = max(0, max(r0, c0) - min(r0, c0) - (ts - 1))
            if gap > halfwidth:
                continue
            cols = np.arange(c0, c0 + ts)
            rr, cc = np.meshgrid(np.minimum(rows, n - 1), np.minimum(cols, n - 1), indexing="ij")
            tile = model.c * np.exp(-model.alpha * model.distance(rr, cc))
            if randomized:
                tile *= _tile_scaling(seed, ti, tj, ts)
            tile[np.abs(tile) < model.zero_cutoff] = 0.0
            if rows[-1] >= n:
                tile[n - r0:, :] = 0.0
            if cols[-1] >= n:
                tile[:, n - c0:] = 0.0
            leaf = LeafMatrix.from_dense(tile, bs)
            if not leaf.is_empty:
                yield ti, tj, leaf


def gen_banded_decay(n: int, model: Optional[DecayModel] = None, task_size: int = 256,
                     bs: int = 32, randomized: bool = False, seed: int = 0) -> HierMatrix:
    """Symmetric matrix with ``a_ij = c * exp(-alpha * d(i, j))``.

    Entries whose magnitude falls below ``model.zero_cutoff`` are dropped.
    With ``randomized`` each entry is additionally scaled by a seeded
    uniform(0.5, 1) factor, keeping symmetry.
    """
    leaves = {(ti, tj): leaf for ti, tj, leaf in
              iter_banded_leaves(n, model, task_size, bs, randomized, seed)}
    return HierMatrix.from_leaves(n, task_size, bs, leaves)


def gen_random_blocksparse(n: int, bs: int, fill: float, seed: int = 0) -> LeafMatrix:
    """Leaf matrix with ``round(fill * (n/bs)**2)`` uniformly placed uniform(-1, 1) blocks."""
    if not 0.0 <= fill <= 1.0:
        raise InputError(f"fill must lie in [0, 1], got {fill}")
    if bs < 1 or n % bs:
        raise InputError(f"block size {bs} does not divide {n}")
    nb = n // bs
    count = int(round(fill * nb * nb))
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(nb * nb, size=count, replace=False))
    blocks = {}
    for p in picks:
        blk = rng.uniform(-1.0, 1.0, size=(bs, bs))
        blocks[(int(p) // nb, int(p) % nb)] = blk
    return LeafMatrix.from_blocks(n, bs, blocks)


def dense_reference_product(a: HierMatrix, b: HierMatrix, guard: int = DENSE_GUARD,
                            out: Optional[np.ndarray] = None, stripe: int = 2048) -> np.ndarray:
    """``a @ b`` by dense stripe products; shares no arithmetic with the tree multiply.

    Only one row stripe of ``a`` and one column stripe of ``b`` are dense at
    a time.  ``out`` may be a preallocated (possibly memory-mapped) array.
    """
    if a.n_logical != b.n_logical:
        raise InputError("dimension mismatch")
    n = a.n_logical
    if n > guard:
        raise SizeError(f"n={n} exceeds the dense reference guard {guard}")
    if out is None:
        out = np.empty((n, n))
    elif out.shape != (n, n):
        raise InputError(f"out has shape {out.shape}, expected {(n, n)}")
    if n <= stripe:
        out[:] = a.to_dense() @ b.to_dense()
        return out
    for r in range(0, n, stripe):
        rows = a.dense_window(r, r + stripe, 0, n)
        for c in range(0, n, stripe):
            out[r:r + stripe, c:c + stripe] = rows @ b.dense_window(0, n, c, c + stripe)
        del rows
    return out


def error_norms(reference: np.ndarray, approx: HierMatrix, stripe: int = 1024):
    """Frobenius and max-abs norms of ``reference - approx``, streamed tile by tile."""
    n = approx.n_logical
    if reference.shape != (n, n):
        raise InputError("reference shape does not match")
    ts = approx.task_size
    leaves = {(i, j): leaf for i, j, leaf in approx.iter_leaves()}
    total = 0.0
    worst = 0.0
    for ti in range(0, (n + ts - 1) // ts):
        r0 = ti * ts
        h = min(ts, n - r0)
        ref_rows = np.asarray(reference[r0:r0 + h])
        for tj in range(0, (n + ts - 1) // ts):
            c0 = tj * ts
            w = min(ts, n - c0)
            diff = np.array(ref_rows[:, c0:c0 + w])
            leaf = leaves.get((ti, tj))
            if leaf is not None:
                bs = leaf.bs
                for bi, bj, blk in leaf.iter_blocks():
                    rr, cc = bi * bs, bj * bs
                    if rr >= h or cc >= w:
                        continue
                    diff[rr:rr + bs, cc:cc + bs] -= blk[:h - rr, :w - cc]
            flat = diff.ravel()
            total += float(np.dot(flat, flat))
            if flat.size:
                worst = max(worst, float(np.max(np.abs(flat))))
    return math.sqrt(total), worst


def scalar_truncate(values: np.ndarray, tau: float) -> np.ndarray:
    """Element-wise reference for truncation: zero entries with |a| < tau."""
    out = np.array(values, dtype=np.float64)
    out[np.abs(out) < tau] = 0.0
    return out


def decay_bound_holds(m: HierMatrix, model: DecayModel, rtol: float = 1e-12) -> bool:
    """Check |a_ij| <= c exp(-alpha d(i, j)) for every stored entry."""
    ts = m.task_size
    for ti, tj, leaf in m.iter_leaves():
        for bi, bj, blk in leaf.iter_blocks():
            last = m.n_logical - 1
            r = np.minimum(ti * ts + bi * leaf.bs + np.arange(leaf.bs), last)
            c = np.minimum(tj * ts + bj * leaf.bs + np.arange(leaf.bs), last)
            rr, cc = np.meshgrid(r, c, indexing="ij")
            bound = model.bound(rr, cc)
            if np.any(np.abs(blk) > bound * (1 + rtol)):
                return False
    return True


def tau_sweep(hi_exp: int = 4, lo_exp: int = 12) -> Sequence[float]:
    return [10.0 ** -k for k in range(hi_exp, lo_exp + 1)]
