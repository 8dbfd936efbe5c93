"""Distributed-level hierarchical matrices.

The matrix is split as a quadtree down to ``task_size`` blocks, each of
which is a :class:`~spammkit.leaf.LeafMatrix`.  Dimensions that are not
``task_size * 2**k`` are padded with implicit zeros; the padding is never
stored.  Every node caches its squared Frobenius norm.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import ConfigError, InputError
from .leaf import LeafMatrix, _is_pow2, leaf_truncate


class HierNode:
    """Internal node (four children in (0,0),(0,1),(1,0),(1,1) order) or leaf holder."""

    __slots__ = ("children", "leaf", "norm_sq", "norm")

    def __init__(self, children=None, leaf: Optional[LeafMatrix] = None, norm_sq=None):
        self.children = children
        self.leaf = leaf
        if norm_sq is None:
            if leaf is not None:
                norm_sq = leaf.norm_sq
            else:
                norm_sq = 0.0
                for ch in children:
                    if ch is not None:
                        norm_sq += ch.norm_sq
        self.norm_sq = norm_sq
        self.norm = math.sqrt(norm_sq)

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


def padded_size(n: int, task_size: int) -> int:
    size = task_size
    while size < n:
        size *= 2
    return size


def check_sizes(task_size: int, bs: int) -> None:
    if not _is_pow2(task_size):
        raise ConfigError(f"task_size must be a power of two, got {task_size}")
    if not _is_pow2(bs):
        raise ConfigError(f"bs must be a power of two, got {bs}")
    if bs > task_size:
        raise ConfigError(f"bs={bs} must not exceed task_size={task_size}")


class HierMatrix:
    """Immutable square matrix stored as a quadtree of leaf matrices."""

    __slots__ = ("n_logical", "n_padded", "task_size", "bs", "root")

    def __init__(self, n_logical: int, task_size: int, bs: int, root: Optional[HierNode] = None):
        check_sizes(task_size, bs)
        if n_logical < 1:
            raise InputError(f"matrix dimension must be >= 1, got {n_logical}")
        self.n_logical = int(n_logical)
        self.task_size = int(task_size)
        self.bs = int(bs)
        self.n_padded = padded_size(self.n_logical, self.task_size)
        self.root = root

    @property
    def n(self) -> int:
        return self.n_logical

    @property
    def depth(self) -> int:
        """Number of quadtree levels above the leaves."""
        return (self.n_padded // self.task_size).bit_length() - 1

    @property
    def ntiles(self) -> int:
        return self.n_padded // self.task_size

    @property
    def is_empty(self) -> bool:
        return self.root is None

    def same_layout(self, other: "HierMatrix") -> bool:
        return (self.n_logical == other.n_logical and self.task_size == other.task_size
                and self.bs == other.bs)

    # construction -----------------------------------------------------

    @classmethod
    def from_leaves(cls, n: int, task_size: int, bs: int,
                    leaves: Dict[Tuple[int, int], LeafMatrix]) -> "HierMatrix":
        """Assemble from ``{(tile_row, tile_col): LeafMatrix}``; empty leaves are dropped."""
        m = cls(n, task_size, bs)
        nodes = {}
        for key, leaf in leaves.items():
            if leaf.side != task_size or leaf.bs != bs:
                raise InputError(f"leaf {key} has side {leaf.side}/bs {leaf.bs}")
            if leaf.root is not None:
                nodes[key] = HierNode(leaf=leaf)
        for _ in range(m.depth):
            parents: Dict[Tuple[int, int], list] = {}
            for (i, j), node in nodes.items():
                slot = parents.setdefault((i >> 1, j >> 1), [None, None, None, None])
                slot[2 * (i & 1) + (j & 1)] = node
            nodes = {k: HierNode(children=tuple(ch)) for k, ch in parents.items()}
        m.root = nodes.get((0, 0))
        return m

    # access -----------------------------------------------------------

    def iter_leaves(self) -> Iterator[Tuple[int, int, LeafMatrix]]:
        """Yield ``(tile_row, tile_col, leaf)`` for stored leaves in Morton order."""
        if self.root is None:
            return
        stack = [(self.root, 0, 0)]
        while stack:
            node, i, j = stack.pop()
            if node.leaf is not None:
                yield i, j, node.leaf
                continue
            for q in (3, 2, 1, 0):
                ch = node.children[q]
                if ch is not None:
                    stack.append((ch, 2 * i + (q >> 1), 2 * j + (q & 1)))

    def iter_nodes(self) -> Iterator[HierNode]:
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.children is not None:
                stack.extend(ch for ch in node.children if ch is not None)

    def norm_sq(self) -> float:
        return 0.0 if self.root is None else self.root.norm_sq

    def get_element(self, i: int, j: int) -> float:
        return get_element(self, i, j)

    def to_dense(self) -> np.ndarray:
        return self.dense_window(0, self.n_logical, 0, self.n_logical)

    def dense_window(self, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
        """Dense copy of rows ``r0:r1`` and columns ``c0:c1`` (clipped to n)."""
        n, ts = self.n_logical, self.task_size
        r1, c1 = min(r1, n), min(c1, n)
        out = np.zeros((max(r1 - r0, 0), max(c1 - c0, 0)))
        for ti, tj, leaf in self.iter_leaves():
            tr, tc = ti * ts, tj * ts
            if tr >= r1 or tr + ts <= r0 or tc >= c1 or tc + ts <= c0:
                continue
            bs = leaf.bs
            for bi, bj, blk in leaf.iter_blocks():
                r, c = tr + bi * bs, tc + bj * bs
                lo_r, hi_r = max(r, r0), min(r + bs, r1)
                lo_c, hi_c = max(c, c0), min(c + bs, c1)
                if lo_r >= hi_r or lo_c >= hi_c:
                    continue
                out[lo_r - r0:hi_r - r0, lo_c - c0:hi_c - c0] = \
                    blk[lo_r - r:hi_r - r, lo_c - c:hi_c - c]
        return out

    def nnz(self) -> int:
        return sum(int(np.count_nonzero(blk)) for _, _, leaf in self.iter_leaves()
                   for _, _, blk in leaf.iter_blocks())

    def __repr__(self):
        return (f"HierMatrix(n={self.n_logical}, n_padded={self.n_padded}, "
                f"task_size={self.task_size}, bs={self.bs}, empty={self.is_empty})")


def _validate_values(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square 2-D array, got shape {a.shape}")
    if a.shape[0] < 1:
        raise InputError("matrix dimension must be >= 1")
    if not np.all(np.isfinite(a)):
        raise InputError("input contains non-finite values")
    return a


def build_from_dense(values, task_size: int, bs: int) -> HierMatrix:
    """Quadtree view of a dense square array; all-zero regions become EMPTY."""
    check_sizes(task_size, bs)
    a = _validate_values(values)
    n = a.shape[0]
    shell = HierMatrix(n, task_size, bs)
    ntiles = shell.ntiles
    leaves = {}
    for ti in range(ntiles):
        r0 = ti * task_size
        if r0 >= n:
            break
        for tj in range(ntiles):
            c0 = tj * task_size
            if c0 >= n:
                break
            sub = a[r0:r0 + task_size, c0:c0 + task_size]
            if not sub.any():
                continue
            if sub.shape != (task_size, task_size):
                tile = np.zeros((task_size, task_size))
                tile[:sub.shape[0], :sub.shape[1]] = sub
            else:
                tile = sub
            leaves[(ti, tj)] = LeafMatrix.from_dense(tile, bs)
    return HierMatrix.from_leaves(n, task_size, bs, leaves)


def build_from_coo(n: int, rows, cols, vals, task_size: int, bs: int) -> HierMatrix:
    """Build from coordinate triplets (duplicates summed) without a dense n x n array."""
    check_sizes(task_size, bs)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise InputError("coordinate out of range")
    if not np.all(np.isfinite(vals)):
        raise InputError("input contains non-finite values")
    shell = HierMatrix(n, task_size, bs)
    nb_tile = task_size // bs
    bi_all, bj_all = rows // bs, cols // bs
    order = np.lexsort((bj_all, bi_all))
    rows, cols, vals, bi_all, bj_all = rows[order], cols[order], vals[order], bi_all[order], bj_all[order]
    per_tile: Dict[Tuple[int, int], Dict[Tuple[int, int], np.ndarray]] = {}
    if rows.size:
        key = bi_all * (shell.n_padded // bs) + bj_all
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        ends = np.r_[starts[1:], key.size]
        for s, e in zip(starts, ends):
            bi, bj = int(bi_all[s]), int(bj_all[s])
            blk = np.zeros((bs, bs))
            np.add.at(blk, (rows[s:e] - bi * bs, cols[s:e] - bj * bs), vals[s:e])
            tile = per_tile.setdefault((bi // nb_tile, bj // nb_tile), {})
            tile[(bi % nb_tile, bj % nb_tile)] = blk
    leaves = {k: LeafMatrix.from_blocks(task_size, bs, blocks) for k, blocks in per_tile.items()}
    return HierMatrix.from_leaves(n, task_size, bs, leaves)


def norm_sq(a: HierMatrix) -> float:
    return a.norm_sq()


def get_element(a: HierMatrix, i: int, j: int) -> float:
    n = a.n_logical
    if not (0 <= i < n and 0 <= j < n):
        raise InputError(f"index ({i}, {j}) outside a {n}x{n} matrix")
    node = a.root
    half = a.n_padded
    while node is not None:
        if node.leaf is not None:
            return node.leaf.get(i, j)
        half //= 2
        qi, qj = i // half, j // half
        i -= qi * half
        j -= qj * half
        node = node.children[2 * qi + qj]
    return 0.0


def truncate(a: HierMatrix, tau: float) -> HierMatrix:
    """Drop entries with ``|a_ij| < tau``; returns a new matrix, ``a`` is untouched.

    Blocks that are unaffected are shared with ``a``.
    """
    if not tau >= 0:
        raise InputError(f"tau must be nonnegative, got {tau}")
    if tau == 0:
        return HierMatrix(a.n_logical, a.task_size, a.bs, a.root)
    leaves = {(i, j): leaf_truncate(leaf, tau) for i, j, leaf in a.iter_leaves()}
    return HierMatrix.from_leaves(a.n_logical, a.task_size, a.bs, leaves)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")


def leaf_insignificant_sum_sq(leaf: LeafMatrix, eps: float) -> float:
    _check_eps(eps)
    total = 0.0
    for _, _, blk in leaf.iter_blocks():
        small = blk[np.abs(blk) <= eps]
        if small.size:
            total += float(np.dot(small, small))
    return total


def insignificant_sum_sq(a: HierMatrix, eps: float) -> float:
    """Sum of squares of all entries with magnitude at most ``eps``."""
    _check_eps(eps)
    return sum(leaf_insignificant_sum_sq(leaf, eps) for _, _, leaf in a.iter_leaves())
