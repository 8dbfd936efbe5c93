"""Hierarchical block-sparse leaf matrices.

A :class:`LeafMatrix` covers one task-size block of a distributed matrix.
Inside it the matrix is again a quadtree whose bottom level holds dense
``bs x bs`` blocks; a block is stored only if it has a nonzero entry and
all-zero subtrees are ``None`` at the highest possible level.

Multiplication is batched: the quadtrees are walked first to collect every
base-block product keyed by its output position, then the products are
executed and summed, then the output tree is built bottom-up.  Products
for one output block are summed pairwise along the inner-index tree,
i.e. ``T0 + T1`` at every level, which is the order the recursive SpAMM
formulation produces.  That makes the exact and thresholded paths, and
the distributed and leaf levels, agree bit for bit.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import InputError

# per-node bookkeeping charged on top of dense block storage
NODE_OVERHEAD_BYTES = 40


def _is_pow2(x: int) -> bool:
    return isinstance(x, (int, np.integer)) and x > 0 and (x & (x - 1)) == 0


def _freeze(block: np.ndarray) -> np.ndarray:
    block.flags.writeable = False
    return block


class LeafNode:
    """One node of a leaf quadtree: either four children or a dense block."""

    __slots__ = ("children", "block", "norm_sq", "norm")

    def __init__(self, children=None, block=None, norm_sq=None):
        self.children = children
        self.block = block
        if norm_sq is None:
            if block is not None:
                flat = block.ravel()
                norm_sq = float(np.dot(flat, flat))
            else:
                norm_sq = 0.0
                for ch in children:
                    if ch is not None:
                        norm_sq += ch.norm_sq
        self.norm_sq = norm_sq
        self.norm = math.sqrt(norm_sq)


def _node_from_block(block: np.ndarray) -> Optional[LeafNode]:
    if not block.any():
        return None
    return LeafNode(block=_freeze(block))


def _assemble(level_nodes: Dict[Tuple[int, int], LeafNode], depth: int) -> Optional[LeafNode]:
    """Merge a dict of nodes keyed by block position up ``depth`` levels."""
    nodes = level_nodes
    for _ in range(depth):
        parents: Dict[Tuple[int, int], list] = {}
        for (i, j), node in nodes.items():
            slot = parents.get((i >> 1, j >> 1))
            if slot is None:
                slot = parents[(i >> 1, j >> 1)] = [None, None, None, None]
            slot[2 * (i & 1) + (j & 1)] = node
        nodes = {key: LeafNode(children=tuple(ch)) for key, ch in parents.items()}
    if not nodes:
        return None
    return nodes[(0, 0)]


class LeafMatrix:
    """Immutable hierarchical block-sparse matrix of side ``side``."""

    __slots__ = ("side", "bs", "root", "_nblocks")

    def __init__(self, side: int, bs: int, root: Optional[LeafNode] = None):
        if not _is_pow2(side) or not _is_pow2(bs):
            raise InputError(f"side and bs must be powers of two, got side={side} bs={bs}")
        if bs > side:
            raise InputError(f"block size {bs} exceeds leaf side {side}")
        self.side = int(side)
        self.bs = int(bs)
        self.root = root
        self._nblocks = None

    @property
    def depth(self) -> int:
        return (self.side // self.bs).bit_length() - 1

    @property
    def nblk(self) -> int:
        return self.side // self.bs

    @property
    def is_empty(self) -> bool:
        return self.root is None

    @property
    def norm_sq(self) -> float:
        return 0.0 if self.root is None else self.root.norm_sq

    @property
    def norm(self) -> float:
        return 0.0 if self.root is None else self.root.norm

    # construction -----------------------------------------------------

    @classmethod
    def from_blocks(cls, side: int, bs: int, blocks: Dict[Tuple[int, int], np.ndarray]) -> "LeafMatrix":
        """Build from ``{(block_row, block_col): bs x bs array}``; all-zero blocks are dropped."""
        out = cls(side, bs)
        nodes = {}
        for key, blk in blocks.items():
            if blk.shape != (bs, bs):
                raise InputError(f"block {key} has shape {blk.shape}, expected {(bs, bs)}")
            node = _node_from_block(blk)
            if node is not None:
                nodes[key] = node
        out.root = _assemble(nodes, out.depth)
        return out

    @classmethod
    def from_dense(cls, values, bs: int) -> "LeafMatrix":
        a = np.asarray(values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputError(f"expected a square array, got shape {a.shape}")
        side = a.shape[0]
        m = cls(side, bs)
        nb = side // bs
        nodes = {}
        # reshape to (nb, bs, nb, bs) to find nonzero blocks in one pass
        tiles = a.reshape(nb, bs, nb, bs)
        present = np.argwhere(tiles.any(axis=(1, 3)))
        for bi, bj in present:
            blk = np.array(tiles[bi, :, bj, :], dtype=np.float64, order="C")
            nodes[(int(bi), int(bj))] = LeafNode(block=_freeze(blk))
        m.root = _assemble(nodes, m.depth)
        return m

    # access -----------------------------------------------------------

    def iter_blocks(self) -> Iterator[Tuple[int, int, np.ndarray]]:
        """Yield ``(block_row, block_col, block)`` in quadtree (Morton) order."""
        if self.root is None:
            return
        stack = [(self.root, 0, 0)]
        while stack:
            node, i, j = stack.pop()
            if node.block is not None:
                yield i, j, node.block
                continue
            for q in (3, 2, 1, 0):
                ch = node.children[q]
                if ch is not None:
                    stack.append((ch, 2 * i + (q >> 1), 2 * j + (q & 1)))

    @property
    def n_blocks(self) -> int:
        if self._nblocks is None:
            self._nblocks = sum(1 for _ in self.iter_blocks())
        return self._nblocks

    @property
    def nbytes(self) -> int:
        """Payload size used for data-movement accounting."""
        if self.root is None:
            return 0
        return self.n_blocks * self.bs * self.bs * 8 + NODE_OVERHEAD_BYTES

    def get(self, i: int, j: int) -> float:
        node = self.root
        half = self.side
        while node is not None:
            if node.block is not None:
                return float(node.block[i, j])
            half //= 2
            qi, qj = i // half, j // half
            i -= qi * half
            j -= qj * half
            node = node.children[2 * qi + qj]
        return 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.side, self.side))
        bs = self.bs
        for i, j, blk in self.iter_blocks():
            out[i * bs:(i + 1) * bs, j * bs:(j + 1) * bs] = blk
        return out

    def map_blocks(self, fn) -> "LeafMatrix":
        """New matrix with ``fn(block)`` applied to every stored block.

        ``fn`` may return the block itself to share it, or ``None`` to drop it.
        """
        nodes = {}
        for i, j, blk in self.iter_blocks():
            new = fn(blk)
            if new is None:
                continue
            if new is blk:
                nodes[(i, j)] = LeafNode(block=blk)
            else:
                node = _node_from_block(new)
                if node is not None:
                    nodes[(i, j)] = node
        return LeafMatrix(self.side, self.bs, _assemble(nodes, self.depth))

    def __repr__(self):
        return f"LeafMatrix(side={self.side}, bs={self.bs}, blocks={self.n_blocks})"


class GemmCounter:
    """Counts base-block multiplications (and predictor calls)."""

    __slots__ = ("n_gemm", "n_predict")

    def __init__(self):
        self.n_gemm = 0
        self.n_predict = 0

    def add(self, k: int = 1) -> None:
        self.n_gemm += k

    def flops(self, bs: int) -> int:
        return 2 * bs ** 3 * self.n_gemm


def _check_pair(a: LeafMatrix, b: LeafMatrix) -> None:
    if a.side != b.side or a.bs != b.bs:
        raise InputError(f"leaf shape mismatch: ({a.side}, bs={a.bs}) vs ({b.side}, bs={b.bs})")


def _check_tau(tau) -> None:
    if not tau >= 0:
        raise InputError(f"tau must be nonnegative, got {tau}")


# prediction ----------------------------------------------------------------

def _predict(a: LeafNode, b: LeafNode, tau) -> bool:
    if a.block is not None:
        return True
    ac, bc = a.children, b.children
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                x = ac[2 * i + k]
                if x is None:
                    continue
                y = bc[2 * k + j]
                if y is None:
                    continue
                if tau is not None and x.norm * y.norm < tau:
                    continue
                if _predict(x, y, tau):
                    return True
    return False


def predict_product_nonzero(a: LeafMatrix, b: LeafMatrix, counter: Optional[GemmCounter] = None) -> bool:
    """True iff some chain of stored base blocks contributes to the product.

    Looks only at the tree layout; no block data is touched.
    """
    _check_pair(a, b)
    if counter is not None:
        counter.n_predict += 1
    if a.root is None or b.root is None:
        return False
    return _predict(a.root, b.root, None)


def predict_spamm_nonzero(a: LeafMatrix, b: LeafMatrix, tau: float,
                          counter: Optional[GemmCounter] = None) -> bool:
    """Like :func:`predict_product_nonzero` but every step must also pass the norm gate."""
    _check_pair(a, b)
    _check_tau(tau)
    if counter is not None:
        counter.n_predict += 1
    if a.root is None or b.root is None:
        return False
    if a.root.norm * b.root.norm < tau:
        return False
    return _predict(a.root, b.root, tau)


# batched multiplication ----------------------------------------------------

Job = Tuple[int, np.ndarray, np.ndarray]


def _collect(a: LeafNode, b: LeafNode, bi: int, bj: int, bk: int, tau,
             jobs: Dict[Tuple[int, int], List[Job]], audit) -> None:
    if a.block is not None:
        key = (bi, bj)
        lst = jobs.get(key)
        if lst is None:
            jobs[key] = [(bk, a.block, b.block)]
        else:
            lst.append((bk, a.block, b.block))
        return
    ac, bc = a.children, b.children
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                x = ac[2 * i + k]
                if x is None:
                    continue
                y = bc[2 * k + j]
                if y is None:
                    continue
                if tau is not None and x.norm * y.norm < tau:
                    if audit is not None:
                        audit.append((x.norm, y.norm, tau))
                    continue
                _collect(x, y, 2 * bi + i, 2 * bj + j, 2 * bk + k, tau, jobs, audit)


def tree_sum(items: List[Tuple[int, np.ndarray]], depth: int) -> np.ndarray:
    """Sum ``(inner_index, block)`` pairs pairwise along the inner-index binary tree.

    ``items`` must be sorted by inner index.  Missing siblings are treated as
    exact zeros, so ``x`` passes up a level unchanged.  The arrays are
    owned temporaries and are overwritten.
    """
    if len(items) == 1:
        return items[0][1]
    for _ in range(depth):
        merged = []
        n = len(items)
        p = 0
        while p < n:
            k, v = items[p]
            if p + 1 < n and (items[p + 1][0] >> 1) == (k >> 1):
                v += items[p + 1][1]
                p += 2
            else:
                p += 1
            merged.append((k >> 1, v))
        items = merged
        if len(items) == 1:
            break
    return items[0][1]


def _execute(side: int, bs: int, depth: int, jobs, counter: Optional[GemmCounter]) -> LeafMatrix:
    nodes = {}
    ngemm = 0
    for key in sorted(jobs):
        lst = jobs[key]
        prods = [(bk, x @ y) for bk, x, y in lst]
        ngemm += len(prods)
        blk = tree_sum(prods, depth)
        # numerically-zero products of structurally nonzero blocks are kept
        nodes[key] = LeafNode(block=_freeze(blk))
    if counter is not None:
        counter.add(ngemm)
    return LeafMatrix(side, bs, _assemble(nodes, depth))


def collect_jobs(a: LeafMatrix, b: LeafMatrix, tau=None, audit=None) -> Dict[Tuple[int, int], List[Job]]:
    """Base-block products required for ``a @ b``, keyed by output block position."""
    jobs: Dict[Tuple[int, int], List[Job]] = {}
    if a.root is not None and b.root is not None:
        _collect(a.root, b.root, 0, 0, 0, tau, jobs, audit)
    return jobs


def leaf_multiply(a: LeafMatrix, b: LeafMatrix, counter: Optional[GemmCounter] = None) -> LeafMatrix:
    """Exact product of two leaf matrices."""
    _check_pair(a, b)
    if not predict_product_nonzero(a, b, counter):
        return LeafMatrix(a.side, a.bs)
    return _execute(a.side, a.bs, a.depth, collect_jobs(a, b), counter)


def leaf_spamm(a: LeafMatrix, b: LeafMatrix, tau: float, counter: Optional[GemmCounter] = None,
               audit: Optional[list] = None) -> LeafMatrix:
    """SpAMM inside one leaf, recursing down to the dense base blocks.

    A child product is skipped when the product of the operands' Frobenius
    norms is below ``tau``; the check is also applied to ``a`` and ``b``
    themselves.  Skipped pairs are appended to ``audit`` as
    ``(norm_a, norm_b, tau)`` when a list is given.
    """
    _check_pair(a, b)
    _check_tau(tau)
    if not predict_spamm_nonzero(a, b, tau, counter):
        if audit is not None and a.root is not None and b.root is not None \
                and a.root.norm * b.root.norm < tau:
            audit.append((a.root.norm, b.root.norm, tau))
        return LeafMatrix(a.side, a.bs)
    return _execute(a.side, a.bs, a.depth, collect_jobs(a, b, tau, audit), counter)


def _add_nodes(x: Optional[LeafNode], y: Optional[LeafNode]) -> Optional[LeafNode]:
    if x is None:
        return y
    if y is None:
        return x
    if x.block is not None:
        return LeafNode(block=_freeze(x.block + y.block))
    return LeafNode(children=tuple(_add_nodes(p, q) for p, q in zip(x.children, y.children)))


def leaf_add(a: LeafMatrix, b: LeafMatrix) -> LeafMatrix:
    """``a + b``; subtrees present in only one operand are shared, not copied."""
    _check_pair(a, b)
    return LeafMatrix(a.side, a.bs, _add_nodes(a.root, b.root))


def leaf_truncate(a: LeafMatrix, tau: float) -> LeafMatrix:
    """Zero every entry with magnitude strictly below ``tau``."""
    _check_tau(tau)
    if tau == 0:
        return a

    def cut(blk):
        mask = np.abs(blk) < tau
        if not mask.any():
            return blk
        if mask.all():
            return None
        out = blk.copy()
        out[mask] = 0.0
        return out

    return a.map_blocks(cut)
