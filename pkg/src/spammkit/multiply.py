"""Exact, Truncmul, SpAMM and Hybrid multiplication of hierarchical matrices.

Each method is a tree of engine tasks.  A multiply task with two non-empty
internal inputs registers eight child multiplies, four adds and one
assemble task; at ``task_size`` it calls the leaf library.  The SpAMM
task first compares the product of its operands' Frobenius norms with
``tau`` and returns the empty matrix when it falls short.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

from .engine import ChunkId, Engine, MultiplyStats, default_workers
from .errors import ConfigError, InputError
from .leaf import NODE_OVERHEAD_BYTES, LeafMatrix, leaf_add, leaf_multiply, leaf_spamm
from .quadtree import HierMatrix, HierNode, truncate


class Method(str, enum.Enum):
    EXACT = "exact"
    TRUNCMUL = "truncmul"
    SPAMM = "spamm"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown method {value!r}; expected one of "
                              f"{', '.join(m.value for m in cls)}") from None


@dataclass(frozen=True)
class MultiplyRequest:
    method: Method
    a: HierMatrix
    b: HierMatrix
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.method is not Method.EXACT and not self.tau >= 0:
            raise InputError(f"tau must be nonnegative, got {self.tau}")


class NodeChunk:
    """Payload of an internal node chunk: child ids plus the cached norm."""

    __slots__ = ("children", "norm_sq", "norm")

    def __init__(self, children: Tuple[Optional[ChunkId], ...], norm_sq: float):
        self.children = children
        self.norm_sq = norm_sq
        self.norm = math.sqrt(norm_sq)


NODE_CHUNK_BYTES = NODE_OVERHEAD_BYTES


# task bodies ---------------------------------------------------------------

def _multiply_task(eng: Engine, ids, args, tau):
    a, b = args
    if a is None or b is None:
        return None
    if tau is not None and a.norm * b.norm < tau:
        eng.rejections += 1
        if eng.audit is not None:
            eng.audit.append((a.norm, b.norm, tau))
        return None
    if isinstance(a, LeafMatrix):
        if tau is None:
            c = leaf_multiply(a, b, eng.counter)
        else:
            c = leaf_spamm(a, b, tau, eng.counter, eng.audit)
        if c.is_empty:
            return None
        return eng.register_chunk(c, c.nbytes, c.norm_sq)
    ac, bc = a.children, b.children
    kind = "multiply" if tau is None else "spamm"
    quads = []
    for i in (0, 1):
        for j in (0, 1):
            y1 = eng.spawn(kind, _multiply_task, (ac[2 * i], bc[j]), params=(tau,))
            y2 = eng.spawn(kind, _multiply_task, (ac[2 * i + 1], bc[2 + j]), params=(tau,))
            quads.append(eng.spawn("add", _add_task, (y1, y2)))
    return eng.spawn("assemble", _assemble_task, quads, fetch=False)


def _add_task(eng: Engine, ids, args):
    x, y = args
    if x is None:
        return ids[1]
    if y is None:
        return ids[0]
    if isinstance(x, LeafMatrix):
        c = leaf_add(x, y)
        return eng.register_chunk(c, c.nbytes, c.norm_sq)
    quads = [eng.spawn("add", _add_task, (p, q)) for p, q in zip(x.children, y.children)]
    return eng.spawn("assemble", _assemble_task, quads, fetch=False)


def _assemble_task(eng: Engine, ids, _args):
    if all(c is None for c in ids):
        return None
    norm_sq = 0.0
    for c in ids:
        if c is not None:
            norm_sq += eng.registry.norm_sq(c)
    return eng.register_chunk(NodeChunk(tuple(ids), norm_sq), NODE_CHUNK_BYTES, norm_sq,
                              children=ids)


# matrices <-> chunks -------------------------------------------------------

def register_matrix(eng: Engine, m: HierMatrix) -> Optional[ChunkId]:
    """Register every node of ``m`` and return the (held) root id.

    Leaves are dealt to workers in Morton order in contiguous runs of
    roughly equal byte volume; an internal node goes to the owner of its
    first child.
    """
    if m.root is None:
        return None
    leaves = [leaf for _, _, leaf in m.iter_leaves()]
    total = sum(leaf.nbytes for leaf in leaves) or 1
    owners = {}
    acc = 0
    for leaf in leaves:
        owners[id(leaf)] = min(eng.workers - 1, acc * eng.workers // total)
        acc += leaf.nbytes

    def reg(node: HierNode):
        if node.leaf is not None:
            leaf = node.leaf
            o = owners[id(leaf)]
            return eng.register_chunk(leaf, leaf.nbytes, leaf.norm_sq, owner=o), o
        kids = []
        first_owner = None
        for ch in node.children:
            if ch is None:
                kids.append(None)
                continue
            cid, o = reg(ch)
            kids.append(cid)
            if first_owner is None:
                first_owner = o
        cid = eng.register_chunk(NodeChunk(tuple(kids), node.norm_sq), NODE_CHUNK_BYTES,
                                 node.norm_sq, children=kids, owner=first_owner)
        return cid, first_owner

    root, _ = reg(m.root)
    eng.hold(root)
    return root


def materialize(eng: Engine, cid: Optional[ChunkId], like: HierMatrix) -> HierMatrix:
    """Convert a result chunk tree back into a :class:`HierMatrix`."""

    def build(c):
        if c is None:
            return None
        p = eng.registry.payload(c)
        if isinstance(p, LeafMatrix):
            return HierNode(leaf=p)
        return HierNode(children=tuple(build(k) for k in p.children), norm_sq=p.norm_sq)

    return HierMatrix(like.n_logical, like.task_size, like.bs, build(cid))


# public entry points -------------------------------------------------------

def _check_pair(a: HierMatrix, b: HierMatrix) -> None:
    if not isinstance(a, HierMatrix) or not isinstance(b, HierMatrix):
        raise InputError("operands must be HierMatrix instances")
    if not a.same_layout(b):
        raise InputError(f"operand layouts differ: {a!r} vs {b!r}")


def _engine_product(a: HierMatrix, b: HierMatrix, tau, method: Method, workers: int,
                    seed: int, trace, audit) -> Tuple[HierMatrix, MultiplyStats]:
    eng = Engine(workers=workers, seed=seed, trace_path=trace, bs=a.bs, method=method.value)
    eng.audit = audit
    ra = register_matrix(eng, a)
    rb = ra if b is a else register_matrix(eng, b)
    if b is a and ra is not None:
        eng.hold(ra)
    kind = "multiply" if tau is None else "spamm"
    out = eng.run(kind, _multiply_task, (ra, rb), params=(tau,))
    c = materialize(eng, out, a)
    eng.release(out)
    eng.release(ra)
    eng.release(rb)
    return c, eng.drain_stats()


def run(request: MultiplyRequest, workers: Optional[int] = None, seed: int = 0,
        trace: Optional[str] = None, audit: Optional[list] = None
        ) -> Tuple[HierMatrix, MultiplyStats]:
    """Execute ``request`` on ``workers`` logical workers.

    The result does not depend on ``workers`` or ``seed``; only the
    data-movement and steal counters do.
    """
    if workers is None:
        workers = default_workers()
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"worker count must be a positive integer, got {workers!r}")
    a, b, tau, method = request.a, request.b, request.tau, request.method
    _check_pair(a, b)
    t0 = time.perf_counter()
    if method in (Method.TRUNCMUL, Method.HYBRID):
        at = truncate(a, tau)
        bt = at if b is a else truncate(b, tau)
        a, b = at, bt
    gate = tau if method in (Method.SPAMM, Method.HYBRID) else None
    c, stats = _engine_product(a, b, gate, method, workers, seed, trace, audit)
    stats.wall_s = time.perf_counter() - t0
    return c, stats


def _accumulate(stats: Optional[MultiplyStats], new: MultiplyStats) -> None:
    if stats is not None:
        stats.merge(new)


def multiply_exact(a: HierMatrix, b: HierMatrix, stats: Optional[MultiplyStats] = None,
                   workers: Optional[int] = None, **kw) -> HierMatrix:
    c, st = run(MultiplyRequest(Method.EXACT, a, b), workers, **kw)
    _accumulate(stats, st)
    return c


def spamm(a: HierMatrix, b: HierMatrix, tau: float, stats: Optional[MultiplyStats] = None,
          workers: Optional[int] = None, **kw) -> HierMatrix:
    c, st = run(MultiplyRequest(Method.SPAMM, a, b, tau), workers, **kw)
    _accumulate(stats, st)
    return c


def truncmul(a: HierMatrix, b: HierMatrix, tau: float, stats: Optional[MultiplyStats] = None,
             workers: Optional[int] = None, **kw) -> HierMatrix:
    c, st = run(MultiplyRequest(Method.TRUNCMUL, a, b, tau), workers, **kw)
    _accumulate(stats, st)
    return c


def hybrid(a: HierMatrix, b: HierMatrix, tau: float, stats: Optional[MultiplyStats] = None,
           workers: Optional[int] = None, **kw) -> HierMatrix:
    c, st = run(MultiplyRequest(Method.HYBRID, a, b, tau), workers, **kw)
    _accumulate(stats, st)
    return c


def multiply(method, a: HierMatrix, b: HierMatrix, tau: float = 0.0,
             stats: Optional[MultiplyStats] = None, workers: Optional[int] = None,
             **kw) -> HierMatrix:
    c, st = run(MultiplyRequest(Method.parse(method), a, b, tau), workers, **kw)
    _accumulate(stats, st)
    return c
