"""In-process chunks-and-tasks engine.

Data lives in immutable *chunks* addressed by integer ids.  Work is
expressed as *tasks* whose inputs are chunk ids (or futures of other
tasks' outputs) and whose single output is a chunk id, ``None`` for the
empty matrix, or a future to forward.  Tasks may register child tasks
while running.

Workers are logical: the scheduler steps them round-robin in one thread,
each popping from the bottom of its own deque and stealing from the top
of a randomly chosen victim's deque when idle.  Victim choice uses a
seeded generator so a run is reproducible.  Chunks are owned by the
worker that registered them; a worker that fetches a chunk owned by
another worker is charged the chunk's payload size, which stands in for
network traffic.

Chunks are reference counted (pending task inputs, parent-node
references and external holds) and their payloads are released as soon
as nothing can reach them, so intermediate products do not accumulate.
"""

from __future__ import annotations

import csv
import logging
import os
import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from .errors import ConfigError, StateError
from .leaf import GemmCounter

log = logging.getLogger(__name__)

ChunkId = int

WORKERS_ENV = "SPAMMKIT_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return value


@dataclass
class MultiplyStats:
    """Counters accumulated over one or more engine runs."""

    bs: int = 0
    n_gemm: Dict[str, int] = field(default_factory=dict)
    n_predict: int = 0
    tasks_executed: int = 0
    tasks_registered: int = 0
    steals: int = 0
    bytes_sent: List[int] = field(default_factory=list)
    wall_s: float = 0.0
    rejections: int = 0

    @property
    def total_gemm(self) -> int:
        return sum(self.n_gemm.values())

    @property
    def flops(self) -> int:
        return 2 * self.bs ** 3 * self.total_gemm

    @property
    def bytes_sent_total(self) -> int:
        return sum(self.bytes_sent)

    @property
    def bytes_sent_max(self) -> int:
        return max(self.bytes_sent, default=0)

    def merge(self, other: "MultiplyStats") -> None:
        if self.bs and other.bs and self.bs != other.bs:
            raise ConfigError("cannot merge statistics gathered with different block sizes")
        self.bs = self.bs or other.bs
        for k, v in other.n_gemm.items():
            self.n_gemm[k] = self.n_gemm.get(k, 0) + v
        self.n_predict += other.n_predict
        self.tasks_executed += other.tasks_executed
        self.tasks_registered += other.tasks_registered
        self.steals += other.steals
        self.rejections += other.rejections
        width = max(len(self.bytes_sent), len(other.bytes_sent))
        merged = [0] * width
        for src in (self.bytes_sent, other.bytes_sent):
            for w, v in enumerate(src):
                merged[w] += v
        self.bytes_sent = merged
        self.wall_s += other.wall_s


class _Chunk:
    __slots__ = ("payload", "nbytes", "owner", "norm_sq", "refs", "children", "alive")

    def __init__(self, payload, nbytes, owner, norm_sq, children):
        self.payload = payload
        self.nbytes = nbytes
        self.owner = owner
        self.norm_sq = norm_sq
        self.refs = 0
        self.children = children
        self.alive = True


class ChunkRegistry:
    """Immutable chunk store with ownership and reference counts."""

    def __init__(self):
        self._chunks: Dict[ChunkId, _Chunk] = {}
        self._next = 0
        self.n_registered = 0
        self.n_freed = 0

    def register(self, payload, nbytes: int, owner: int, norm_sq: float = 0.0,
                 children=()) -> ChunkId:
        cid = self._next
        self._next += 1
        self._chunks[cid] = _Chunk(payload, int(nbytes), owner, norm_sq, tuple(children))
        self.n_registered += 1
        for ch in children:
            if ch is not None:
                self.incref(ch)
        return cid

    def __contains__(self, cid) -> bool:
        ch = self._chunks.get(cid)
        return ch is not None and ch.alive

    def _get(self, cid) -> _Chunk:
        ch = self._chunks.get(cid)
        if ch is None or not ch.alive:
            raise StateError(f"chunk {cid} is not registered or was released")
        return ch

    def payload(self, cid: ChunkId):
        return self._get(cid).payload

    def owner(self, cid: ChunkId) -> int:
        return self._get(cid).owner

    def nbytes(self, cid: ChunkId) -> int:
        return self._get(cid).nbytes

    def norm_sq(self, cid: ChunkId) -> float:
        return self._get(cid).norm_sq

    def incref(self, cid: ChunkId) -> None:
        self._get(cid).refs += 1

    def decref(self, cid: ChunkId) -> None:
        stack = [cid]
        while stack:
            ch = self._get(stack.pop())
            ch.refs -= 1
            if ch.refs > 0:
                continue
            ch.alive = False
            ch.payload = None
            self.n_freed += 1
            stack.extend(c for c in ch.children if c is not None)

    @property
    def n_alive(self) -> int:
        return self.n_registered - self.n_freed


class Future:
    """Placeholder for a task output that is not known yet."""

    __slots__ = ("done", "value", "waiters", "forwards")

    def __init__(self):
        self.done = False
        self.value: Optional[ChunkId] = None
        self.waiters: List["Task"] = []
        self.forwards: List["Future"] = []


class Task:
    __slots__ = ("tid", "kind", "fn", "inputs", "fetch", "params", "out", "pending",
                 "parent", "n_children")

    def __init__(self, tid, kind, fn, inputs, fetch, params, parent):
        self.tid = tid
        self.kind = kind
        self.fn = fn
        self.inputs = inputs
        self.fetch = fetch
        self.params = params
        self.out = Future()
        self.pending = 0
        self.parent = parent
        self.n_children: Dict[str, int] = {}


TaskFn = Callable[..., Any]


class Engine:
    """Deterministic work-stealing executor over a chunk registry."""

    def __init__(self, workers: int = 1, seed: int = 0, trace_path: Optional[str] = None,
                 bs: int = 0, method: str = ""):
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError(f"worker count must be a positive integer, got {workers!r}")
        self.workers = workers
        self.registry = ChunkRegistry()
        self.counter = GemmCounter()
        self.bs = bs
        self.method = method
        self._rng = random.Random(seed)
        self._deques = [deque() for _ in range(workers)]
        self._ready = 0
        self._next_tid = 0
        self._current: Optional[Task] = None
        self._worker = 0
        self._remote_bytes = 0
        self._running = False
        self._ran = False
        self.bytes_sent = [0] * workers
        self.steals = 0
        self.tasks_executed = 0
        self.tasks_registered = 0
        self.rejections = 0
        self.audit: Optional[list] = None
        self.wall_s = 0.0
        self.trace_path = trace_path
        self._trace_rows: List[tuple] = []
        self.spawn_log: List[tuple] = []
        self._stats: Optional[MultiplyStats] = None

    # chunk API ------------------------------------------------------------

    @property
    def worker(self) -> int:
        """Worker executing the current task (worker 0 outside a run)."""
        return self._worker

    def register_chunk(self, payload, nbytes: int, norm_sq: float = 0.0, children=(),
                       owner: Optional[int] = None) -> ChunkId:
        if owner is None:
            owner = self._worker
        return self.registry.register(payload, nbytes, owner, norm_sq, children)

    def hold(self, cid: Optional[ChunkId]) -> None:
        """Keep ``cid`` alive until :meth:`release`."""
        if cid is not None:
            self.registry.incref(cid)

    def release(self, cid: Optional[ChunkId]) -> None:
        if cid is not None:
            self.registry.decref(cid)

    def fetch(self, cid: Optional[ChunkId]):
        """Payload of ``cid`` as seen by the current worker, charging remote reads."""
        if cid is None:
            return None
        ch = self.registry._get(cid)
        if ch.owner != self._worker:
            self.bytes_sent[self._worker] += ch.nbytes
            self._remote_bytes += ch.nbytes
        return ch.payload

    # task API -------------------------------------------------------------

    def spawn(self, kind: str, fn: TaskFn, inputs, fetch: bool = True, params=()) -> Future:
        """Register a task; it becomes runnable once every input future resolves."""
        task = Task(self._next_tid, kind, fn, list(inputs), fetch, params, self._current)
        self._next_tid += 1
        self.tasks_registered += 1
        if self._current is not None:
            nc = self._current.n_children
            nc[kind] = nc.get(kind, 0) + 1
        for ref in task.inputs:
            if isinstance(ref, Future):
                if ref.done:
                    if ref.value is not None:
                        self.registry.incref(ref.value)
                else:
                    task.pending += 1
                    ref.waiters.append(task)
            elif ref is not None:
                self.registry.incref(ref)
        if task.pending == 0:
            self._push(task, self._worker)
        return task.out

    def _push(self, task: Task, worker: int) -> None:
        self._deques[worker].append(task)
        self._ready += 1

    def _resolve(self, fut: Future, value: Optional[ChunkId]) -> None:
        stack = [fut]
        while stack:
            f = stack.pop()
            f.done = True
            f.value = value
            for t in f.waiters:
                if value is not None:
                    self.registry.incref(value)
                t.pending -= 1
                if t.pending == 0:
                    self._push(t, self._worker)
            f.waiters = []
            stack.extend(f.forwards)
            f.forwards = []

    def _next_task(self, w: int) -> Optional[Task]:
        dq = self._deques[w]
        if dq:
            self._ready -= 1
            return dq.pop()
        victims = [v for v in range(self.workers) if v != w and self._deques[v]]
        if not victims:
            return None
        victim = victims[0] if len(victims) == 1 else self._rng.choice(victims)
        self.steals += 1
        self._ready -= 1
        return self._deques[victim].popleft()

    def _execute(self, task: Task, w: int) -> None:
        self._current = task
        self._worker = w
        self._remote_bytes = 0
        t0 = time.perf_counter()
        ids = [ref.value if isinstance(ref, Future) else ref for ref in task.inputs]
        if task.fetch:
            args = [self.fetch(cid) for cid in ids]
        else:
            args = ids
        result = task.fn(self, ids, args, *task.params)
        if isinstance(result, Future):
            if result.done:
                self._resolve(task.out, result.value)
            else:
                result.forwards.append(task.out)
        else:
            self._resolve(task.out, result)
        for cid in ids:
            if cid is not None:
                self.registry.decref(cid)
        self.tasks_executed += 1
        if self.trace_path is not None:
            self._trace_rows.append((task.tid, task.kind, w, time.perf_counter() - t0,
                                     self._remote_bytes))
        if task.n_children:
            self.spawn_log.append((task.kind, dict(task.n_children)))
        self._current = None

    def run(self, kind: str, fn: TaskFn, inputs, params=()) -> Optional[ChunkId]:
        """Run a root task to completion and return its output chunk id (held)."""
        if self._running:
            raise StateError("engine is already running")
        self._running = True
        self._stats = None
        t0 = time.perf_counter()
        try:
            self._worker = 0
            out = self.spawn(kind, fn, inputs, params=params)
            while self._ready:
                for w in range(self.workers):
                    task = self._next_task(w)
                    if task is not None:
                        self._execute(task, w)
            if not out.done:
                raise StateError("task graph did not complete")
            if out.value is not None:
                self.registry.incref(out.value)
        finally:
            self._running = False
            self._worker = 0
            self.wall_s += time.perf_counter() - t0
        self._ran = True
        if self.trace_path is not None:
            self.write_trace(self.trace_path)
        return out.value

    # reporting ------------------------------------------------------------

    def write_trace(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["task_id", "kind", "worker", "duration_s", "bytes_read_remote"])
            for row in self._trace_rows:
                wr.writerow(row)

    def drain_stats(self) -> MultiplyStats:
        if self._running:
            raise StateError("statistics requested while the engine is running")
        if self._stats is None:
            self._stats = MultiplyStats(
                bs=self.bs,
                n_gemm={self.method: self.counter.n_gemm} if self._ran else {},
                n_predict=self.counter.n_predict,
                tasks_executed=self.tasks_executed,
                tasks_registered=self.tasks_registered,
                steals=self.steals,
                bytes_sent=list(self.bytes_sent),
                wall_s=self.wall_s,
                rejections=self.rejections,
            )
        return self._stats


def register_chunk(engine: Engine, payload, nbytes: int, norm_sq: float = 0.0) -> ChunkId:
    return engine.register_chunk(payload, nbytes, norm_sq)


def drain_stats(engine: Engine) -> MultiplyStats:
    return engine.drain_stats()
