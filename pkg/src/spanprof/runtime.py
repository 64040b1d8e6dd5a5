"""Fork-join task runtime with DPST construction and work measurement.

Task bodies are plain callables taking a :class:`TaskContext` as first
argument::

    def fib(ctx, n):
        if n < 2:
            ctx.charge(1)
            return n
        a = ctx.spawn(here(), fib, n - 1)
        b = ctx.spawn(here(), fib, n - 2)
        ctx.sync()
        return a.result + b.result

    path = run_profiled(lambda ctx: fib(ctx, 20), ProfileConfig("fib.sppf"))

Tasks execute on a pool of worker threads with per-worker deques: owners
push and pop at the tail, thieves take from the head of a random victim.
A task blocked in ``sync`` keeps executing other tasks instead of parking.

Step nodes are cut at task start, spawn, sync and task end. Causal region
begin/end splits the current step into separately tagged segments.
"""

from __future__ import annotations

import os
import random
import sys
import threading
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

from .dpst import DpstBuilder, SpawnSite, TaskCursor
from .errors import CrossTaskRegion, InvalidRange, MismatchedRegion, NoOpenFinish
from .measure import UNTAGGED, CounterBackend, LogicalCounter, WorkSegment, make_backend
from .profile_io import CausalRegion, ProfileWriter

_WAIT_TIMEOUT = 0.002


def here(label: str = "", depth: int = 1) -> SpawnSite:
    """SpawnSite for the caller's source line."""
    frame = sys._getframe(depth)
    return SpawnSite(frame.f_code.co_filename, frame.f_lineno, label)


def region(label: str, depth: int = 1) -> CausalRegion:
    """CausalRegion located at the caller's source line."""
    frame = sys._getframe(depth)
    return CausalRegion(label, frame.f_code.co_filename, frame.f_lineno, frame.f_lineno)


@dataclass
class ProfileConfig:
    out: str | os.PathLike = "profile.sppf"
    counter: str = "logical"
    workers: int | None = None

    @classmethod
    def from_env(cls, **overrides) -> ProfileConfig:
        cfg = cls(
            out=os.environ.get("SPANPROF_OUT", "profile.sppf"),
            counter=os.environ.get("SPANPROF_COUNTER", "logical"),
            workers=int(os.environ["SPANPROF_THREADS"]) if "SPANPROF_THREADS" in os.environ else None,
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg


class TaskHandle:
    """Result slot of a spawned task; valid after the enclosing sync."""

    __slots__ = ("result", "error", "done")

    def __init__(self):
        self.result = None
        self.error: BaseException | None = None
        self.done = False


class _Group:
    """Outstanding children of one finish scope."""

    __slots__ = ("pending", "lock", "errors")

    def __init__(self):
        self.pending = 0
        self.lock = threading.Lock()
        self.errors: list[BaseException] = []


class _Task:
    __slots__ = ("fn", "args", "ctx", "group", "handle")

    def __init__(self, fn, args, ctx, group, handle):
        self.fn = fn
        self.args = args
        self.ctx = ctx
        self.group = group
        self.handle = handle


class _Profiler:
    """Shared profiling state of one run: DPST builder, counters, writer."""

    def __init__(self, writer: ProfileWriter, backend: CounterBackend, workers: int, pool):
        self.writer = writer
        self.backend = backend
        self.logical = isinstance(backend, LogicalCounter)
        self._pool = pool
        self._counters = list(range(workers))
        self._stride = workers
        self.builder = DpstBuilder(emit=writer.append, id_alloc=self._alloc)

    def _alloc(self) -> int:
        # worker k owns ids k, k+T, k+2T, ...: no shared counter needed
        k = self._pool.worker_index()
        nid = self._counters[k]
        self._counters[k] = nid + self._stride
        return nid


class TaskContext:
    """Handle a task body uses to spawn, sync, charge work and mark regions."""

    def __init__(self, pool: WorkStealingPool, prof: _Profiler | None, cursor: TaskCursor | None):
        self._pool = pool
        self._prof = prof
        self._cursor = cursor
        self._groups: list[_Group | None] = [None]
        self._regions: list[CausalRegion] = []
        self._tag = UNTAGGED
        self._segments: list[WorkSegment] = []
        self._marker = None

    # measurement ---------------------------------------------------------

    def _start(self) -> None:
        if self._prof is not None:
            self._marker = self._prof.backend.begin_interval()

    def _cut(self) -> None:
        """Close the running interval into a segment and stop measuring."""
        prof = self._prof
        if prof is None or self._marker is None:
            return
        ticks = prof.backend.end_interval(self._marker)
        self._marker = None
        if ticks > 0:
            segs = self._segments
            if segs and segs[-1].region == self._tag:
                segs[-1] = WorkSegment(self._tag, segs[-1].ticks + ticks)
            else:
                segs.append(WorkSegment(self._tag, ticks))

    def _close_step(self) -> None:
        self._cut()
        if self._segments:
            self._prof.builder.on_step(self._cursor, self._segments)
            self._segments = []

    def charge(self, cost: int) -> None:
        """Charge logical ticks to the running step; ignored by other backends."""
        prof = self._prof
        if prof is not None and prof.logical:
            prof.backend.charge(cost)

    # structure -----------------------------------------------------------

    def spawn(self, site: SpawnSite, fn: Callable, *args) -> TaskHandle:
        """Run ``fn(child_ctx, *args)`` as a task that may execute in parallel."""
        if self._regions:
            raise CrossTaskRegion(f"spawn inside open causal region {self._regions[-1].label!r}")
        handle = TaskHandle()
        group = self._groups[-1]
        if group is None:
            group = self._groups[-1] = _Group()
        prof = self._prof
        child_cursor = None
        if prof is not None:
            self._close_step()
            sid = prof.writer.register_site(site)
            _, _, child_cursor = prof.builder.on_spawn(self._cursor, sid)
        with group.lock:
            group.pending += 1
        child = TaskContext(self._pool, prof, child_cursor)
        self._pool.push(_Task(fn, args, child, group, handle))
        self._start()
        return handle

    def sync(self) -> None:
        """Wait for every task spawned since the last sync in this frame."""
        if self._regions:
            raise CrossTaskRegion(f"sync inside open causal region {self._regions[-1].label!r}")
        group = self._groups[-1]
        if group is None:
            raise NoOpenFinish("sync without a spawn since task start or last sync")
        self._close_step()
        self._pool.wait(group)
        self._groups[-1] = None
        if self._prof is not None:
            self._prof.builder.on_sync(self._cursor)
        self._start()
        if group.errors:
            raise group.errors[0]

    def _push_frame(self) -> None:
        self._groups.append(None)
        if self._cursor is not None:
            self._cursor.push_frame()

    def _pop_frame(self) -> None:
        if self._groups[-1] is not None:
            self.sync()
        self._groups.pop()
        if self._cursor is not None:
            self._cursor.pop_frame()

    def parallel_for(self, site: SpawnSite, lo: int, hi: int, grain: int,
                     body: Callable[[TaskContext, int, int], None]) -> None:
        """Apply ``body(ctx, lo, hi)`` over [lo, hi) split recursively in halves.

        Ranges of at most ``grain`` indices run serially in the calling task;
        larger ranges are split with each half spawned as a task. The loop
        has its own sync scope and returns only when every index is done.
        """
        if lo > hi:
            raise InvalidRange(f"empty-or-reversed range [{lo}, {hi})")
        if grain < 1:
            raise InvalidRange("grain must be >= 1")
        if lo == hi:
            return
        if hi - lo <= grain:
            body(self, lo, hi)
            return
        self._push_frame()
        try:
            _split_range(self, site, lo, hi, grain, body)
        finally:
            self._pop_frame()

    def parallel_reduce(self, site: SpawnSite, lo: int, hi: int, grain: int,
                        body: Callable[[TaskContext, int, int], object],
                        combine: Callable[[object, object], object], identity=None):
        """Like parallel_for, but combine per-range results pairwise."""
        if lo > hi or grain < 1:
            raise InvalidRange(f"bad range [{lo}, {hi}) / grain {grain}")
        if lo == hi:
            return identity
        if hi - lo <= grain:
            return body(self, lo, hi)
        self._push_frame()
        try:
            return _reduce_range(self, site, lo, hi, grain, body, combine)
        finally:
            self._pop_frame()

    # causal regions ------------------------------------------------------

    def causal_begin(self, reg: CausalRegion) -> None:
        if self._prof is not None:
            self._prof.writer.register_region(reg)
            self._cut()
            self._regions.append(reg)
            self._tag = self._prof.writer.register_region(self._regions[0])
            self._start()
        else:
            self._regions.append(reg)

    def causal_end(self, reg: CausalRegion) -> None:
        if not self._regions or self._regions[-1] != reg:
            open_ = self._regions[-1].label if self._regions else None
            raise MismatchedRegion(f"causal_end({reg.label!r}) but innermost open region is {open_!r}")
        if self._prof is not None:
            self._cut()
            self._regions.pop()
            self._tag = (self._prof.writer.register_region(self._regions[0])
                         if self._regions else UNTAGGED)
            self._start()
        else:
            self._regions.pop()

    def causal(self, reg: CausalRegion):
        """Context manager wrapping causal_begin/causal_end."""
        return _RegionScope(self, reg)

    # task lifecycle (pool side) -----------------------------------------

    def _finish_task(self, is_root: bool) -> None:
        if self._regions:
            label = self._regions[-1].label
            self._regions.clear()
            raise CrossTaskRegion(f"task ended inside open causal region {label!r}")
        if self._groups[-1] is not None:
            self.sync()
        if self._prof is not None:
            self._close_step()
            if is_root:
                self._prof.builder.close_root(self._cursor)
            else:
                self._prof.builder.close_task(self._cursor)


class _RegionScope:
    def __init__(self, ctx, reg):
        self.ctx, self.reg = ctx, reg

    def __enter__(self):
        self.ctx.causal_begin(self.reg)

    def __exit__(self, *exc):
        self.ctx.causal_end(self.reg)


def _split_range(ctx, site, lo, hi, grain, body):
    if hi - lo <= grain:
        body(ctx, lo, hi)
        return
    mid = lo + (hi - lo) // 2
    ctx.spawn(site, _split_range, site, lo, mid, grain, body)
    ctx.spawn(site, _split_range, site, mid, hi, grain, body)
    ctx.sync()


def _reduce_range(ctx, site, lo, hi, grain, body, combine):
    if hi - lo <= grain:
        return body(ctx, lo, hi)
    mid = lo + (hi - lo) // 2
    left = ctx.spawn(site, _reduce_range, site, lo, mid, grain, body, combine)
    right = ctx.spawn(site, _reduce_range, site, mid, hi, grain, body, combine)
    ctx.sync()
    return combine(left.result, right.result)


class WorkStealingPool:
    """Fixed set of worker threads sharing tasks by random-victim stealing."""

    def __init__(self, workers: int | None = None, seed: int = 0):
        self.workers = workers or os.cpu_count() or 1
        self._deques = [deque() for _ in range(self.workers)]
        self._local = threading.local()
        self._cond = threading.Condition()
        self._stop = False
        self._seed = seed

    def worker_index(self) -> int:
        return getattr(self._local, "index", 0)

    def push(self, task: _Task) -> None:
        self._deques[self.worker_index()].append(task)
        with self._cond:
            self._cond.notify()

    def _find(self, k: int, rng: random.Random):
        try:
            return self._deques[k].pop()
        except IndexError:
            pass
        n = self.workers
        if n > 1:
            start = rng.randrange(n)
            for i in range(n):
                v = (start + i) % n
                if v == k:
                    continue
                try:
                    return self._deques[v].popleft()
                except IndexError:
                    continue
        return None

    def _execute(self, task: _Task, is_root: bool = False) -> None:
        ctx = task.ctx
        try:
            ctx._start()
            task.handle.result = task.fn(ctx, *task.args)
            ctx._finish_task(is_root)
        except BaseException as exc:  # noqa: BLE001 - surfaced at sync
            task.handle.error = exc
            if ctx._marker is not None:
                ctx._prof.backend.end_interval(ctx._marker)
                ctx._marker = None
            if task.group is not None:
                with task.group.lock:
                    task.group.errors.append(exc)
        finally:
            task.handle.done = True
            if task.group is not None:
                with task.group.lock:
                    task.group.pending -= 1
            with self._cond:
                self._cond.notify_all()

    def wait(self, group: _Group) -> None:
        k = self.worker_index()
        rng = self._local.rng
        while group.pending:
            task = self._find(k, rng)
            if task is not None:
                self._execute(task, is_root=task.group is None)
                continue
            with self._cond:
                if group.pending:
                    self._cond.wait(_WAIT_TIMEOUT)

    def _worker(self, k: int) -> None:
        self._local.index = k
        self._local.rng = random.Random(self._seed * 7919 + k)
        while not self._stop:
            task = self._find(k, self._local.rng)
            if task is not None:
                self._execute(task, is_root=task.group is None)
                continue
            with self._cond:
                if not self._stop:
                    self._cond.wait(_WAIT_TIMEOUT)

    def run(self, fn: Callable, ctx_factory: Callable[[], TaskContext]):
        """Execute ``fn(ctx)`` as the root task; returns its result."""
        root = _Task(fn, (), None, None, TaskHandle())
        self._stop = False
        self._deques[0].append(root)
        old_size = threading.stack_size()
        threading.stack_size(64 * 1024 * 1024)
        try:
            threads = [threading.Thread(target=self._worker, args=(k,), daemon=True,
                                        name=f"spanprof-worker-{k}")
                       for k in range(self.workers)]
        finally:
            threading.stack_size(old_size)
        # the root context must be created before any worker can pick it up
        root.ctx = ctx_factory()
        for t in threads:
            t.start()
        with self._cond:
            while not root.handle.done:
                self._cond.wait(0.05)
            self._stop = True
            self._cond.notify_all()
        for t in threads:
            t.join()
        if root.handle.error is not None:
            raise root.handle.error
        return root.handle.result


def _raise_recursion_limit():
    if sys.getrecursionlimit() < 20000:
        sys.setrecursionlimit(20000)


def run_profiled(root_task: Callable[[TaskContext], object], config: ProfileConfig | None = None,
                 backend: CounterBackend | None = None) -> Path:
    """Run ``root_task`` on the pool with profiling on; returns the profile path."""
    config = config or ProfileConfig.from_env()
    backend = backend or make_backend(config.counter)
    _raise_recursion_limit()
    pool = WorkStealingPool(config.workers)
    writer = ProfileWriter(config.out, backend.name)
    prof = _Profiler(writer, backend, pool.workers, pool)
    try:
        pool.run(root_task, lambda: TaskContext(pool, prof, prof.builder.open_root()))
    except BaseException:
        writer.close(canonical=False)
        raise
    writer.close()
    return writer.path


def run_unprofiled(root_task: Callable[[TaskContext], object], workers: int | None = None):
    """Run on the same pool with no DPST, counters or file output."""
    _raise_recursion_limit()
    pool = WorkStealingPool(workers)
    return pool.run(root_task, lambda: TaskContext(pool, None, None))


class SerialContext:
    """Serial elision: spawn is an inline call, sync only checks structure.

    Logical charges are summed in :attr:`ticks` so total work can be
    compared with a profiled run.
    """

    def __init__(self):
        self.ticks = 0
        self._groups: list[bool] = [False]
        self._regions: list[CausalRegion] = []

    def charge(self, cost: int) -> None:
        self.ticks += cost

    def spawn(self, site, fn, *args) -> TaskHandle:
        self._groups[-1] = True
        handle = TaskHandle()
        child = SerialContext()
        handle.result = fn(child, *args)
        if child._groups[-1]:
            child.sync()
        handle.done = True
        self.ticks += child.ticks
        return handle

    def sync(self) -> None:
        if not self._groups[-1]:
            raise NoOpenFinish("sync without a spawn since task start or last sync")
        self._groups[-1] = False

    def parallel_for(self, site, lo, hi, grain, body) -> None:
        if lo > hi or grain < 1:
            raise InvalidRange(f"bad range [{lo}, {hi}) / grain {grain}")
        if lo < hi:
            body(self, lo, hi)

    def parallel_reduce(self, site, lo, hi, grain, body, combine, identity=None):
        if lo > hi or grain < 1:
            raise InvalidRange(f"bad range [{lo}, {hi}) / grain {grain}")
        return body(self, lo, hi) if lo < hi else identity

    def causal_begin(self, reg) -> None:
        self._regions.append(reg)

    def causal_end(self, reg) -> None:
        if not self._regions or self._regions[-1] != reg:
            raise MismatchedRegion(f"causal_end({reg.label!r}) without matching begin")
        self._regions.pop()

    def causal(self, reg):
        return _RegionScope(self, reg)


def run_serial(root_task: Callable) -> tuple[object, int]:
    """Run the serial elision; returns (result, total logical ticks)."""
    _raise_recursion_limit()
    ctx = SerialContext()
    result = root_task(ctx)
    if ctx._groups[-1]:
        ctx.sync()
    return result, ctx.ticks
