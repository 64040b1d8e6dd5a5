"""Work counters that attribute ticks to step-node segments.

Every backend exposes the same three calls: ``begin_interval`` captures the
current per-thread reading, ``end_interval`` turns a marker into a tick
count, and ``charge`` (logical backend only) advances the counter by hand.
Intervals on one thread are strictly sequential; nesting them is an error.

Backends:

``logical``
    Deterministic. Workloads call ``charge`` explicitly; nothing else counts.
``clock``
    ``time.perf_counter_ns`` used as a cycles surrogate. Available
    everywhere but sensitive to preemption and scheduler noise.
``cycles`` / ``instructions``
    Linux ``perf_event_open`` counters, user space only, one fd per thread.
"""

from __future__ import annotations

import ctypes
import os
import platform
import struct
import threading
import time
from typing import NamedTuple

from .errors import BackendUnavailable, CrossThreadMarker, NestedInterval, WrongBackend

UNTAGGED = -1
MAX_TICKS = 2**63 - 1

BACKENDS = ("logical", "clock", "cycles", "instructions")


class WorkSegment(NamedTuple):
    """A measured slice of a step node, optionally tagged with a causal region."""

    region: int
    ticks: int

    @property
    def tagged(self) -> bool:
        return self.region != UNTAGGED


class Marker(NamedTuple):
    thread: int
    value: int


class CounterBackend:
    """Per-thread counter; subclasses implement ``_read``."""

    name = "abstract"

    def __init__(self):
        self._local = threading.local()

    def _read(self) -> int:
        raise NotImplementedError

    def begin_interval(self) -> Marker:
        local = self._local
        if getattr(local, "open", False):
            raise NestedInterval("an interval is already open on this thread")
        local.open = True
        return Marker(threading.get_ident(), self._read())

    def end_interval(self, marker: Marker) -> int:
        if marker.thread != threading.get_ident():
            raise CrossThreadMarker("marker was produced on another thread")
        ticks = self._read() - marker.value
        self._local.open = False
        return max(ticks, 0)

    def charge(self, cost: int) -> None:
        raise WrongBackend(f"charge() needs the logical backend, not {self.name!r}")


class LogicalCounter(CounterBackend):
    name = "logical"

    def _read(self) -> int:
        return getattr(self._local, "value", 0)

    def charge(self, cost: int) -> None:
        if cost < 0:
            raise ValueError("cost must be non-negative")
        value = getattr(self._local, "value", 0) + cost
        if value > MAX_TICKS:
            raise OverflowError("logical counter exceeded 2**63 - 1")
        self._local.value = value


class ClockCounter(CounterBackend):
    name = "clock"

    def _read(self) -> int:
        return time.perf_counter_ns()


# perf_event_open plumbing; only the attr fields we set are named.
_PERF_TYPE_HARDWARE = 0
_PERF_EVENTS = {"cycles": 0, "instructions": 1}
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6
_SYSCALL_NR = {"x86_64": 298, "aarch64": 241, "riscv64": 241}


class _PerfEventAttr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("reserved", ctypes.c_uint16),
    ]


def _open_perf_fd(event: str) -> int:
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None or not hasattr(ctypes, "CDLL"):
        raise BackendUnavailable(f"perf events unsupported on {platform.machine()}")
    try:
        libc = ctypes.CDLL(None, use_errno=True)
    except OSError as exc:
        raise BackendUnavailable(str(exc)) from exc
    attr = _PerfEventAttr()
    attr.type = _PERF_TYPE_HARDWARE
    attr.size = ctypes.sizeof(_PerfEventAttr)
    attr.config = _PERF_EVENTS[event]
    attr.flags = _FLAG_EXCLUDE_KERNEL | _FLAG_EXCLUDE_HV
    # pid=0, cpu=-1: this thread, any cpu
    fd = libc.syscall(nr, ctypes.byref(attr), 0, -1, -1, 0)
    if fd < 0:
        err = ctypes.get_errno()
        raise BackendUnavailable(
            f"perf_event_open({event}) failed: {os.strerror(err)}; "
            "set SPANPROF_COUNTER=clock or logical"
        )
    return fd


class PerfCounter(CounterBackend):
    """Hardware counter read through one perf fd per thread."""

    def __init__(self, event: str = "cycles"):
        if event not in _PERF_EVENTS:
            raise ValueError(f"unknown perf event {event!r}")
        super().__init__()
        self.name = event
        self._event = event
        self._fds: list[int] = []
        self._fds_lock = threading.Lock()
        # probe on the constructing thread so failures surface early
        self._thread_fd()

    def _thread_fd(self) -> int:
        fd = getattr(self._local, "fd", None)
        if fd is None:
            fd = _open_perf_fd(self._event)
            self._local.fd = fd
            with self._fds_lock:
                self._fds.append(fd)
        return fd

    def _read(self) -> int:
        (value,) = struct.unpack("<q", os.read(self._thread_fd(), 8))
        return value

    def close(self) -> None:
        with self._fds_lock:
            for fd in self._fds:
                os.close(fd)
            self._fds.clear()


def make_backend(name: str | None = None) -> CounterBackend:
    """Build a backend by name; ``None`` reads ``SPANPROF_COUNTER`` (default logical)."""
    if name is None:
        name = os.environ.get("SPANPROF_COUNTER", "logical")
    if name == "logical":
        return LogicalCounter()
    if name == "clock":
        return ClockCounter()
    if name in _PERF_EVENTS:
        return PerfCounter(name)
    raise ValueError(f"unknown counter backend {name!r}; expected one of {BACKENDS}")
