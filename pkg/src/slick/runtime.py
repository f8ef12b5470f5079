"""Instances, the poll-mode task scheduler, timers and clock sources."""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from .chain import SHARED_RINGS, ChainError
from .config import CheckedGraph, ConfigGraph, parse_config, validate_graph
from .elements import register_all
from .elements.base import REGISTRY, Element, ElementInitError, FatalElementError
from .packet import (DEFAULT_BUF_SIZE, DEFAULT_ENCLAVE_SIZE, AddressSpace, Enclave, PacketHandle,
                     PacketPool, RegionTag, DEFAULT_SPACE)

log = logging.getLogger(__name__)

BURST = 32
NICPTP_READ_COST_NS = 900


class Role(enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


class ClockKind(enum.Enum):
    HOST = "host"
    NICPTP = "nicptp"
    TEST = "test"


class ClockSource:
    """Monotonic nanosecond clock that counts and prices every ``now()``.

    ``cost_ns`` accumulates ``read_cost_ns`` per read; it is the virtual
    latency the reads would add on the modelled platform.  ``peek`` reads
    without accounting and is meant for harness code only.
    """

    kind = ClockKind.HOST

    def __init__(self, read_cost_ns: int = 0):
        self.read_cost_ns = read_cost_ns
        self.read_count = 0
        self.cost_ns = 0
        self._last = 0

    def _raw(self) -> int:
        return time.monotonic_ns()

    def now(self) -> int:
        self.read_count += 1
        self.cost_ns += self.read_cost_ns
        t = self._raw()
        if t < self._last:
            t = self._last
        self._last = t
        return t

    def peek(self) -> int:
        return max(self._raw(), self._last)

    def tick(self) -> None:
        """Called once per scheduler iteration; only virtual clocks move here."""


class HostClock(ClockSource):
    kind = ClockKind.HOST


class NicPtpClock(ClockSource):
    """On-NIC PTP clock; read without leaving the enclave but not for free."""

    kind = ClockKind.NICPTP

    def __init__(self, read_cost_ns: int = NICPTP_READ_COST_NS):
        super().__init__(read_cost_ns)


class InstrumentedTestClock(ClockSource):
    """Manually driven virtual clock; optionally advances ``tick_ns`` per iteration."""

    kind = ClockKind.TEST

    def __init__(self, start_ns: int = 0, tick_ns: int = 0, read_cost_ns: int = 0):
        super().__init__(read_cost_ns)
        self._t = start_ns
        self.tick_ns = tick_ns

    def _raw(self) -> int:
        return self._t

    def set(self, t: int) -> None:
        if t < self._t:
            raise ValueError("test clock cannot go backwards")
        self._t = t

    def advance(self, dt: int) -> None:
        self._t += dt

    def tick(self) -> None:
        self._t += self.tick_ns


def clock_from_env(default: str = "host") -> ClockSource:
    name = os.environ.get("SLICK_CLOCK", default).strip().lower()
    if name == "host":
        return HostClock()
    if name == "nicptp":
        return NicPtpClock()
    raise ValueError(f"SLICK_CLOCK must be 'host' or 'nicptp', not {name!r}")


class TimerKind(enum.Enum):
    IMMEDIATE = "immediate"
    PERIODIC = "periodic"
    ONESHOT = "oneshot"


@dataclass(eq=False)
class TimerEvent:
    kind: TimerKind
    element: Element | None = None
    deadline: int = 0
    interval: int = 0
    callback: Callable[[TimerEvent], object] | None = None
    scheduled: bool = field(default=False, repr=False)
    cancelled: bool = field(default=False, repr=False)
    fired: int = 0

    def cancel(self) -> None:
        self.cancelled = True


class TimerQueue:
    def __init__(self):
        self.immediate: deque[TimerEvent] = deque()
        self.heap: list[tuple[int, int, TimerEvent]] = []
        self._seq = itertools.count()

    def push(self, ev: TimerEvent) -> None:
        heapq.heappush(self.heap, (ev.deadline, next(self._seq), ev))

    def __len__(self):
        return len(self.immediate) + len(self.heap)

    def periodic_count(self) -> int:
        return sum(1 for _, _, ev in self.heap if ev.kind is TimerKind.PERIODIC and not ev.cancelled)


@dataclass
class StopCondition:
    packets: int | None = None
    duration_ns: int | None = None
    iterations: int | None = None
    until_idle: bool = False
    event: threading.Event | None = None

    @classmethod
    def drain(cls) -> StopCondition:
        return cls(until_idle=True)


@dataclass
class RunStats:
    instance: str
    rx: int
    tx: int
    drops: int
    errors: int
    iterations: int
    clock_reads: int
    clock_cost_ns: int
    duration_ns: int
    elements: dict[str, dict[str, int]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class InstanceSettings:
    id: str = "slick0"
    role: Role = Role.PRIMARY
    clock: ClockSource | None = None
    burst: int = BURST
    untrusted_capacity: int = 4096
    trusted_capacity: int = 2048
    buf_size: int = DEFAULT_BUF_SIZE
    enclave_size: int = DEFAULT_ENCLAVE_SIZE
    timer_optimization: bool = True
    latency_mode: bool = False
    base_dir: str | Path = "."
    identity: str = "slick"
    measurement: bytes | None = None
    secrets: dict[str, bytes] = field(default_factory=dict)
    rings: object | None = None
    space: AddressSpace | None = None
    state_file: str | None = None


class Instance:
    """A running element graph with its pools, enclave, timers and clock."""

    def __init__(self, checked: CheckedGraph, settings: InstanceSettings):
        self.settings = settings
        self.id = settings.id
        self.role = settings.role
        self.graph = checked
        self.clock = settings.clock or clock_from_env()
        self.burst = settings.burst
        self.optimized = settings.timer_optimization
        self.latency_mode = settings.latency_mode
        self.base_dir = Path(settings.base_dir)
        self.space = settings.space or DEFAULT_SPACE
        self.rings = settings.rings if settings.rings is not None else SHARED_RINGS
        self.timers = TimerQueue()
        self.rx = 0
        self.tx = 0
        self.drops = 0
        self.errors = 0
        self.iterations = 0
        self.devices: dict = {}
        self.security_associations: dict = {}
        self.persist_specs: list = []
        self.stopped = False

        self.enclave = Enclave(settings.enclave_size, self.space)
        self.untrusted = PacketPool(RegionTag.UNTRUSTED, settings.untrusted_capacity,
                                    settings.buf_size, space=self.space)
        self.trusted = PacketPool(RegionTag.TRUSTED, settings.trusted_capacity,
                                  settings.buf_size, enclave=self.enclave)

        if settings.measurement is None:
            from .attest import measure
            settings.measurement = measure(settings.identity, "")
        self.measurement = settings.measurement

        self.elements: dict[str, Element] = {}
        for d in checked.decls:
            cls = REGISTRY[d.cls]
            try:
                self.elements[d.name] = cls(d.name, d.args, self)
            except ElementInitError:
                raise
            except Exception as exc:
                raise ElementInitError(d.name, str(exc)) from exc
        for name, e in self.elements.items():
            nout = checked.ports[name][1]
            e.out = [None] * nout
            for p, (dst, dport) in checked.outputs[name].items():
                e.out[p] = (self.elements[dst], dport)
        for name, e in self.elements.items():
            try:
                e.initialize()
            except (ElementInitError, ChainError):
                raise
            except Exception as exc:
                raise ElementInitError(name, str(exc)) from exc
        self.tasks = [self.elements[n] for n in checked.tasks]

        if settings.state_file and not self.persist_specs:
            from .persist import StateFileSpec
            self.persist_specs.append(
                StateFileSpec(settings.state_file, self.seal_key("statefile")))
        if self.persist_specs:
            from .persist import arm
            for spec in self.persist_specs:
                arm(self, spec)

    # keys and secrets

    @property
    def bounds(self):
        return self.enclave.bounds

    def secret(self, name: str) -> bytes | None:
        return self.settings.secrets.get(name)

    def seal_key(self, purpose: str) -> bytes:
        from .crypto import derive_seal_key
        return derive_seal_key(self.measurement, purpose)

    def device(self, name: str):
        from .elements.devices import TestDevice
        dev = self.devices.get(name)
        if dev is None:
            dev = self.devices[name] = TestDevice(name, self)
        return dev

    # timers

    def schedule_timer(self, ev: TimerEvent) -> TimerEvent:
        ev.cancelled = False
        ev.scheduled = True
        if ev.kind is TimerKind.IMMEDIATE:
            if self.optimized:
                self.timers.immediate.append(ev)
                return ev
            ev.deadline = self.clock.now()
        elif ev.kind is TimerKind.PERIODIC:
            if ev.interval <= 0:
                raise ValueError("periodic timers need a positive interval")
            if ev.deadline == 0:
                ev.deadline = self.clock.now() + ev.interval
        self.timers.push(ev)
        return ev

    def _dispatch(self, ev: TimerEvent) -> None:
        ev.scheduled = False
        if ev.cancelled:
            return
        ev.fired += 1
        try:
            if ev.callback is not None:
                ev.callback(ev)
            elif ev.element is not None:
                ev.element.run_timer(ev)
        except FatalElementError:
            raise
        except Exception:
            self.errors += 1
            log.exception("timer callback failed")
        if ev.kind is TimerKind.PERIODIC and not ev.cancelled:
            ev.deadline += ev.interval
            ev.scheduled = True
            self.timers.push(ev)

    def _run_timers(self) -> int:
        q = self.timers
        fired = 0
        if self.optimized:
            # immediate events run first and never touch the clock
            for _ in range(len(q.immediate)):
                self._dispatch(q.immediate.popleft())
                fired += 1
            if not q.heap:
                return fired
        now = self.clock.now()
        heap = q.heap
        while heap and heap[0][0] <= now:
            _, _, ev = heapq.heappop(heap)
            self._dispatch(ev)
            fired += 1
        return fired

    # data path

    def fault(self, element: Element, pkt: PacketHandle, exc: Exception) -> None:
        """Non-fatal element exception while handling ``pkt``: count and drop."""
        if isinstance(exc, FatalElementError):
            raise exc
        self.errors += 1
        element.counters["fault"] += 1
        if pkt.live:
            pkt.pool.free(pkt)
        self.drops += 1
        log.debug("element %s fault: %s", element.name, exc)

    def step(self) -> int:
        work = 0
        burst = self.burst
        for t in self.tasks:
            work += t.run_task(burst)
        if self.timers.immediate or self.timers.heap or not self.optimized:
            work += self._run_timers()
        self.iterations += 1
        self.clock.tick()
        return work

    def idle(self) -> bool:
        return not self.timers.immediate and all(t.exhausted for t in self.tasks)

    def run(self, stop: StopCondition | None = None) -> RunStats:
        stop = stop or StopCondition.drain()
        clock = self.clock
        start = clock.peek()
        it0 = self.iterations
        reads0 = clock.read_count
        deadline = start + stop.duration_ns if stop.duration_ns is not None else None
        step = self.step
        while True:
            work = step()
            if stop.iterations is not None and self.iterations - it0 >= stop.iterations:
                break
            if stop.packets is not None and self.rx >= stop.packets and not self.timers.immediate:
                break
            if deadline is not None and clock.peek() >= deadline:
                break
            if stop.until_idle and work == 0 and self.idle():
                break
            if stop.event is not None and stop.event.is_set():
                break
        self.flush()
        stats = self.stats(clock.peek() - start)
        stats.clock_reads = clock.read_count - reads0
        return stats

    def flush(self) -> None:
        for _ in range(4):
            if not self.timers.immediate:
                break
            self._run_timers()
        for e in self.elements.values():
            e.cleanup()

    def stats(self, duration_ns: int = 0) -> RunStats:
        return RunStats(
            instance=self.id, rx=self.rx, tx=self.tx, drops=self.drops, errors=self.errors,
            iterations=self.iterations, clock_reads=self.clock.read_count,
            clock_cost_ns=self.clock.cost_ns, duration_ns=duration_ns,
            elements={n: dict(e.counters) for n, e in self.elements.items()})

    # handlers

    def _handler(self, path: str, table: str):
        name, _, hname = path.rpartition(".")
        e = self.elements.get(name)
        if e is None:
            raise KeyError(f"no element '{name}'")
        h = getattr(e, table).get(hname)
        if h is None:
            raise KeyError(f"element '{name}' has no handler '{hname}'")
        return h

    def read_handler(self, path: str) -> str:
        return self._handler(path, "read_handlers")()

    def write_handler(self, path: str, value: str = ""):
        return self._handler(path, "write_handlers")(value)

    def pool_balance(self) -> dict[str, int]:
        return {"untrusted": self.untrusted.in_flight(), "trusted": self.trusted.in_flight()}


def load_graph(source: str | ConfigGraph | CheckedGraph) -> CheckedGraph:
    register_all()
    if isinstance(source, CheckedGraph):
        return source
    if isinstance(source, str):
        source = parse_config(source)
    return validate_graph(source, REGISTRY)


def instantiate(source: str | ConfigGraph | CheckedGraph,
                settings: InstanceSettings | None = None) -> Instance:
    return Instance(load_graph(source), settings or InstanceSettings())


def load_instance(path: str | Path, settings: InstanceSettings | None = None) -> Instance:
    path = Path(path)
    settings = settings or InstanceSettings()
    if str(settings.base_dir) == ".":
        settings.base_dir = path.parent
    return instantiate(path.read_text(encoding="utf-8"), settings)
