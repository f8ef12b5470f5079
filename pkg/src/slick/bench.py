"""Throughput and latency benchmarks over the shipped applications."""

from __future__ import annotations

import json
import re
import statistics
import threading
import time
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .chain import RingRegistry
from .packet import AddressSpace
from .pktgen import synth_frames
from .runtime import (Instance, InstanceSettings, NicPtpClock, HostClock, Role, StopCondition,
                      instantiate)

APPS = ("wire", "ethermirror", "firewall", "toenclave", "seal", "chain", "iprouter", "ids")
DEFAULT_SIZES = (64, 128, 256, 512, 1024, 1518)
ETH_OVERHEAD = 20  # preamble, start delimiter and inter-frame gap, in bytes

_SOURCE = "src :: {source};\nsink :: ToTestDevice(d0);\n"
_SOURCE_DECL = re.compile(r"FromTestDevice\(d0[^)]*\)")
_BODIES = {
    "wire": "src -> Wire -> sink;",
    "ethermirror": "src -> EtherMirror -> sink;",
    "firewall": "fw :: Firewall({configs}/fw10.rules);\nsrc -> fw -> sink;\nfw [1] -> Discard;",
    "toenclave": "src -> ToEnclave -> Wire -> sink;",
    "seal": "src -> ToEnclave -> Seal(sa0) -> Unseal(sa0) -> sink;",
}


def configs_dir() -> Path:
    return Path(str(resources.files("slick") / "configs"))


def app_config(app: str, size: int | None) -> str:
    """Config text for ``app``.

    With a ``size`` the source synthesizes an unbounded stream of frames of
    that size; with None it only replays frames injected into device d0.
    """
    cdir = configs_dir()
    source = f"FromTestDevice(d0, SIZE {size})" if size else "FromTestDevice(d0)"
    if app in _BODIES:
        return _SOURCE.format(source=source) + _BODIES[app].format(configs=cdir)
    if app in ("iprouter", "ids"):
        text = (cdir / f"{app}.slick").read_text(encoding="utf-8")
    elif app == "chain":
        text = (cdir / "chain_primary.slick").read_text(encoding="utf-8")
    else:
        raise ValueError(f"unknown app {app!r}; choose from {', '.join(APPS)}")
    return _SOURCE_DECL.sub(source, text, count=1)


BENCH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["app", "mode", "packet_size", "duration_s", "rx", "tx", "drops",
                 "throughput_pps", "throughput_gbps", "latency_p50_ns", "latency_p99_ns",
                 "clock_reads", "timer_optimization"],
    "properties": {
        "app": {"type": "string", "enum": list(APPS)},
        "mode": {"type": "string", "enum": ["throughput", "latency"]},
        "packet_size": {"type": "integer", "minimum": 1},
        "duration_s": {"type": "number", "minimum": 0},
        "rx": {"type": "integer", "minimum": 0},
        "tx": {"type": "integer", "minimum": 0},
        "drops": {"type": "integer", "minimum": 0},
        "throughput_pps": {"type": "number", "minimum": 0},
        "throughput_gbps": {"type": "number", "minimum": 0},
        "latency_p50_ns": {"type": ["number", "null"]},
        "latency_p99_ns": {"type": ["number", "null"]},
        "clock_reads": {"type": "integer", "minimum": 0},
        "timer_optimization": {"type": "boolean"},
    },
}


@dataclass
class BenchReport:
    app: str
    mode: str
    packet_size: int
    duration_s: float
    rx: int
    tx: int
    drops: int
    throughput_pps: float
    throughput_gbps: float
    latency_p50_ns: float | None
    latency_p99_ns: float | None
    clock_reads: int
    timer_optimization: bool = True

    def to_json(self) -> str:
        # field order is the dataclass order, so output is deterministic
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> BenchReport:
        d = json.loads(text)
        jsonschema.validate(d, BENCH_SCHEMA)
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    def validate(self) -> None:
        jsonschema.validate(json.loads(self.to_json()), BENCH_SCHEMA)


def percentile(samples: list[float], q: float) -> float:
    """Nearest-rank percentile."""
    s = sorted(samples)
    k = max(0, min(len(s) - 1, int(-(-q * len(s) // 100)) - 1))
    return float(s[k])


def _settings(**kw) -> InstanceSettings:
    kw.setdefault("space", AddressSpace())
    kw.setdefault("rings", RingRegistry())
    kw.setdefault("secrets", {"sa0": bytes(range(32))})
    return InstanceSettings(**kw)


def _report(app, mode, size, secs, rx, tx, drops, reads, opt, lat=None) -> BenchReport:
    pps = tx / secs if secs > 0 else 0.0
    gbps = pps * (size + ETH_OVERHEAD) * 8 / 1e9
    p50 = percentile(lat, 50) if lat else None
    p99 = percentile(lat, 99) if lat else None
    return BenchReport(app, mode, size, round(secs, 6), rx, tx, drops, round(pps, 3),
                       round(gbps, 6), p50, p99, reads, opt)


def run_throughput(app: str, size: int, duration: float = 1.0,
                   timer_optimization: bool = True) -> BenchReport:
    """Flood ``app`` with ``size``-byte frames for ``duration`` seconds of wall time."""
    if app == "chain":
        return _run_chain_throughput(size, duration, timer_optimization)
    inst = instantiate(app_config(app, size),
                       _settings(clock=HostClock(), timer_optimization=timer_optimization,
                                 base_dir=configs_dir()))
    t0 = time.perf_counter()
    inst.run(StopCondition(duration_ns=int(duration * 1e9)))
    secs = time.perf_counter() - t0
    return _report(app, "throughput", size, secs, inst.rx, inst.tx, inst.drops,
                   inst.clock.read_count, timer_optimization)


def chain_pair(size: int | None = None, timer_optimization: bool = True,
               clock_factory=HostClock, primary_text: str | None = None) -> tuple[Instance, Instance]:
    """Primary and secondary instances of the circular chain, sharing a ring registry."""
    rings, space = RingRegistry(), AddressSpace()
    cdir = configs_dir()
    text = primary_text or (app_config("chain", size) if size else
                            (cdir / "chain_primary.slick").read_text(encoding="utf-8"))
    a = instantiate(text, _settings(id="primary", role=Role.PRIMARY, rings=rings, space=space,
                                    clock=clock_factory(), timer_optimization=timer_optimization))
    b = instantiate((cdir / "chain_secondary.slick").read_text(encoding="utf-8"),
                    _settings(id="secondary", role=Role.SECONDARY, rings=rings, space=space,
                              clock=clock_factory(), timer_optimization=timer_optimization))
    return a, b


def run_chain(a: Instance, b: Instance, threaded: bool = False, timeout: float = 60.0) -> None:
    """Run both instances until no packet is left in flight anywhere."""
    if not threaded:
        while not (a.idle() and b.idle()):
            a.step()
            b.step()
        a.flush()
        b.flush()
        return
    stop = threading.Event()
    workers = [threading.Thread(target=inst.run, args=(StopCondition(event=stop),),
                                name=f"worker-{inst.id}", daemon=True) for inst in (a, b)]
    for w in workers:
        w.start()
    deadline = time.monotonic() + timeout
    try:
        while time.monotonic() < deadline:
            if (all(d.drained for d in a.devices.values())
                    and a.untrusted.in_flight() == 0 and a.trusted.in_flight() == 0):
                break
            time.sleep(0.001)
        else:
            raise TimeoutError("chain did not drain")
    finally:
        stop.set()
        for w in workers:
            w.join()


def _run_chain_throughput(size, duration, opt) -> BenchReport:
    a, b = chain_pair(size, opt)
    stop = threading.Event()
    workers = [threading.Thread(target=inst.run, args=(StopCondition(event=stop),), daemon=True)
               for inst in (a, b)]
    t0 = time.perf_counter()
    for w in workers:
        w.start()
    time.sleep(duration)
    stop.set()
    for w in workers:
        w.join()
    secs = time.perf_counter() - t0
    sink = a.devices["d0"].tx_count
    return _report("chain", "throughput", size, secs, a.rx, sink, a.drops + b.drops,
                   a.clock.read_count + b.clock.read_count, opt)


def run_latency(app: str = "ethermirror", size: int = 64, samples: int = 2000,
                timer_optimization: bool = True, clock_factory=NicPtpClock,
                duration: float | None = None) -> BenchReport:
    """One packet in flight at a time; latency = measured delta plus modelled clock cost."""
    if app == "chain":
        raise ValueError("latency mode is not available for the chain app")
    inst = instantiate(app_config(app, None), _settings(clock=clock_factory(), latency_mode=True,
                                       timer_optimization=timer_optimization,
                                       base_dir=configs_dir()))
    dev = inst.device("d0")
    frames = list(synth_frames(size, 64, seed=7))
    t0 = time.perf_counter()
    end = t0 + duration if duration else None
    n = 0
    while n < samples and (end is None or time.perf_counter() < end):
        before = len(dev.latency)
        dev.inject([frames[n % len(frames)]])
        for _ in range(100):
            inst.step()
            if len(dev.latency) > before:
                break
        n += 1
    inst.flush()
    secs = time.perf_counter() - t0
    lat = [wall + cost for wall, cost in dev.latency]
    return _report(app, "latency", size, secs, inst.rx, inst.tx, inst.drops,
                   inst.clock.read_count, timer_optimization, lat)


def format_table(reports: list[BenchReport]) -> str:
    head = f"{'app':<12}{'mode':<11}{'size':>6}{'tx':>10}{'Mpps':>9}{'Gbit/s':>9}{'p50 us':>9}{'p99 us':>9}"
    rows = [head, "-" * len(head)]
    for r in reports:
        p50 = f"{r.latency_p50_ns / 1e3:.2f}" if r.latency_p50_ns is not None else "-"
        p99 = f"{r.latency_p99_ns / 1e3:.2f}" if r.latency_p99_ns is not None else "-"
        rows.append(f"{r.app:<12}{r.mode:<11}{r.packet_size:>6}{r.tx:>10}"
                    f"{r.throughput_pps / 1e6:>9.3f}{r.throughput_gbps:>9.3f}{p50:>9}{p99:>9}")
    return "\n".join(rows)


def median_of(values) -> float:
    return statistics.median(values)
