from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from conftest import assert_conserved, build, replay
from slick.elements.base import Element, element_class
from slick.pktgen import synth_frames
from slick.runtime import (NICPTP_READ_COST_NS, InstrumentedTestClock, NicPtpClock,
                           StopCondition, TimerEvent, TimerKind)

WIRE = "src :: FromTestDevice(d0); sink :: ToTestDevice(d0); src -> Wire -> sink;"
MIRROR = "src :: FromTestDevice(d0); src -> EtherMirror -> ToTestDevice(d0);"


@element_class("FaultEvery3")
class FaultEvery3(Element):
    """Raises on every third packet."""

    def push(self, port, pkt):
        self.counters["seen"] += 1
        if self.counters["seen"] % 3 == 0:
            raise RuntimeError("boom")
        self.emit(0, pkt)


def test_no_clock_reads_without_timers_when_optimized():
    inst = build(WIRE)
    inst.device("d0").inject(synth_frames(64, 500))
    for _ in range(200):
        inst.step()
    assert inst.clock.read_count == 0
    assert inst.tx + len(inst.elements["sink"]._q) == inst.rx


def test_idle_iterations_read_clock_when_unoptimized():
    inst = build(WIRE, timer_optimization=False)
    for _ in range(50):
        inst.step()
    assert inst.clock.read_count >= 50


def _reads_for(events: int, optimized: bool) -> int:
    inst = build(WIRE, timer_optimization=optimized)
    evs = [TimerEvent(TimerKind.IMMEDIATE, callback=lambda ev: None) for _ in range(events)]
    before = inst.clock.read_count
    for ev in evs:
        inst.schedule_timer(ev)
    inst.step()
    assert all(ev.fired == 1 for ev in evs)
    return inst.clock.read_count - before


@given(st.integers(1, 64))
def test_immediate_events_save_at_least_one_read_each(n):
    assert _reads_for(n, False) - _reads_for(n, True) >= n


def _latency_costs(optimized: bool, packets: int = 50) -> list[int]:
    inst = build(MIRROR, clock=NicPtpClock(), latency_mode=True, timer_optimization=optimized)
    dev = inst.device("d0")
    for f in synth_frames(64, packets):
        dev.inject([f])
        inst.run()
    assert len(dev.latency) == packets
    return [cost for _, cost in dev.latency]


def test_nicptp_latency_cost_is_two_reads_when_optimized():
    assert set(_latency_costs(True)) == {2 * NICPTP_READ_COST_NS}


def test_unoptimized_latency_cost_is_higher():
    costs = _latency_costs(False)
    assert min(costs) > 2 * NICPTP_READ_COST_NS


def test_periodic_timer_fires_on_virtual_time():
    clock = InstrumentedTestClock(tick_ns=1_000_000)
    inst = build(WIRE, clock=clock)
    ev = inst.schedule_timer(TimerEvent(TimerKind.PERIODIC, interval=10_000_000,
                                        callback=lambda ev: None))
    inst.run(StopCondition(iterations=50))
    assert ev.fired in (4, 5)
    ev.cancel()
    fired = ev.fired
    inst.run(StopCondition(iterations=50))
    assert ev.fired == fired


def test_oneshot_timer_fires_once():
    clock = InstrumentedTestClock()
    inst = build(WIRE, clock=clock)
    ev = inst.schedule_timer(TimerEvent(TimerKind.ONESHOT, deadline=100,
                                        callback=lambda ev: None))
    inst.step()
    assert ev.fired == 0
    clock.set(100)
    inst.step()
    inst.step()
    assert ev.fired == 1


def test_periodic_requires_interval():
    inst = build(WIRE)
    with pytest.raises(ValueError):
        inst.schedule_timer(TimerEvent(TimerKind.PERIODIC))


def test_element_faults_drop_and_keep_running():
    inst = replay("src :: FromTestDevice(d0); src -> FaultEvery3 -> ToTestDevice(d0);",
                  synth_frames(64, 30))
    assert inst.rx == 30 and inst.drops == 10 and inst.errors == 10
    assert_conserved(inst)


@settings(max_examples=25)
@given(st.integers(0, 3000), st.sampled_from([1, 7, 32, 64]))
def test_conservation_any_load(n, burst):
    inst = replay(WIRE, synth_frames(64, n) if n else [], burst=burst)
    assert inst.rx == n
    assert_conserved(inst)


def test_pool_exhaustion_backpressures_without_loss():
    inst = replay(WIRE, synth_frames(64, 5000), untrusted_capacity=16)
    assert inst.rx == inst.tx == 5000
    assert_conserved(inst)


def test_stop_on_packets_and_stats():
    inst = build("src :: FromTestDevice(d0, SIZE 64); src -> Wire -> ToTestDevice(d0);")
    stats = inst.run(StopCondition(packets=1000))
    assert stats.rx >= 1000 and stats.tx == stats.rx
    assert '"rx"' in stats.to_json()


def test_handlers():
    inst = replay("src :: FromTestDevice(d0); c :: Counter; src -> c -> ToTestDevice(d0);",
                  synth_frames(100, 7))
    assert inst.read_handler("c.count") == "7"
    assert inst.read_handler("c.byte_count") == "700"
    inst.write_handler("c.reset")
    assert inst.read_handler("c.count") == "0"
    with pytest.raises(KeyError):
        inst.read_handler("c.nope")
    with pytest.raises(KeyError):
        inst.read_handler("nobody.count")
