"""In-process test NICs: a replay/synthetic source and a recording sink.

A ``TestDevice`` owns an rx descriptor ring in untrusted memory.  The
"hardware" side fills buffers from the untrusted pool and posts their
words; ``FromTestDevice`` pulls words off that ring and validates each one
before trusting it, exactly as it would for a real NIC ring the host
controls.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from pathlib import Path

from ..chain import Ring
from ..packet import HEADROOM, PoolExhausted, resolve_word
from ..pcap import read_pcap
from ..pktgen import synth_frames
from .base import Element, element_class, parse_bool, split_keywords, unquote

log = logging.getLogger(__name__)

RX_RING_SIZE = 1024
SYNTH_TEMPLATES = 64


class TestDevice:
    """Wire-side state of one simulated port, shared by its source and sink."""

    __test__ = False  # not a pytest class

    def __init__(self, name: str, instance):
        self.name = name
        self.instance = instance
        self.rx_ring = Ring(f"{name}.rx", RX_RING_SIZE)
        self.pending: deque[bytes] = deque()
        self._templates: list[bytes] | None = None
        self._tcycle = None
        self.synth_remaining: int | None = 0
        self.rate: float | None = None
        self._rate_t0: int | None = None
        self.generated = 0
        self.rx_nobuf = 0
        self.tx_count = 0
        self.tx_bytes = 0
        self.record = False
        self.recorded: list[bytes] = []
        self.latency: list[tuple[int, int]] = []

    # wire side

    def inject(self, frames) -> None:
        self.pending.extend(bytes(f) for f in frames)

    def synthesize(self, size: int, count: int | None, seed: int = 1,
                   rate: float | None = None) -> None:
        """Generate ``count`` frames of ``size`` bytes (None = unbounded)."""
        self._templates = list(synth_frames(size, SYNTH_TEMPLATES, seed))
        self._tcycle = itertools.cycle(self._templates)
        self.synth_remaining = count
        self.rate = rate

    def inject_word(self, word: int) -> bool:
        """Test hook: post a forged descriptor word."""
        return self.rx_ring.inject_word(word)

    @property
    def drained(self) -> bool:
        return not self.pending and self.synth_remaining == 0 and len(self.rx_ring) == 0

    def _allowance(self, want: int) -> int:
        if not self.rate:
            return want
        now = self.instance.clock.peek()
        if self._rate_t0 is None:
            self._rate_t0 = now
        due = int((now - self._rate_t0) * self.rate / 1e9) + 1
        return max(0, min(want, due - self.generated))

    def fill(self, budget: int) -> int:
        """Move up to ``budget`` frames from the wire into posted rx buffers."""
        ring = self.rx_ring
        n = min(budget, ring.free_space())
        if n <= 0:
            return 0
        pending = self.pending
        synth = self.synth_remaining
        if not pending:
            if synth == 0:
                return 0
            n = self._allowance(n)
        pool = self.instance.untrusted
        done = 0
        while done < n:
            if pending:
                frame = pending[0]
            elif synth is None or synth > 0:
                frame = next(self._tcycle)
            else:
                break
            try:
                h = pool.alloc(len(frame))
            except PoolExhausted:
                self.rx_nobuf += 1
                break
            h.buf[HEADROOM:HEADROOM + len(frame)] = frame
            ring.enqueue(h)
            if pending:
                pending.popleft()
            elif synth is not None:
                synth -= 1
            done += 1
        self.synth_remaining = synth
        self.generated += done
        return done

    def transmit(self, pkt) -> None:
        self.tx_count += 1
        self.tx_bytes += pkt.len
        if self.record:
            self.recorded.append(pkt.bytes())


@element_class("FromTestDevice", "FromDPDKDevice")
class FromTestDevice(Element):
    """Source: ``FromTestDevice(DEV [, PCAP path] [, SIZE n, LIMIT n, RATE pps, SEED n])``."""

    ninputs = 0
    noutputs = 1
    task = True

    def configure(self, args):
        pos, kw = split_keywords(args, {"PCAP", "SIZE", "LIMIT", "RATE", "SEED"})
        if len(pos) != 1:
            self.fail("expects exactly one device name")
        self.device = self.instance.device(unquote(pos[0]))
        try:
            for p in kw.get("PCAP", []):
                path = Path(unquote(p))
                if not path.is_absolute():
                    path = self.instance.base_dir / path
                self.device.inject(read_pcap(path))
            if "SIZE" in kw:
                limit = int(kw["LIMIT"][-1]) if "LIMIT" in kw else None
                rate = float(kw["RATE"][-1]) if "RATE" in kw else None
                seed = int(kw.get("SEED", ["1"])[-1])
                self.device.synthesize(int(kw["SIZE"][-1]), limit, seed, rate)
            elif "LIMIT" in kw or "RATE" in kw:
                self.fail("LIMIT and RATE need SIZE")
        except (OSError, ValueError) as exc:
            self.fail(str(exc))
        self._words = [0] * self.instance.burst
        self.read_handlers.update(attacks=lambda: str(self.counters["attack"]))

    def run_task(self, budget):
        dev = self.device
        dev.fill(budget)
        ring = dev.rx_ring
        words = self._words
        if budget > len(words):
            words = self._words = [0] * budget
        n = ring.dequeue_burst_words(words, budget)
        if not n:
            return 0
        inst = self.instance
        bounds, space = inst.bounds, inst.space
        stamp = inst.latency_mode
        clock = inst.clock
        for i in range(n):
            w = words[i]
            h = resolve_word(w, bounds, space)
            if h is None:
                ring.reject(w, f" (element {self.name})")
                self.counters["attack"] += 1
                continue
            inst.rx += 1
            if stamp:
                h.vmark = clock.cost_ns
                h.ts = clock.now()
            try:
                self.emit(0, h)
            except Exception as exc:
                inst.fault(self, h, exc)
        return n

    @property
    def exhausted(self):
        return self.device.drained


@element_class("ToTestDevice", "ToDPDKDevice")
class ToTestDevice(Element):
    """Sink: batches packets and transmits them from an immediate timer event."""

    ninputs = 1
    noutputs = 0

    def configure(self, args):
        from ..runtime import TimerEvent, TimerKind
        pos, kw = split_keywords(args, {"RECORD", "BURST"})
        if len(pos) != 1:
            self.fail("expects exactly one device name")
        self.device = self.instance.device(unquote(pos[0]))
        try:
            if "RECORD" in kw:
                self.device.record = parse_bool(kw["RECORD"][-1])
            self.burst = int(kw.get("BURST", [self.instance.burst])[-1])
        except ValueError as exc:
            self.fail(str(exc))
        if self.burst < 1:
            self.fail("BURST must be positive")
        self._q: list = []
        self._timer = TimerEvent(TimerKind.IMMEDIATE, element=self)
        self.read_handlers.update(count=lambda: str(self.device.tx_count))

    def push(self, port, pkt):
        q = self._q
        q.append(pkt)
        if len(q) >= self.burst:
            self.flush()
        elif not self._timer.scheduled:
            self.instance.schedule_timer(self._timer)

    def run_timer(self, ev):
        self.flush()

    def flush(self):
        q = self._q
        if not q:
            return
        self._q = []
        inst = self.instance
        dev = self.device
        if inst.latency_mode:
            clock = inst.clock
            t = clock.now()
            cost = clock.cost_ns
            for pkt in q:
                dev.latency.append((t - pkt.ts, cost - pkt.vmark))
        for pkt in q:
            dev.transmit(pkt)
            pkt.pool.free(pkt)
        inst.tx += len(q)

    def cleanup(self):
        self.flush()
