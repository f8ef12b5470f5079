"""Single-producer/single-consumer rings in shared untrusted memory.

A ring slot holds a packet word (``addr << 32 | len``), never an object
reference, so the consumer has to turn the word back into a buffer.  That
step is where hostile words are caught: ``dequeue`` refuses any word whose
span touches the enclave or that does not name a posted untrusted buffer.

Index arithmetic follows the usual lockless-ring recipe: ``head`` and
``tail`` are free-running u32 counters, occupancy is ``(tail - head) & 0xFFFFFFFF``
and the slot index is ``counter & mask``.
"""

from __future__ import annotations

import enum
import logging
import threading

from .elements.base import Element, element_class, split_keywords, unquote
from .packet import (AddressSpace, EnclaveBounds, PacketHandle, RegionTag, DEFAULT_SPACE,
                     pack_word, resolve_word, unpack_word)

log = logging.getLogger(__name__)

U32 = 0xFFFFFFFF
MIN_RING = 8


class ChainError(Exception):
    pass


class NameCollision(ChainError):
    pass


class UnknownRing(ChainError):
    pass


class NotPowerOfTwo(ChainError):
    pass


class RoleViolation(ChainError):
    pass


class RingStatus(enum.Enum):
    OK = "ok"
    FULL = "full"
    EMPTY = "empty"
    REJECTED = "rejected_attack"


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


class Ring:
    """Bounded SPSC FIFO of packet words.

    ``enqueue`` may be called from one producer thread and ``dequeue`` from
    one consumer thread concurrently.  The producer only writes ``tail``
    (after filling the slot) and the consumer only writes ``head`` (after
    reading it), which is the publication order the protocol needs.
    """

    def __init__(self, name: str, capacity: int):
        if capacity < MIN_RING or not is_pow2(capacity):
            raise NotPowerOfTwo(f"ring capacity must be a power of two >= {MIN_RING}, got {capacity}")
        self.name = name
        self.capacity = capacity
        self.mask = capacity - 1
        self.slots = [0] * capacity
        self.head = 0
        self.tail = 0
        self.enqueued = 0
        self.dequeued = 0
        self.full = 0
        self.attacks = 0

    def __len__(self) -> int:
        return (self.tail - self.head) & U32

    def free_space(self) -> int:
        return self.capacity - ((self.tail - self.head) & U32)

    # raw word interface

    def enqueue_word(self, word: int) -> bool:
        tail = self.tail
        if ((tail - self.head) & U32) >= self.capacity:
            self.full += 1
            return False
        self.slots[tail & self.mask] = word
        self.tail = (tail + 1) & U32
        self.enqueued += 1
        return True

    def dequeue_word(self) -> int | None:
        head = self.head
        if head == self.tail:
            return None
        word = self.slots[head & self.mask]
        self.head = (head + 1) & U32
        self.dequeued += 1
        return word

    def dequeue_burst_words(self, out: list[int], n: int) -> int:
        """Move up to ``n`` words into the preallocated ``out``; returns the count."""
        head = self.head
        avail = (self.tail - head) & U32
        if n > avail:
            n = avail
        mask, slots = self.mask, self.slots
        for i in range(n):
            out[i] = slots[(head + i) & mask]
        self.head = (head + n) & U32
        self.dequeued += n
        return n

    def inject_word(self, word: int) -> bool:
        """Test hook: place an arbitrary (possibly forged) word in the ring."""
        return self.enqueue_word(word)

    # handle interface

    def enqueue(self, h: PacketHandle) -> RingStatus:
        if h.region is not RegionTag.UNTRUSTED:
            raise ValueError("only untrusted buffers may be placed in a shared ring")
        h.posted = True
        if self.enqueue_word(pack_word(h.addr, h.len)):
            return RingStatus.OK
        h.posted = False
        return RingStatus.FULL

    def enqueue_burst(self, handles: list[PacketHandle]) -> int:
        n = 0
        for h in handles:
            if self.enqueue(h) is not RingStatus.OK:
                break
            n += 1
        return n

    def reject(self, word: int, where: str = "") -> None:
        self.attacks += 1
        addr, length = unpack_word(word)
        log.warning("ring %s%s: rejected slot word addr=%#x len=%d (points into enclave "
                    "or at no posted buffer); dropped", self.name, where, addr, length)

    def dequeue(self, bounds: EnclaveBounds,
                space: AddressSpace | None = None) -> PacketHandle | RingStatus:
        word = self.dequeue_word()
        if word is None:
            return RingStatus.EMPTY
        h = resolve_word(word, bounds, space or DEFAULT_SPACE)
        if h is None:
            self.reject(word)
            return RingStatus.REJECTED
        return h

    def dequeue_burst(self, bounds: EnclaveBounds, n: int,
                      space: AddressSpace | None = None) -> list[PacketHandle]:
        out = []
        for _ in range(n):
            r = self.dequeue(bounds, space)
            if r is RingStatus.EMPTY:
                break
            if r is not RingStatus.REJECTED:
                out.append(r)
        return out

    def __repr__(self):
        return f"Ring({self.name!r}, capacity={self.capacity}, count={len(self)})"


class RingRegistry:
    """Named rings shared by every instance in the process."""

    def __init__(self):
        self._rings: dict[str, Ring] = {}
        self._lock = threading.Lock()

    def create(self, name: str, capacity: int, role=None) -> Ring:
        from .runtime import Role
        if role is not None and role is not Role.PRIMARY:
            raise RoleViolation(f"only a primary instance may create ring {name!r}")
        with self._lock:
            if name in self._rings:
                raise NameCollision(f"ring {name!r} already exists")
            ring = self._rings[name] = Ring(name, capacity)
        return ring

    def lookup(self, name: str) -> Ring:
        with self._lock:
            try:
                return self._rings[name]
            except KeyError:
                raise UnknownRing(f"no ring named {name!r}") from None

    def remove(self, name: str) -> None:
        with self._lock:
            self._rings.pop(name, None)

    def clear(self) -> None:
        with self._lock:
            self._rings.clear()

    def __contains__(self, name: str) -> bool:
        return name in self._rings


SHARED_RINGS = RingRegistry()

DEFAULT_RING_SIZE = 1024


def ring_create(name: str, capacity: int, registry: RingRegistry | None = None) -> Ring:
    return (registry or SHARED_RINGS).create(name, capacity)


def ring_lookup(name: str, registry: RingRegistry | None = None) -> Ring:
    return (registry or SHARED_RINGS).lookup(name)


@element_class("DPDKRing")
class DPDKRing(Element):
    """``DPDKRing(NAME [, MODE create|lookup] [, SIZE n])``.

    Input 0 enqueues (a full ring drops); output 0, when connected, makes
    the element a task that dequeues into the graph with address checks.
    The mode defaults to ``create`` on a primary and ``lookup`` otherwise.
    """

    ninputs = 1
    noutputs = 1
    task = "if_output"

    @classmethod
    def port_counts(cls, args):
        return 1, 1

    @classmethod
    def optional_outputs(cls, args):
        return frozenset({0})

    def configure(self, args):
        pos, kw = split_keywords(args, {"MODE", "SIZE"})
        if not pos:
            self.fail("missing ring name")
        if len(pos) > 2:
            self.fail("too many arguments")
        self.ring_name = unquote(pos[0])
        mode = unquote(pos[1]) if len(pos) > 1 else (kw.get("MODE") or [None])[-1]
        if mode is None:
            from .runtime import Role
            mode = "create" if self.instance.role is Role.PRIMARY else "lookup"
        mode = mode.lower()
        if mode not in ("create", "lookup"):
            self.fail(f"MODE must be create or lookup, not {mode!r}")
        self.mode = mode
        try:
            self.size = int(kw.get("SIZE", [DEFAULT_RING_SIZE])[-1])
        except ValueError:
            self.fail("SIZE must be an integer")
        self.ring: Ring | None = None
        self._words = [0] * self.instance.burst
        self.read_handlers.update(count=lambda: str(len(self.ring)),
                                  attacks=lambda: str(self.ring.attacks))

    def initialize(self):
        reg = self.instance.rings
        if self.mode == "create":
            self.ring = reg.create(self.ring_name, self.size, self.instance.role)
        else:
            self.ring = reg.lookup(self.ring_name)

    def push(self, port, pkt):
        if pkt.region is not RegionTag.UNTRUSTED:
            self.drop(pkt, "trusted_region")
            return
        if self.ring.enqueue(pkt) is RingStatus.OK:
            self.instance.tx += 1
        else:
            self.drop(pkt, "ring_full")

    def run_task(self, budget):
        ring = self.ring
        words = self._words
        if budget > len(words):
            words = self._words = [0] * budget
        n = ring.dequeue_burst_words(words, budget)
        if not n:
            return 0
        inst = self.instance
        bounds, space = inst.bounds, inst.space
        for i in range(n):
            w = words[i]
            h = resolve_word(w, bounds, space)
            if h is None:
                ring.reject(w, f" (element {self.name})")
                self.counters["attack"] += 1
                continue
            inst.rx += 1
            try:
                self.emit(0, h)
            except Exception as exc:
                inst.fault(self, h, exc)
        return n

    @property
    def exhausted(self):
        return self.ring is None or len(self.ring) == 0
