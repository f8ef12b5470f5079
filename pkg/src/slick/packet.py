"""Packet buffers, pools and the trusted/untrusted memory-region model.

Two kinds of arena share one simulated virtual address space: untrusted
pools (stand-ins for huge-page mempools) and enclaves, whose trusted pools
are carved out of a single ``[base, base + size)`` range.  Every buffer has
a real address value, so range checks against the enclave are genuine
interval arithmetic rather than flag lookups.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import threading
from collections import deque
from dataclasses import dataclass

U64_MAX = (1 << 64) - 1

HEADROOM = 128
DEFAULT_MAX_FRAME = 1518
DEFAULT_BUF_SIZE = 2048
MIN_BUF_SIZE = 64
CACHE_LINE = 64

# usable EPC on the reference platform; enclaves larger than this would page
EPC_USABLE_BYTES = 94 * 1024 * 1024
DEFAULT_ENCLAVE_SIZE = 64 * 1024 * 1024


class RegionTag(enum.Enum):
    UNTRUSTED = "untrusted"
    TRUSTED = "trusted"


class PacketError(Exception):
    pass


class AllocationFailure(PacketError):
    pass


class PoolExhausted(PacketError):
    pass


class OversizeRequest(PacketError):
    pass


class RegionViolation(PacketError):
    pass


class DoubleFree(PacketError):
    pass


@dataclass(frozen=True)
class EnclaveBounds:
    base: int
    size: int

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("enclave size must be positive")
        if self.base < 0 or self.base + self.size > U64_MAX + 1:
            raise ValueError("enclave range overflows u64")

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.size


def validate_address(addr: int, length: int, bounds: EnclaveBounds) -> bool:
    """Return True when ``[addr, addr + length)`` stays clear of the enclave.

    Overflowing ranges are rejected.  A zero-length range is empty and
    therefore never intersects anything.
    """
    if addr < 0 or length < 0:
        return False
    end = addr + length
    if end > U64_MAX + 1:
        return False
    if length == 0:
        return True
    return end <= bounds.base or addr >= bounds.base + bounds.size


def _align(n: int, to: int = CACHE_LINE) -> int:
    return (n + to - 1) & ~(to - 1)


class AddressSpace:
    """Hands out disjoint address ranges and maps addresses back to owners."""

    def __init__(self, base: int = 0x7F00_0000_0000, guard: int = 0x10_0000):
        self._next = base
        self._guard = guard
        self._starts: list[int] = []
        self._entries: list[tuple[int, int, object]] = []
        self._lock = threading.Lock()

    def reserve(self, size: int, owner: object) -> int:
        if size <= 0:
            raise AllocationFailure("cannot reserve an empty range")
        with self._lock:
            base = _align(self._next, 0x1000)
            if base + size > U64_MAX:
                raise AllocationFailure("address space exhausted")
            self._next = base + size + self._guard
            i = bisect.bisect_right(self._starts, base)
            self._starts.insert(i, base)
            self._entries.insert(i, (base, base + size, owner))
        return base

    def release(self, base: int) -> None:
        with self._lock:
            i = bisect.bisect_left(self._starts, base)
            if i < len(self._starts) and self._starts[i] == base:
                del self._starts[i]
                del self._entries[i]

    def resolve(self, addr: int):
        """Owner of the range containing ``addr``, or None."""
        i = bisect.bisect_right(self._starts, addr) - 1
        if i < 0:
            return None
        start, end, owner = self._entries[i]
        return owner if addr < end else None


DEFAULT_SPACE = AddressSpace()

_pool_ids = itertools.count(1)


class Enclave:
    """Simulated EPC: one contiguous trusted range that trusted pools carve from."""

    def __init__(self, size: int = DEFAULT_ENCLAVE_SIZE, space: AddressSpace | None = None):
        if size <= 0 or size > EPC_USABLE_BYTES:
            raise AllocationFailure(
                f"enclave of {size} bytes does not fit the {EPC_USABLE_BYTES} byte EPC budget")
        self.space = space or DEFAULT_SPACE
        base = self.space.reserve(size, self)
        self.bounds = EnclaveBounds(base, size)
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    def carve(self, size: int) -> int:
        with self._lock:
            start = _align(self._used)
            if start + size > self.bounds.size:
                raise AllocationFailure(
                    f"trusted arena of {size} bytes exceeds enclave budget "
                    f"({self.bounds.size - start} bytes left)")
            self._used = start + size
        return self.bounds.base + start

    def scratch(self, size: int) -> bytearray:
        """Trusted staging memory; charged against the enclave budget."""
        self.carve(size)
        return bytearray(size)


class PacketHandle:
    """Reference to one packet buffer (an mbuf, in DPDK terms).

    ``buf`` is the whole buffer including headroom; the frame occupies
    ``buf[off:off + len]``.  A handle is invalidated (``idx == -1``) when
    its buffer goes back to the pool.
    """

    __slots__ = ("addr", "len", "region", "pool_id", "pool", "idx", "buf", "off", "ts", "vmark",
                 "posted")

    def __init__(self, pool: PacketPool, idx: int, length: int):
        self.pool = pool
        self.idx = idx
        self.addr = pool.base + idx * pool.stride
        self.len = length
        self.region = pool.region
        self.pool_id = pool.pool_id
        self.buf = pool.bufs[idx]
        self.off = HEADROOM
        self.ts = 0
        self.vmark = 0
        self.posted = False

    @property
    def live(self) -> bool:
        return self.idx >= 0

    @property
    def data(self) -> memoryview:
        return memoryview(self.buf)[self.off:self.off + self.len]

    def bytes(self) -> bytes:
        return bytes(self.buf[self.off:self.off + self.len])

    def set_bytes(self, frame: bytes) -> None:
        n = len(frame)
        if n > len(self.buf) - HEADROOM:
            raise OversizeRequest(f"{n} byte frame exceeds buffer")
        self.off = HEADROOM
        self.buf[HEADROOM:HEADROOM + n] = frame
        self.len = n

    def free(self) -> None:
        self.pool.free(self)

    def __repr__(self):
        return (f"PacketHandle(addr={self.addr:#x}, len={self.len}, "
                f"region={self.region.value}, pool={self.pool_id})")


class PacketPool:
    """Fixed set of equally sized buffers in one contiguous address range.

    ``alloc`` and ``free`` are safe to call from different threads (handles
    cross instances through rings), but a given handle has one owner at a
    time.
    """

    def __init__(self, region: RegionTag, capacity: int, buf_size: int = DEFAULT_BUF_SIZE, *,
                 enclave: Enclave | None = None, space: AddressSpace | None = None,
                 max_frame: int | None = None):
        if capacity < 1:
            raise AllocationFailure("pool capacity must be at least 1")
        if buf_size < MIN_BUF_SIZE:
            raise AllocationFailure(f"buffer size must be at least {MIN_BUF_SIZE}")
        self.region = region
        self.capacity = capacity
        self.buf_size = buf_size
        self.max_frame = min(buf_size, max_frame or max(buf_size, DEFAULT_MAX_FRAME))
        self.stride = _align(HEADROOM + buf_size)
        self.pool_id = next(_pool_ids) & 0xFFFF
        arena = self.stride * capacity
        if region is RegionTag.TRUSTED:
            if enclave is None:
                raise AllocationFailure("trusted pools must be carved from an enclave")
            self.enclave = enclave
            self.space = enclave.space
            self.base = enclave.carve(arena)
        else:
            self.enclave = None
            self.space = space or DEFAULT_SPACE
            self.base = self.space.reserve(arena, self)
        self.end = self.base + arena
        try:
            self.bufs = [bytearray(self.stride) for _ in range(capacity)]
        except MemoryError as exc:
            raise AllocationFailure(str(exc)) from exc
        self._free = deque(range(capacity - 1, -1, -1))
        self._live: list[PacketHandle | None] = [None] * capacity
        self.allocs = 0
        self.frees = 0
        self.alloc_failures = 0

    @property
    def free_count(self) -> int:
        return len(self._free)

    def alloc(self, length: int) -> PacketHandle:
        if length > self.buf_size or length < 0:
            raise OversizeRequest(f"{length} bytes requested from {self.buf_size} byte buffers")
        try:
            idx = self._free.pop()
        except IndexError:
            self.alloc_failures += 1
            raise PoolExhausted(f"pool {self.pool_id} exhausted") from None
        h = PacketHandle(self, idx, length)
        self._live[idx] = h
        self.allocs += 1
        return h

    def free(self, h: PacketHandle) -> None:
        idx = h.idx
        if idx < 0 or h.pool is not self or self._live[idx] is not h:
            raise DoubleFree(f"{h!r} is not live in pool {self.pool_id}")
        self._live[idx] = None
        h.idx = -1
        self.frees += 1
        self._free.append(idx)

    def handle_at(self, addr: int) -> PacketHandle | None:
        """Live handle whose buffer starts exactly at ``addr``."""
        rel = addr - self.base
        if rel < 0 or addr >= self.end:
            return None
        idx = rel // self.stride
        if idx * self.stride != rel:
            return None
        return self._live[idx]

    def in_flight(self) -> int:
        # derived from the free list, which stays exact when frees come from other threads
        return self.capacity - len(self._free)

    def __repr__(self):
        return (f"PacketPool(id={self.pool_id}, region={self.region.value}, "
                f"capacity={self.capacity}, free={self.free_count})")


def pool_create(region: RegionTag, capacity: int, buf_size: int = DEFAULT_BUF_SIZE, **kw) -> PacketPool:
    return PacketPool(region, capacity, buf_size, **kw)


def alloc_packet(pool: PacketPool, length: int) -> PacketHandle:
    return pool.alloc(length)


def copy_to_trusted(src: PacketHandle, trusted_pool: PacketPool) -> PacketHandle:
    """Copy ``src`` into ``trusted_pool`` and free the original.

    On exhaustion the source is still freed and PoolExhausted propagates so
    the caller can account the drop.
    """
    if not src.live:
        raise RegionViolation("source handle is not live")
    if src.region is not RegionTag.UNTRUSTED:
        raise RegionViolation("source packet is already trusted")
    if trusted_pool.region is not RegionTag.TRUSTED:
        raise RegionViolation("destination pool is not trusted")
    n = src.len
    try:
        dst = trusted_pool.alloc(n)
    except (PoolExhausted, OversizeRequest):
        src.pool.free(src)
        raise
    dst.buf[HEADROOM:HEADROOM + n] = src.buf[src.off:src.off + n]
    dst.ts = src.ts
    dst.vmark = src.vmark
    src.pool.free(src)
    return dst


def pack_word(addr: int, length: int) -> int:
    """Ring slot word: buffer address in the high bits, frame length in the low 32."""
    return (addr << 32) | (length & 0xFFFFFFFF)


def unpack_word(word: int) -> tuple[int, int]:
    return word >> 32, word & 0xFFFFFFFF


def resolve_word(word: int, bounds: EnclaveBounds, space: AddressSpace) -> PacketHandle | None:
    """Turn an untrusted slot word into a handle, or None if it is hostile.

    The whole span the consumer would touch (headroom plus frame) must lie
    outside the enclave, and the address must be the start of a live buffer
    in an untrusted pool that its owner actually posted (so a replayed or
    duplicated word cannot alias a buffer that is already in flight).
    """
    addr, length = unpack_word(word)
    if not validate_address(addr, HEADROOM + length, bounds):
        return None
    pool = space.resolve(addr)
    if not isinstance(pool, PacketPool) or pool.region is not RegionTag.UNTRUSTED:
        return None
    if length > pool.buf_size:
        return None
    h = pool.handle_at(addr)
    if h is None or not h.posted:
        return None
    h.posted = False
    h.len = length
    return h
