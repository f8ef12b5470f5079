"""Deterministic synthetic Ethernet/IPv4/UDP load."""

from __future__ import annotations

import random
import time
from typing import Callable, Iterator

from .netutil import ETH_HLEN, udp_frame

MIN_UDP_FRAME = ETH_HLEN + 20 + 8
SRC_MAC = bytes.fromhex("020000000001")
DST_MAC = bytes.fromhex("020000000002")


def synth_frames(size: int, count: int, seed: int = 1, dst_net: int = 0x0A000000,
                 dst_bits: int = 24) -> Iterator[bytes]:
    """``count`` UDP frames of exactly ``size`` bytes; identical for identical seeds."""
    if size < MIN_UDP_FRAME:
        raise ValueError(f"frame size must be at least {MIN_UDP_FRAME} bytes, got {size}")
    rng = random.Random(seed)
    host_mask = (1 << dst_bits) - 1
    for i in range(count):
        src = 0xC0A80000 | rng.getrandbits(16)
        dst = dst_net | (rng.getrandbits(32) & host_mask)
        sport = rng.randrange(1024, 65536)
        dport = rng.randrange(1, 65536)
        yield udp_frame(SRC_MAC, DST_MAC, src, dst, sport, dport, size=size, ident=i & 0xFFFF)


def paced(items, rate: float | None, sleep: Callable[[float], None] = time.sleep,
          clock: Callable[[], float] = time.monotonic):
    """Yield ``items`` no faster than ``rate`` per second (None = unpaced)."""
    if not rate:
        yield from items
        return
    start = clock()
    for i, item in enumerate(items):
        due = start + i / rate
        delay = due - clock()
        if delay > 0:
            sleep(delay)
        yield item
