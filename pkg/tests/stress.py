"""Two-thread SPSC ring stress shared by the chain and acceptance tests."""

from __future__ import annotations

import threading
import time

from slick.chain import Ring, RingStatus
from slick.packet import AddressSpace, Enclave, PacketPool, RegionTag


def spsc_stress(n: int, ring_size: int = 1024, pool_size: int = 4096,
                timeout: float = 300.0) -> dict:
    """Push ``n`` sequence-tagged buffers through one ring from a producer thread
    to a consumer thread; return what the consumer observed."""
    space = AddressSpace()
    enclave = Enclave(1 << 20, space)
    pool = PacketPool(RegionTag.UNTRUSTED, pool_size, 64, space=space)
    ring = Ring("stress", ring_size)
    result = {"received": 0, "out_of_order": 0, "duplicates": 0, "rejected": 0,
              "producer_full": 0}
    done = threading.Event()

    def producer():
        seq = 0
        while seq < n:
            try:
                h = pool.alloc(8)
            except Exception:
                time.sleep(0)
                continue
            h.buf[h.off:h.off + 8] = seq.to_bytes(8, "little")
            while ring.enqueue(h) is RingStatus.FULL:
                result["producer_full"] += 1
                time.sleep(0)
            seq += 1
        done.set()

    def consumer():
        expect = 0
        seen_max = -1
        bounds = enclave.bounds
        while expect < n:
            r = ring.dequeue(bounds, space)
            if r is RingStatus.EMPTY:
                if done.is_set() and len(ring) == 0:
                    break
                time.sleep(0)
                continue
            if r is RingStatus.REJECTED:
                result["rejected"] += 1
                continue
            seq = int.from_bytes(r.buf[r.off:r.off + 8], "little")
            if seq <= seen_max:
                result["duplicates"] += 1
            elif seq != expect:
                result["out_of_order"] += 1
            seen_max = max(seen_max, seq)
            expect = seq + 1
            result["received"] += 1
            pool.free(r)

    threads = [threading.Thread(target=producer), threading.Thread(target=consumer)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    result["seconds"] = time.perf_counter() - t0
    result["in_flight"] = pool.in_flight()
    result["sent"] = n
    return result
