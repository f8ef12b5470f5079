"""Classic libpcap files (microsecond timestamps, Ethernet link type)."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

_GLOBAL = struct.Struct("<IHHiIII")
_RECORD = struct.Struct("<IIII")


class PcapError(ValueError):
    pass


def write_pcap(path: str | Path, frames: Iterable[bytes], ts_ns: Iterable[int] | None = None) -> int:
    """Write ``frames`` to ``path``; returns the record count."""
    times = iter(ts_ns) if ts_ns is not None else None
    n = 0
    with open(path, "wb") as f:
        f.write(_GLOBAL.pack(PCAP_MAGIC, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))
        for frame in frames:
            t = next(times) if times is not None else 0
            sec, usec = divmod(t // 1000, 1_000_000)
            f.write(_RECORD.pack(sec, usec, len(frame), len(frame)))
            f.write(frame)
            n += 1
    return n


def iter_pcap(path: str | Path) -> Iterator[tuple[int, bytes]]:
    """Yield ``(timestamp_ns, frame)`` for every record, in file order."""
    with open(path, "rb") as f:
        hdr = f.read(_GLOBAL.size)
        if len(hdr) < _GLOBAL.size:
            raise PcapError(f"{path}: truncated global header")
        magic = struct.unpack("<I", hdr[:4])[0]
        if magic in (PCAP_MAGIC, PCAP_MAGIC_NS):
            endian = "<"
        elif struct.unpack(">I", hdr[:4])[0] in (PCAP_MAGIC, PCAP_MAGIC_NS):
            endian = ">"
            magic = struct.unpack(">I", hdr[:4])[0]
        else:
            raise PcapError(f"{path}: not a classic pcap file (magic {hdr[:4].hex()})")
        _, major, minor, _, _, _, linktype = struct.unpack(endian + "IHHiIII", hdr)
        if linktype != LINKTYPE_ETHERNET:
            raise PcapError(f"{path}: link type {linktype} is not Ethernet")
        frac = 1 if magic == PCAP_MAGIC_NS else 1000
        rec = struct.Struct(endian + "IIII")
        while True:
            r = f.read(rec.size)
            if not r:
                return
            if len(r) < rec.size:
                raise PcapError(f"{path}: truncated record header")
            sec, sub, incl, _orig = rec.unpack(r)
            data = f.read(incl)
            if len(data) < incl:
                raise PcapError(f"{path}: truncated record body")
            yield sec * 1_000_000_000 + sub * frac, data


def read_pcap(path: str | Path) -> list[bytes]:
    return [frame for _, frame in iter_pcap(path)]
