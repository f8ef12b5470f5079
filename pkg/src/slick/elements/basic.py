"""Standard packet operators: Wire, EtherMirror, Counter, Discard, Classifier, ARPResponder."""

from __future__ import annotations

import struct

from ..netutil import ARP_REPLY, ARP_REQUEST, ETH_HLEN, ETHERTYPE_ARP, ip_int, mac_bytes
from .base import Element, element_class


@element_class("Wire")
class Wire(Element):
    def push(self, port, pkt):
        self.emit(0, pkt)


@element_class("EtherMirror")
class EtherMirror(Element):
    def push(self, port, pkt):
        if pkt.len < ETH_HLEN:
            self.drop(pkt, "runt")
            return
        b, o = pkt.buf, pkt.off
        b[o:o + 12] = b[o + 6:o + 12] + b[o:o + 6]
        self.emit(0, pkt)


@element_class("Counter")
class Counter(Element):
    has_state = True
    _STATE = struct.Struct("<QQ")

    def configure(self, args):
        super().configure(args)
        self.count = 0
        self.byte_count = 0
        self.read_handlers.update(count=lambda: str(self.count),
                                  byte_count=lambda: str(self.byte_count))
        self.write_handlers["reset"] = lambda _v="": self.reset()

    def reset(self):
        self.count = 0
        self.byte_count = 0

    def push(self, port, pkt):
        self.count += 1
        self.byte_count += pkt.len
        self.emit(0, pkt)

    def state_write(self) -> bytes:
        return self._STATE.pack(self.count, self.byte_count)

    def state_read(self, data: bytes) -> None:
        if len(data) != self._STATE.size:
            raise ValueError(f"Counter state must be {self._STATE.size} bytes, got {len(data)}")
        self.count, self.byte_count = self._STATE.unpack(data)


@element_class("Discard")
class Discard(Element):
    noutputs = 0

    def push(self, port, pkt):
        self.drop(pkt, "discarded")


def _parse_classifier_pattern(text: str):
    """``off/hex[%mask] ...`` -> list of (offset, value, mask|None); ``-`` -> []."""
    text = text.strip()
    if text == "-":
        return []
    terms = []
    for term in text.split():
        off_s, sep, rest = term.partition("/")
        if not sep:
            raise ValueError(f"classifier term {term!r} lacks '/'")
        val_s, _, mask_s = rest.partition("%")
        off = int(off_s)
        if off < 0 or len(val_s) % 2 or not val_s:
            raise ValueError(f"bad classifier term {term!r}")
        value = bytes.fromhex(val_s)
        mask = None
        if mask_s:
            mask = bytes.fromhex(mask_s)
            if len(mask) != len(value):
                raise ValueError(f"mask length differs from value in {term!r}")
            value = bytes(v & m for v, m in zip(value, mask))
        terms.append((off, value, mask))
    return terms


@element_class("Classifier")
class Classifier(Element):
    """First matching ``offset/value`` pattern selects the output port."""

    @classmethod
    def port_counts(cls, args):
        return 1, len(args)

    def configure(self, args):
        if not args:
            self.fail("needs at least one pattern")
        try:
            self.patterns = [_parse_classifier_pattern(a) for a in args]
        except ValueError as exc:
            self.fail(str(exc))

    def push(self, port, pkt):
        b, o, n = pkt.buf, pkt.off, pkt.len
        for i, terms in enumerate(self.patterns):
            for off, value, mask in terms:
                end = off + len(value)
                if end > n:
                    break
                got = b[o + off:o + end]
                if mask is not None:
                    got = bytes(x & m for x, m in zip(got, mask))
                if got != value:
                    break
            else:
                self.emit(i, pkt)
                return
        self.drop(pkt, "no_match")


_ARP = struct.Struct("!HHBBH6sI6sI")


@element_class("ARPResponder")
class ARPResponder(Element):
    """Answers who-has requests for configured ``IP [IP...] MAC`` entries."""

    def configure(self, args):
        self.table: dict[int, bytes] = {}
        if not args:
            self.fail("needs at least one 'IP MAC' entry")
        for a in args:
            parts = a.split()
            if len(parts) < 2:
                self.fail(f"entry {a!r} must be 'IP [IP...] MAC'")
            try:
                mac = mac_bytes(parts[-1])
                for ip in parts[:-1]:
                    self.table[ip_int(ip)] = mac
            except ValueError as exc:
                self.fail(str(exc))

    def push(self, port, pkt):
        b, o = pkt.buf, pkt.off
        if pkt.len < ETH_HLEN + _ARP.size or ((b[o + 12] << 8) | b[o + 13]) != ETHERTYPE_ARP:
            self.drop(pkt, "not_arp")
            return
        htype, ptype, hlen, plen, op, sha, spa, tha, tpa = _ARP.unpack_from(b, o + ETH_HLEN)
        if op != ARP_REQUEST or hlen != 6 or plen != 4:
            self.drop(pkt, "not_request")
            return
        mac = self.table.get(tpa)
        if mac is None:
            self.drop(pkt, "unknown_ip")
            return
        b[o:o + 6] = sha
        b[o + 6:o + 12] = mac
        _ARP.pack_into(b, o + ETH_HLEN, htype, ptype, hlen, plen, ARP_REPLY, mac, tpa, sha, spa)
        self.counters["replies"] += 1
        self.emit(0, pkt)
