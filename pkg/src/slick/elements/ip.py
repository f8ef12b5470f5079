"""IPv4 elements: the rule-list Firewall and the longest-prefix-match RouteTable."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

from ..netutil import (ETH_HLEN, ETHERTYPE_IPV4, PROTO_ICMP, PROTO_TCP, PROTO_UDP, ip_int,
                       ipv4_view, parse_cidr, prefix_mask)
from .base import Element, element_class, split_keywords, unquote


class Action(enum.Enum):
    ALLOW = "allow"
    DROP = "drop"


_PROTOS = {"any": None, "*": None, "tcp": PROTO_TCP, "udp": PROTO_UDP, "icmp": PROTO_ICMP}


@dataclass(frozen=True)
class FirewallRule:
    action: Action
    proto: int | None
    src: tuple[int, int]
    dst: tuple[int, int]
    sport: tuple[int, int] | None
    dport: tuple[int, int] | None

    @classmethod
    def parse(cls, line: str) -> FirewallRule:
        """``allow|drop proto src_cidr dst_cidr sport dport`` with ``*`` wildcards."""
        f = line.split()
        if len(f) != 6:
            raise ValueError(f"rule needs 6 fields, got {len(f)}: {line!r}")
        try:
            action = Action(f[0].lower())
        except ValueError:
            raise ValueError(f"unknown action {f[0]!r}") from None
        if f[1].lower() not in _PROTOS:
            raise ValueError(f"unknown protocol {f[1]!r}")
        return cls(action, _PROTOS[f[1].lower()], _cidr(f[2]), _cidr(f[3]), _ports(f[4]), _ports(f[5]))

    def compile(self):
        return (self.action is Action.ALLOW, -1 if self.proto is None else self.proto,
                self.src[0], prefix_mask(self.src[1]), self.dst[0], prefix_mask(self.dst[1]),
                self.sport, self.dport)


def _cidr(text: str) -> tuple[int, int]:
    if text in ("*", "any"):
        return 0, 0
    return parse_cidr(text)


def _ports(text: str) -> tuple[int, int] | None:
    if text in ("*", "any"):
        return None
    lo, sep, hi = text.partition("-")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if sep else lo_i
    except ValueError:
        raise ValueError(f"bad port spec {text!r}") from None
    if not 0 <= lo_i <= hi_i <= 0xFFFF:
        raise ValueError(f"bad port range {text!r}")
    return lo_i, hi_i


def parse_rules(text: str) -> list[FirewallRule]:
    rules = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rules.append(FirewallRule.parse(line))
    return rules


@element_class("Firewall")
class Firewall(Element):
    """First-match filter.  Port 0: allowed IPv4; port 1: non-IP traffic.

    Arguments: ``Firewall(RULEFILE [, DEFAULT allow|drop] [, RULE "..."]...)``.
    """

    noutputs = 2
    optional = frozenset({1})

    def configure(self, args):
        pos, kw = split_keywords(args, {"DEFAULT", "RULE", "FILE"})
        files = pos + kw.get("FILE", [])
        inline = [unquote(r) for r in kw.get("RULE", [])]
        if not files and not inline:
            self.fail("missing rule file argument")
        rules = []
        try:
            for f in files:
                path = Path(unquote(f))
                if not path.is_absolute():
                    path = self.instance.base_dir / path
                rules += parse_rules(path.read_text(encoding="utf-8"))
            rules += [FirewallRule.parse(r) for r in inline]
            default = Action(unquote(kw.get("DEFAULT", ["allow"])[-1]).lower())
        except (OSError, ValueError) as exc:
            self.fail(str(exc))
        self.rules = rules
        self.default_allow = default is Action.ALLOW
        self._compiled = [r.compile() for r in rules]

    def decide(self, proto: int, src: int, dst: int, sport: int | None, dport: int | None) -> bool:
        for allow, rp, snet, smask, dnet, dmask, sp, dp in self._compiled:
            if rp != -1 and rp != proto:
                continue
            if src & smask != snet or dst & dmask != dnet:
                continue
            if sp is not None and (sport is None or not sp[0] <= sport <= sp[1]):
                continue
            if dp is not None and (dport is None or not dp[0] <= dport <= dp[1]):
                continue
            return allow
        return self.default_allow

    def push(self, port, pkt):
        b, o, n = pkt.buf, pkt.off, pkt.len
        if n < ETH_HLEN or ((b[o + 12] << 8) | b[o + 13]) != ETHERTYPE_IPV4:
            self.emit(1, pkt)
            return
        v = ipv4_view(b, o, n)
        if v is None:
            self.drop(pkt, "malformed")
            return
        ihl, proto, src, dst = v
        sport = dport = None
        if proto == PROTO_TCP or proto == PROTO_UDP:
            l4 = o + ETH_HLEN + ihl
            total = (b[o + 16] << 8) | b[o + 17]
            if total - ihl < 4:
                self.drop(pkt, "malformed")
                return
            sport = (b[l4] << 8) | b[l4 + 1]
            dport = (b[l4 + 2] << 8) | b[l4 + 3]
        if self.decide(proto, src, dst, sport, dport):
            self.emit(0, pkt)
        else:
            self.drop(pkt, "denied")


@dataclass(frozen=True)
class RouteEntry:
    prefix: int
    length: int
    out_port: int
    gateway: int | None = None

    @classmethod
    def parse(cls, text: str) -> RouteEntry:
        """``a.b.c.d/n [gateway] port``"""
        f = text.split()
        if len(f) not in (2, 3):
            raise ValueError(f"route {text!r} must be 'PREFIX [GATEWAY] PORT'")
        net, plen = parse_cidr(f[0])
        gw = ip_int(f[1]) if len(f) == 3 else None
        try:
            port = int(f[-1])
        except ValueError:
            raise ValueError(f"bad output port in route {text!r}") from None
        if not 0 <= port <= 0xFFFF:
            raise ValueError(f"output port out of range in route {text!r}")
        return cls(net, plen, port, gw)


class PrefixTable:
    """Longest-prefix match via one exact-match dict per prefix length."""

    def __init__(self, entries=()):
        self._by_len: dict[int, dict[int, RouteEntry]] = {}
        self._lengths: list[tuple[int, int, dict[int, RouteEntry]]] = []
        for e in entries:
            self.add(e)

    def add(self, e: RouteEntry) -> None:
        table = self._by_len.setdefault(e.length, {})
        if e.prefix in table:
            raise ValueError(f"duplicate route for prefix length {e.length}")
        table[e.prefix] = e
        self._lengths = sorted(((n, prefix_mask(n), t) for n, t in self._by_len.items()),
                               key=lambda x: -x[0])

    def lookup(self, addr: int) -> RouteEntry | None:
        for _, mask, table in self._lengths:
            e = table.get(addr & mask)
            if e is not None:
                return e
        return None

    def __len__(self):
        return sum(len(t) for t in self._by_len.values())


def _ttl_decrement(b, p: int) -> None:
    """Decrement the TTL at IP header offset ``p`` and patch the checksum incrementally."""
    ttl, proto = b[p + 8], b[p + 9]
    old = (ttl << 8) | proto
    new = ((ttl - 1) << 8) | proto
    hc = (b[p + 10] << 8) | b[p + 11]
    s = (~hc & 0xFFFF) + (~old & 0xFFFF) + new
    s = (s & 0xFFFF) + (s >> 16)
    s = (s & 0xFFFF) + (s >> 16)
    hc = ~s & 0xFFFF
    b[p + 8] = ttl - 1
    b[p + 10] = hc >> 8
    b[p + 11] = hc & 0xFF


@element_class("RouteTable")
class RouteTable(Element):
    """Longest-prefix match on the destination; the route's port is the output."""

    @classmethod
    def port_counts(cls, args):
        ports = []
        for a in args:
            try:
                ports.append(RouteEntry.parse(a).out_port)
            except ValueError:
                pass
        return 1, (max(ports) + 1 if ports else 1)

    @classmethod
    def optional_outputs(cls, args):
        return frozenset(range(cls.port_counts(args)[1]))

    def configure(self, args):
        try:
            self.table = PrefixTable(RouteEntry.parse(a) for a in args)
        except ValueError as exc:
            self.fail(str(exc))

    def push(self, port, pkt):
        b, o, n = pkt.buf, pkt.off, pkt.len
        if n < ETH_HLEN or ((b[o + 12] << 8) | b[o + 13]) != ETHERTYPE_IPV4:
            self.drop(pkt, "not_ip")
            return
        v = ipv4_view(b, o, n)
        if v is None:
            self.drop(pkt, "malformed")
            return
        e = self.table.lookup(v[3])
        if e is None:
            self.drop(pkt, "no_route")
            return
        p = o + ETH_HLEN
        if b[p + 8] <= 1:
            self.drop(pkt, "ttl_expired")
            return
        _ttl_decrement(b, p)
        self.emit(e.out_port, pkt)
