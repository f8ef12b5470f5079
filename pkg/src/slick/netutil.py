"""Ethernet/IPv4/UDP/ARP header helpers."""

from __future__ import annotations

import socket
import struct

ETH_HLEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17
ARP_REQUEST = 1
ARP_REPLY = 2
MIN_FRAME = 60  # without FCS


def mac_bytes(mac: str | bytes) -> bytes:
    if isinstance(mac, (bytes, bytearray)):
        if len(mac) != 6:
            raise ValueError(f"bad MAC {mac!r}")
        return bytes(mac)
    parts = mac.replace("-", ":").split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC {mac!r}")
    try:
        return bytes(int(p, 16) for p in parts)
    except ValueError:
        raise ValueError(f"bad MAC {mac!r}") from None


def mac_str(b: bytes) -> str:
    return ":".join(f"{x:02x}" for x in b)


def ip_int(ip: str) -> int:
    try:
        return struct.unpack("!I", socket.inet_aton(ip))[0]
    except OSError:
        raise ValueError(f"bad IPv4 address {ip!r}") from None


def ip_str(v: int) -> str:
    return socket.inet_ntoa(struct.pack("!I", v))


def parse_cidr(text: str) -> tuple[int, int]:
    """``a.b.c.d[/n]`` -> (network int, prefix length); host bits are masked off."""
    if "/" in text:
        addr, _, plen = text.partition("/")
        try:
            n = int(plen)
        except ValueError:
            raise ValueError(f"bad prefix length in {text!r}") from None
    else:
        addr, n = text, 32
    if not 0 <= n <= 32:
        raise ValueError(f"prefix length out of range in {text!r}")
    # inet_aton accepts shorthand like "10.1"; insist on dotted quads
    if addr.count(".") != 3:
        raise ValueError(f"bad IPv4 address {addr!r}")
    return ip_int(addr) & prefix_mask(n), n


def prefix_mask(n: int) -> int:
    return (0xFFFFFFFF << (32 - n)) & 0xFFFFFFFF if n else 0


def checksum(data: bytes | bytearray | memoryview) -> int:
    if len(data) & 1:
        data = bytes(data) + b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ipv4_header(src: int, dst: int, proto: int, payload_len: int, ttl: int = 64,
                ident: int = 0) -> bytes:
    hdr = bytearray(struct.pack("!BBHHHBBHII", 0x45, 0, 20 + payload_len, ident, 0x4000,
                                ttl, proto, 0, src, dst))
    struct.pack_into("!H", hdr, 10, checksum(hdr))
    return bytes(hdr)


def udp_frame(src_mac: bytes, dst_mac: bytes, src_ip: int, dst_ip: int, sport: int, dport: int,
              payload: bytes = b"", ttl: int = 64, size: int | None = None, ident: int = 0) -> bytes:
    """Ethernet/IPv4/UDP frame; ``size`` pads the UDP payload to that frame length."""
    if size is not None:
        pad = size - (ETH_HLEN + 20 + 8) - len(payload)
        if pad > 0:
            payload = payload + bytes(pad)
    udp = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload
    ip = ipv4_header(src_ip, dst_ip, PROTO_UDP, len(udp), ttl, ident)
    return dst_mac + src_mac + struct.pack("!H", ETHERTYPE_IPV4) + ip + udp


def tcp_frame(src_mac: bytes, dst_mac: bytes, src_ip: int, dst_ip: int, sport: int, dport: int,
              payload: bytes = b"", ttl: int = 64) -> bytes:
    tcp = struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 0x50, 0x18, 65535, 0, 0) + payload
    ip = ipv4_header(src_ip, dst_ip, PROTO_TCP, len(tcp), ttl)
    return dst_mac + src_mac + struct.pack("!H", ETHERTYPE_IPV4) + ip + tcp


def icmp_frame(src_mac: bytes, dst_mac: bytes, src_ip: int, dst_ip: int, ttl: int = 64) -> bytes:
    icmp = struct.pack("!BBHHH", 8, 0, 0, 0, 0)
    ip = ipv4_header(src_ip, dst_ip, PROTO_ICMP, len(icmp), ttl)
    return dst_mac + src_mac + struct.pack("!H", ETHERTYPE_IPV4) + ip + icmp


def arp_frame(op: int, sha: bytes, spa: int, tha: bytes, tpa: int,
              eth_dst: bytes | None = None) -> bytes:
    if eth_dst is None:
        eth_dst = b"\xff" * 6 if op == ARP_REQUEST else tha
    arp = struct.pack("!HHBBH6sI6sI", 1, ETHERTYPE_IPV4, 6, 4, op, sha, spa, tha, tpa)
    frame = eth_dst + sha + struct.pack("!H", ETHERTYPE_ARP) + arp
    return frame + bytes(max(0, MIN_FRAME - len(frame)))


def ipv4_view(buf, off: int, length: int):
    """Validate the IPv4 header of an Ethernet frame.

    Returns (ihl_bytes, proto, src, dst) or None if the frame is not IPv4 or
    the header is malformed.  Raises nothing.
    """
    if length < ETH_HLEN + 20:
        return None
    vihl = buf[off + ETH_HLEN]
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    if ihl < 20:
        return None
    total = (buf[off + 16] << 8) | buf[off + 17]
    if total < ihl or total > length - ETH_HLEN:
        return None
    p = off + ETH_HLEN
    proto = buf[p + 9]
    src = int.from_bytes(buf[p + 12:p + 16], "big")
    dst = int.from_bytes(buf[p + 16:p + 20], "big")
    return ihl, proto, src, dst


def ethertype(buf, off: int, length: int) -> int:
    if length < ETH_HLEN:
        return -1
    return (buf[off + 12] << 8) | buf[off + 13]


def l4_payload_span(buf, off: int, length: int) -> tuple[int, int]:
    """(start, end) of the transport payload, falling back to the L3 payload."""
    if ethertype(buf, off, length) != ETHERTYPE_IPV4:
        return off + min(length, ETH_HLEN), off + length
    v = ipv4_view(buf, off, length)
    if v is None:
        return off + ETH_HLEN, off + length
    ihl, proto = v[0], v[1]
    total = (buf[off + 16] << 8) | buf[off + 17]
    start = off + ETH_HLEN + ihl
    end = off + ETH_HLEN + total
    if proto == PROTO_UDP:
        start += 8
    elif proto == PROTO_TCP and end - start >= 20:
        start += (buf[start + 12] >> 4) * 4
    return min(start, end), end
