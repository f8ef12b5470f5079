"""Canonical self-describing encoding and u32-length framing for protocol messages.

Values::

    'N'                          None
    'T' / 'F'                    booleans
    'I' i64                      integers
    'B' u32 bytes                byte strings
    'S' u32 utf-8                text
    'L' u32 item...              lists
    'M' u32 (key, value)...      maps with text keys in sorted order

All integers are little-endian.  Decoding rejects trailing bytes and
unsorted or duplicate keys, so every value has exactly one encoding.
"""

from __future__ import annotations

import socket
import struct

MAX_FRAME = 1 << 20
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")


class ProtocolError(Exception):
    pass


def encode(value) -> bytes:
    out = bytearray()
    _enc(value, out)
    return bytes(out)


def _enc(v, out: bytearray) -> None:
    if v is None:
        out += b"N"
    elif v is True:
        out += b"T"
    elif v is False:
        out += b"F"
    elif isinstance(v, int):
        out += b"I" + _I64.pack(v)
    elif isinstance(v, (bytes, bytearray, memoryview)):
        b = bytes(v)
        out += b"B" + _U32.pack(len(b)) + b
    elif isinstance(v, str):
        b = v.encode()
        out += b"S" + _U32.pack(len(b)) + b
    elif isinstance(v, (list, tuple)):
        out += b"L" + _U32.pack(len(v))
        for item in v:
            _enc(item, out)
    elif isinstance(v, dict):
        out += b"M" + _U32.pack(len(v))
        for k in sorted(v):
            if not isinstance(k, str):
                raise TypeError("map keys must be text")
            kb = k.encode()
            out += _U32.pack(len(kb)) + kb
            _enc(v[k], out)
    else:
        raise TypeError(f"cannot encode {type(v).__name__}")


def decode(data: bytes):
    v, p = _dec(memoryview(data), 0)
    if p != len(data):
        raise ProtocolError("trailing bytes after message")
    return v


def _take(mv, p, n):
    if p + n > len(mv):
        raise ProtocolError("message truncated")
    return mv[p:p + n], p + n


def _dec(mv, p):
    tag, p = _take(mv, p, 1)
    t = bytes(tag)
    if t == b"N":
        return None, p
    if t == b"T":
        return True, p
    if t == b"F":
        return False, p
    if t == b"I":
        raw, p = _take(mv, p, 8)
        return _I64.unpack(raw)[0], p
    if t in (b"B", b"S"):
        raw, p = _take(mv, p, 4)
        body, p = _take(mv, p, _U32.unpack(raw)[0])
        if t == b"B":
            return bytes(body), p
        try:
            return bytes(body).decode(), p
        except UnicodeDecodeError:
            raise ProtocolError("invalid utf-8 text") from None
    if t == b"L":
        raw, p = _take(mv, p, 4)
        items = []
        for _ in range(_U32.unpack(raw)[0]):
            item, p = _dec(mv, p)
            items.append(item)
        return items, p
    if t == b"M":
        raw, p = _take(mv, p, 4)
        d = {}
        prev = None
        for _ in range(_U32.unpack(raw)[0]):
            kl, p = _take(mv, p, 4)
            kb, p = _take(mv, p, _U32.unpack(kl)[0])
            try:
                k = bytes(kb).decode()
            except UnicodeDecodeError:
                raise ProtocolError("invalid utf-8 key") from None
            if prev is not None and k <= prev:
                raise ProtocolError("map keys not in canonical order")
            prev = k
            d[k], p = _dec(mv, p)
        return d, p
    raise ProtocolError(f"unknown value tag {t!r}")


def message(type_: str, **fields) -> dict:
    fields["type"] = type_
    return fields


def check(msg, type_: str, **schema) -> dict:
    """Validate a decoded message's type and field types."""
    if not isinstance(msg, dict):
        raise ProtocolError("message is not a map")
    got = msg.get("type")
    if got != type_:
        raise ProtocolError(f"expected {type_} message, got {got!r}")
    for name, kind in schema.items():
        v = msg.get(name)
        if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
            raise ProtocolError(f"{type_}.{name} missing or not {kind.__name__}")
    return msg


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def send_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise ProtocolError("frame too large")
    sock.sendall(_U32.pack(len(payload)) + payload)


def recv_frame(sock: socket.socket) -> bytes:
    (n,) = _U32.unpack(recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit")
    return recv_exact(sock, n)


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address {text!r} must be HOST:PORT")
    return host or "127.0.0.1", int(port)
