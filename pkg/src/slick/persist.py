"""Encrypted persistence of element state.

On-disk layout (little-endian)::

    "SLKS" | version u16 | nonce[12] | ciphertext | tag[16]

The 18 header bytes are authenticated as associated data.  The plaintext
is ``count u32`` followed by ``count`` records of
``name_len u16 | name | blob_len u32 | blob``.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .crypto import KEY_LEN, NONCE_LEN, TAG_LEN

log = logging.getLogger(__name__)

MAGIC = b"SLKS"
VERSION = 1
_HEADER = struct.Struct("<4sH12s")
HEADER_LEN = _HEADER.size
_COUNT = struct.Struct("<I")
_NAME = struct.Struct("<H")
_BLOB = struct.Struct("<I")


class PersistError(Exception):
    pass


class AuthFailure(PersistError):
    pass


class VersionMismatch(AuthFailure):
    pass


class MissingFile(PersistError):
    pass


class HandlerError(PersistError):
    def __init__(self, element: str, reason: str):
        super().__init__(f"state handler of {element}: {reason}")
        self.element = element


class StateIOError(PersistError):
    pass


@dataclass(eq=False)
class StateFileSpec:
    path: Path
    key: bytes
    period_ns: int | None = None
    seals: int = 0
    timer: object = field(default=None, repr=False)
    _stage: bytearray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)
        if len(self.key) != KEY_LEN:
            raise ValueError(f"state file key must be {KEY_LEN} bytes")


def encode_records(records: list[tuple[str, bytes]]) -> bytes:
    parts = [_COUNT.pack(len(records))]
    for name, blob in records:
        nb = name.encode()
        parts += [_NAME.pack(len(nb)), nb, _BLOB.pack(len(blob)), blob]
    return b"".join(parts)


def decode_records(data) -> list[tuple[str, bytes]]:
    mv = memoryview(data)
    try:
        (count,) = _COUNT.unpack_from(mv, 0)
        p = _COUNT.size
        out = []
        for _ in range(count):
            (nl,) = _NAME.unpack_from(mv, p)
            p += _NAME.size
            name = bytes(mv[p:p + nl]).decode()
            p += nl
            (bl,) = _BLOB.unpack_from(mv, p)
            p += _BLOB.size
            if p + bl > len(mv):
                raise ValueError("record overruns plaintext")
            out.append((name, bytes(mv[p:p + bl])))
            p += bl
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise AuthFailure(f"state plaintext is malformed: {exc}") from None
    if p != len(mv):
        raise AuthFailure("trailing bytes after state records")
    return out


def encrypt_blob(key: bytes, plaintext, nonce: bytes | None = None) -> bytes:
    nonce = nonce if nonce is not None else os.urandom(NONCE_LEN)
    header = _HEADER.pack(MAGIC, VERSION, nonce)
    return header + AESGCM(key).encrypt(nonce, bytes(plaintext), header)


def decrypt_blob(key: bytes, data: bytes) -> bytes:
    if len(data) < HEADER_LEN + TAG_LEN:
        raise AuthFailure("state file is truncated")
    magic, version, nonce = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise AuthFailure("state file has a bad magic number")
    if version != VERSION:
        raise VersionMismatch(f"state file version {version}, expected {VERSION}")
    try:
        return AESGCM(key).decrypt(nonce, data[HEADER_LEN:], data[:HEADER_LEN])
    except InvalidTag:
        raise AuthFailure("state file failed authentication") from None


def stateful_elements(instance):
    return [e for e in instance.elements.values() if e.has_state]


def _stage(instance, spec: StateFileSpec, size: int) -> memoryview:
    """Trusted staging buffer, grown geometrically and charged to the enclave."""
    buf = spec._stage
    if buf is None or len(buf) < size:
        buf = spec._stage = instance.enclave.scratch(max(size, 2 * len(buf or b""), 4096))
    return memoryview(buf)[:size]


def atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise StateIOError(f"cannot write {path}: {exc}") from exc
    try:
        dfd = os.open(path.parent, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(dfd)
    except OSError:
        pass
    finally:
        os.close(dfd)


def seal_state(instance, spec: StateFileSpec) -> int:
    """Collect, encrypt and atomically replace the state file; returns bytes written."""
    records = []
    for e in stateful_elements(instance):
        try:
            blob = e.state_write()
        except Exception as exc:
            raise HandlerError(e.name, str(exc)) from exc
        records.append((e.name, bytes(blob)))
    plain = encode_records(records)
    staged = _stage(instance, spec, len(plain))
    staged[:] = plain
    data = encrypt_blob(spec.key, staged)
    staged[:] = bytes(len(staged))
    spec.path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(spec.path, data)
    spec.seals += 1
    return len(data)


def unseal_state(instance, spec: StateFileSpec) -> int:
    """Authenticate the state file and hand each record to its element.

    Nothing is applied unless the whole file authenticates.  If an element
    rejects its record, elements already restored are rolled back.
    """
    try:
        data = spec.path.read_bytes()
    except FileNotFoundError:
        raise MissingFile(f"no state file at {spec.path}") from None
    except OSError as exc:
        raise StateIOError(f"cannot read {spec.path}: {exc}") from exc
    records = decode_records(decrypt_blob(spec.key, data))
    done: list[tuple[object, bytes]] = []
    for name, blob in records:
        e = instance.elements.get(name)
        if e is None or not e.has_state:
            log.warning("state file %s: no stateful element %r in this graph; skipped",
                        spec.path, name)
            continue
        before = e.state_write()
        try:
            e.state_read(blob)
        except Exception as exc:
            for prev, old in reversed(done):
                prev.state_read(old)
            e.state_read(before)
            raise HandlerError(name, str(exc)) from exc
        done.append((e, before))
    return len(done)


def persist_periodic(instance, spec: StateFileSpec):
    """Register the periodic seal timer when a period is configured."""
    if spec.period_ns is None:
        return None
    from .runtime import TimerEvent, TimerKind

    def fire(_ev):
        seal_state(instance, spec)

    spec.timer = instance.schedule_timer(
        TimerEvent(TimerKind.PERIODIC, interval=spec.period_ns, callback=fire))
    return spec.timer


def arm(instance, spec: StateFileSpec) -> int:
    """Startup: restore saved state if present, then start periodic persistence."""
    try:
        restored = unseal_state(instance, spec)
    except MissingFile:
        log.info("no state file at %s; starting fresh", spec.path)
        restored = 0
    persist_periodic(instance, spec)
    return restored
