"""AES-256-GCM helpers: packet sealing with security associations, and key derivation.

Sealed frame layout (network byte order)::

    spi u32 | seq u64 | ciphertext | tag[16]

The 12 header bytes are the associated data and the GCM nonce is the
sequence number left-padded with four zero bytes.
"""

from __future__ import annotations

import hashlib
import os
import struct
import zlib

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

KEY_LEN = 32
TAG_LEN = 16
NONCE_LEN = 12
SEAL_HDR = struct.Struct("!IQ")
SEAL_OVERHEAD = SEAL_HDR.size + TAG_LEN
REPLAY_WINDOW = 64
SEQ_MAX = (1 << 64) - 1

_DEV_HW_SECRET = hashlib.sha256(b"slick simulated platform secret").digest()


def hw_secret() -> bytes:
    """Simulated per-platform hardware secret (``SLICK_HW_KEY`` hex overrides)."""
    env = os.environ.get("SLICK_HW_KEY")
    return bytes.fromhex(env) if env else _DEV_HW_SECRET


def derive_seal_key(measurement: bytes, purpose: str, secret: bytes | None = None) -> bytes:
    """Deterministic 32-byte key bound to the platform secret, code identity and purpose."""
    hkdf = HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=measurement,
                info=b"slick seal key\x00" + purpose.encode())
    return hkdf.derive(secret if secret is not None else hw_secret())


def gcm_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """Ciphertext with the 16-byte tag appended."""
    return AESGCM(key).encrypt(nonce, plaintext, aad or None)


def gcm_decrypt(key: bytes, nonce: bytes, data: bytes, aad: bytes = b"") -> bytes:
    return AESGCM(key).decrypt(nonce, data, aad or None)


def seq_nonce(seq: int) -> bytes:
    return b"\x00\x00\x00\x00" + seq.to_bytes(8, "big")


class SealError(Exception):
    pass


class SAExhausted(SealError):
    pass


class AuthError(SealError):
    pass


class ReplayError(SealError):
    pass


class MalformedSealed(SealError):
    pass


class SecurityAssociation:
    """Key, nonce counter and 64-entry anti-replay window for one peer."""

    def __init__(self, name: str, key: bytes, spi: int | None = None, next_nonce: int = 1):
        if len(key) != KEY_LEN:
            raise ValueError(f"SA key must be {KEY_LEN} bytes, got {len(key)}")
        self.name = name
        self.spi = zlib.crc32(name.encode()) if spi is None else spi
        self.next_nonce = next_nonce
        self.highest = 0
        self.bitmap = 0
        self.key_uses = 0
        self._key = bytes(key)
        self._aead = AESGCM(self._key)

    def same_key(self, key: bytes) -> bool:
        return key == self._key

    @property
    def aead(self) -> AESGCM:
        self.key_uses += 1
        return self._aead

    def seal(self, frame: bytes) -> bytes:
        seq = self.next_nonce
        if seq > SEQ_MAX:
            raise SAExhausted(f"SA {self.name} ran out of sequence numbers")
        self.next_nonce = seq + 1
        hdr = SEAL_HDR.pack(self.spi, seq)
        return hdr + self.aead.encrypt(seq_nonce(seq), frame, hdr)

    def replay_ok(self, seq: int) -> bool:
        if seq == 0:
            return False
        if seq > self.highest:
            return True
        diff = self.highest - seq
        if diff >= REPLAY_WINDOW:
            return False
        return not (self.bitmap >> diff) & 1

    def mark_seen(self, seq: int) -> None:
        if seq > self.highest:
            shift = seq - self.highest
            self.bitmap = ((self.bitmap << shift) | 1) & ((1 << REPLAY_WINDOW) - 1)
            self.highest = seq
        else:
            self.bitmap |= 1 << (self.highest - seq)

    def open(self, data: bytes) -> bytes:
        if len(data) < SEAL_OVERHEAD:
            raise MalformedSealed("sealed frame too short")
        spi, seq = SEAL_HDR.unpack_from(data)
        if spi != self.spi:
            raise MalformedSealed(f"SPI {spi:#x} does not belong to SA {self.name}")
        if not self.replay_ok(seq):
            raise ReplayError(f"sequence {seq} replayed or too old")
        try:
            pt = self.aead.decrypt(seq_nonce(seq), data[SEAL_HDR.size:], data[:SEAL_HDR.size])
        except InvalidTag:
            raise AuthError("tag mismatch") from None
        self.mark_seen(seq)
        return pt
