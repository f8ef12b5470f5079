"""Ephemeral X25519 key agreement and the AEAD-protected session channel."""

from __future__ import annotations

import hashlib
import socket

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .codec import ProtocolError, decode, encode, recv_frame, send_frame


class SessionIntegrityError(ProtocolError):
    pass


def raw_public(key) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def new_ephemeral() -> tuple[X25519PrivateKey, bytes]:
    k = X25519PrivateKey.generate()
    return k, raw_public(k)


def transcript_hash(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(4, "little"))
        h.update(p)
    return h.digest()


def session_keys(priv: X25519PrivateKey, peer_pub: bytes, th: bytes) -> tuple[bytes, bytes]:
    """(instance-to-CAS key, CAS-to-instance key) bound to the handshake transcript."""
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(peer_pub))
    except ValueError as exc:
        raise ProtocolError(f"bad key share: {exc}") from None
    okm = HKDF(algorithm=hashes.SHA256(), length=64, salt=th,
               info=b"slick attestation session").derive(shared)
    return okm[:32], okm[32:]


def bound_nonce(nonce: bytes, instance_pub: bytes, cas_pub: bytes) -> bytes:
    """Quote nonce tied to this session's key shares, so a quote cannot be relayed."""
    return hashlib.sha256(b"slick quote nonce" + nonce + instance_pub + cas_pub).digest()[:16]


class SecureChannel:
    """Length-framed AES-256-GCM records with per-direction sequence nonces."""

    def __init__(self, sock: socket.socket, send_key: bytes, recv_key: bytes):
        self.sock = sock
        self._tx = AESGCM(send_key)
        self._rx = AESGCM(recv_key)
        self._tx_seq = 0
        self._rx_seq = 0

    def send(self, msg: dict) -> None:
        nonce = self._tx_seq.to_bytes(12, "little")
        self._tx_seq += 1
        send_frame(self.sock, self._tx.encrypt(nonce, encode(msg), b"slick record"))

    def recv(self) -> dict:
        data = recv_frame(self.sock)
        nonce = self._rx_seq.to_bytes(12, "little")
        self._rx_seq += 1
        try:
            plain = self._rx.decrypt(nonce, data, b"slick record")
        except InvalidTag:
            raise SessionIntegrityError("session record failed authentication") from None
        return decode(plain)
