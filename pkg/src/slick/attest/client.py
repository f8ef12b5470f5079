"""Enclave library side: bootstrap an instance through LAS and CAS."""

from __future__ import annotations

import logging
import os
import socket
import threading
import time
from dataclasses import asdict, dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .channel import SecureChannel, bound_nonce, new_ephemeral, session_keys, transcript_hash
from .codec import ProtocolError, check, decode, encode, message, recv_frame, send_frame
from .quote import (AttestationQuote, AttestationRejected, ConnectFailure, ProvisionedConfig,
                    RejectReason, measure)

log = logging.getLogger(__name__)

CONNECT_RETRIES = 3
CONNECT_BACKOFF_S = 0.05


@dataclass
class PhaseReport:
    """Wall-clock nanoseconds per bootstrap phase."""

    attestation: int
    cas_communication: int
    las_communication: int
    configuration: int
    total: int

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass
class BootstrapResult:
    config: ProvisionedConfig
    report: PhaseReport
    measurement: bytes
    instance_id: str


def connect_with_retry(addr: tuple[str, int], retries: int = CONNECT_RETRIES,
                       backoff: float = CONNECT_BACKOFF_S, timeout: float = 5.0) -> socket.socket:
    """One attempt plus ``retries`` more, doubling the pause each time."""
    last = None
    for attempt in range(retries + 1):
        try:
            return socket.create_connection(addr, timeout=timeout)
        except OSError as exc:
            last = exc
            if attempt < retries:
                log.info("connect to %s:%d failed (%s); retrying", addr[0], addr[1], exc)
                time.sleep(backoff * (2 ** attempt))
    raise ConnectFailure(f"cannot reach {addr[0]}:{addr[1]} after {retries + 1} attempts: {last}")


def _raise_reject(msg) -> None:
    if isinstance(msg, dict) and msg.get("type") in ("Reject", "Error"):
        raise AttestationRejected(str(msg.get("reason", "unknown")), str(msg.get("detail", "")))


def request_quote(sock: socket.socket, measurement: bytes, nonce: bytes,
                  sgx: bool = True) -> AttestationQuote:
    send_frame(sock, encode(message("QuoteRequest", measurement=measurement, nonce=nonce, sgx=sgx)))
    reply = decode(recv_frame(sock))
    _raise_reject(reply)
    return AttestationQuote.from_msg(reply, "QuoteResponse")


class CasSession:
    """Client half of the CAS protocol, usable step by step (tests drive it directly)."""

    def __init__(self, sock: socket.socket, instance_id: str, las_id: str,
                 cas_public_key: bytes | None = None):
        self.sock = sock
        priv, pub = new_ephemeral()
        hello_raw = encode(message("Hello", instance_id=instance_id, las_id=las_id, pubkey=pub))
        send_frame(sock, hello_raw)
        ch = check(decode(recv_frame(sock)), "Challenge", nonce=bytes, pubkey=bytes,
                   cas_key=bytes, sig=bytes)
        th = transcript_hash(hello_raw, ch["nonce"], ch["pubkey"], ch["cas_key"])
        if cas_public_key is not None and ch["cas_key"] != cas_public_key:
            raise AttestationRejected(RejectReason.PROTOCOL.value, "CAS key does not match pin")
        try:
            Ed25519PublicKey.from_public_bytes(ch["cas_key"]).verify(ch["sig"], th)
        except (InvalidSignature, ValueError):
            raise AttestationRejected(RejectReason.PROTOCOL.value,
                                      "CAS challenge signature invalid") from None
        k_out, k_in = session_keys(priv, ch["pubkey"], th)
        self.channel = SecureChannel(sock, k_out, k_in)
        self.nonce = bound_nonce(ch["nonce"], pub, ch["pubkey"])
        self.cas_key = ch["cas_key"]

    def present(self, quote: AttestationQuote) -> None:
        """Send the quote; raises AttestationRejected unless the CAS accepts."""
        self.channel.send(quote.to_msg())
        reply = self.channel.recv()
        _raise_reject(reply)
        check(reply, "Accept", measurement=bytes)

    def receive_config(self) -> ProvisionedConfig:
        return ProvisionedConfig.from_msg(self.channel.recv())


def enclave_bootstrap(cas_addr: tuple[str, int], las_addr: tuple[str, int],
                      identity: str = "slick", config_text: str = "",
                      instance_id: str = "slick0", las_id: str = "las0", sgx: bool = True,
                      cas_public_key: bytes | None = None, retries: int = CONNECT_RETRIES,
                      backoff: float = CONNECT_BACKOFF_S, timeout: float = 5.0) -> BootstrapResult:
    """Attest this instance and fetch its provisioned configuration.

    The CAS and LAS connections are opened concurrently; the quote request
    waits only for the CAS challenge, whose nonce it must carry.
    """
    t0 = time.monotonic_ns()
    mval = measure(identity, config_text)
    las_box: dict = {}

    def open_las():
        t = time.monotonic_ns()
        try:
            las_box["sock"] = connect_with_retry(las_addr, retries, backoff, timeout)
        except BaseException as exc:  # re-raised on the main thread
            las_box["error"] = exc
        las_box["ns"] = time.monotonic_ns() - t

    las_thread = threading.Thread(target=open_las, name="las-connect", daemon=True)
    las_thread.start()
    cas_ns = 0
    las_sock = cas_sock = None
    try:
        t = time.monotonic_ns()
        cas_sock = connect_with_retry(cas_addr, retries, backoff, timeout)
        session = CasSession(cas_sock, instance_id, las_id, cas_public_key)
        cas_ns += time.monotonic_ns() - t

        las_thread.join()
        if "error" in las_box:
            raise las_box["error"]
        las_sock = las_box["sock"]
        t = time.monotonic_ns()
        quote = request_quote(las_sock, mval, session.nonce, sgx)
        las_ns = las_box["ns"] + time.monotonic_ns() - t

        t = time.monotonic_ns()
        session.present(quote)
        t_accept = time.monotonic_ns()
        cas_ns += t_accept - t
        cfg = session.receive_config()
        t_done = time.monotonic_ns()
    except ProtocolError as exc:
        raise AttestationRejected(RejectReason.PROTOCOL.value, str(exc)) from exc
    finally:
        for s in (cas_sock, las_sock):
            if s is not None:
                s.close()
    report = PhaseReport(attestation=t_accept - t0, cas_communication=cas_ns,
                         las_communication=las_ns, configuration=t_done - t_accept,
                         total=t_done - t0)
    return BootstrapResult(cfg, report, mval, instance_id)


def addr_from_env(var: str) -> tuple[str, int] | None:
    from .codec import parse_addr
    v = os.environ.get(var)
    return parse_addr(v) if v else None
