"""Configuration and Attestation Service.

Verifies quotes (standing in for the vendor attestation service by holding
the platform keys), admits local attestation services, and provisions
configuration and secrets to admitted instances over an encrypted session.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .channel import SecureChannel, bound_nonce, new_ephemeral, session_keys, transcript_hash
from .codec import ProtocolError, check, decode, encode, message, recv_frame, send_frame
from .quote import (LAS_MEASUREMENT, QUOTE_NONCE_LEN, AttestationQuote, ProvisionedConfig,
                    RejectReason, default_hw_key)

log = logging.getLogger(__name__)

POLL_S = 0.05  # shutdown latency of the accept loops


class PolicyStore:
    """Measurement -> ProvisionedConfig plus an attested-instance log, as JSON lines."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._policy: dict[str, ProvisionedConfig] = {}
        self._instances: list[dict] = []
        if self.path and self.path.exists():
            for n, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    self._apply(json.loads(line))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{self.path}:{n}: bad store record: {exc}") from None

    def _apply(self, rec: dict) -> None:
        if rec["op"] == "policy":
            self._policy[rec["measurement"]] = ProvisionedConfig.from_json(rec["config"])
        elif rec["op"] == "instance":
            self._instances.append(rec["instance"])
        else:
            raise KeyError(f"unknown op {rec['op']!r}")

    def _append(self, rec: dict) -> None:
        self._apply(rec)
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def put_policy(self, measurement: bytes | str, cfg: ProvisionedConfig) -> None:
        key = measurement.hex() if isinstance(measurement, bytes) else measurement.lower()
        if len(key) != 64 or any(c not in "0123456789abcdef" for c in key):
            raise ValueError("measurement must be 32 bytes of hex")
        with self._lock:
            self._append({"op": "policy", "measurement": key, "config": cfg.to_json()})

    def get(self, measurement: bytes) -> ProvisionedConfig | None:
        with self._lock:
            return self._policy.get(measurement.hex())

    def record_instance(self, info: dict) -> None:
        with self._lock:
            self._append({"op": "instance", "instance": info})

    def instances(self) -> list[dict]:
        with self._lock:
            return list(self._instances)


class CasServer:
    def __init__(self, store: PolicyStore | str | Path | None = None,
                 listen: tuple[str, int] = ("127.0.0.1", 0),
                 admin_listen: tuple[str, int] | None = None,
                 platforms: dict[str, bytes] | None = None,
                 hw_key: bytes | None = None):
        self.store = store if isinstance(store, PolicyStore) else PolicyStore(store)
        self.platforms = dict(platforms or {})
        self.hw_key = hw_key if hw_key is not None else default_hw_key()
        self.signing_key = Ed25519PrivateKey.generate()
        self.public_key = self.signing_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        self.attested_las: set[str] = set()
        self.rejections: list[tuple[str, str]] = []
        self.message_log: list[str] = []
        self._outstanding: set[bytes] = set()
        self._lock = threading.Lock()
        self._listen = listen
        self._admin_listen = admin_listen
        self._servers: list = []
        self._threads: list[threading.Thread] = []

    # lifecycle

    def start(self) -> CasServer:
        cas = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                cas.handle_connection(self.request)

        srv = socketserver.ThreadingTCPServer(self._listen, Handler, bind_and_activate=False)
        srv.allow_reuse_address = True
        srv.daemon_threads = True
        srv.server_bind()
        srv.server_activate()
        self._servers.append(srv)
        self.address = srv.server_address
        if self._admin_listen is not None:
            admin = ThreadingHTTPServer(self._admin_listen, _admin_handler(self))
            admin.daemon_threads = True
            self._servers.append(admin)
            self.admin_address = admin.server_address
        for s in self._servers:
            t = threading.Thread(target=s.serve_forever, args=(POLL_S,),
                                 name=f"cas-{type(s).__name__}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self) -> None:
        for s in self._servers:
            s.shutdown()
            s.server_close()
        self._servers.clear()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # helpers

    def platform_key(self, las_id: str) -> bytes:
        return self.platforms.get(las_id, self.hw_key)

    def _log(self, kind: str) -> None:
        with self._lock:
            self.message_log.append(kind)

    def _reject(self, send, reason: RejectReason, who: str, detail: str = "") -> None:
        with self._lock:
            self.rejections.append((who, reason.value))
        log.warning("CAS rejected %s: %s%s", who, reason.value, f" ({detail})" if detail else "")
        send(message("Reject", reason=reason.value, detail=detail))
        self._log("Reject")

    def _nonce_live(self, nonce: bytes) -> bool:
        with self._lock:
            return nonce in self._outstanding

    def _consume(self, nonce: bytes) -> bool:
        with self._lock:
            if nonce in self._outstanding:
                self._outstanding.discard(nonce)
                return True
            return False

    # protocol

    def handle_connection(self, sock: socket.socket) -> None:
        sock.settimeout(10)
        try:
            first = recv_frame(sock)
            msg = decode(first)
            kind = msg.get("type") if isinstance(msg, dict) else None
            self._log(str(kind))
            if kind == "Hello":
                self._instance_session(sock, first, msg)
            elif kind == "LasAttest":
                self._las_session(sock, msg)
            else:
                raise ProtocolError(f"unexpected opening message {kind!r}")
        except (ProtocolError, OSError) as exc:
            log.warning("CAS session aborted: %s", exc)

    def _las_session(self, sock, msg) -> None:
        def send(m):
            send_frame(sock, encode(m))

        q = AttestationQuote.from_msg(msg, "LasAttest")
        who = f"LAS {q.las_id}"
        if not q.verify_mac(self.platform_key(q.las_id)):
            return self._reject(send, RejectReason.BAD_MAC, who)
        if not self._nonce_live(q.nonce):
            return self._reject(send, RejectReason.STALE_NONCE, who)
        if not q.sgx_flag:
            return self._reject(send, RejectReason.SGX_FLAG_FALSE, who)
        if q.measurement != LAS_MEASUREMENT:
            return self._reject(send, RejectReason.UNKNOWN_MEASUREMENT, who)
        with self._lock:
            self.attested_las.add(q.las_id)
        log.info("CAS admitted %s", who)
        send(message("LasAccepted", las_id=q.las_id))
        self._log("LasAccepted")

    def _instance_session(self, sock, hello_raw: bytes, hello) -> None:
        check(hello, "Hello", instance_id=str, las_id=str, pubkey=bytes)
        priv, pub = new_ephemeral()
        nonce = os.urandom(QUOTE_NONCE_LEN)
        th = transcript_hash(hello_raw, nonce, pub, self.public_key)
        # live before the challenge leaves: the LAS may present it right away
        bn = bound_nonce(nonce, hello["pubkey"], pub)
        with self._lock:
            self._outstanding.add(bn)
        try:
            send_frame(sock, encode(message("Challenge", nonce=nonce, pubkey=pub,
                                            cas_key=self.public_key,
                                            sig=self.signing_key.sign(th))))
            self._log("Challenge")
            k_in, k_out = session_keys(priv, hello["pubkey"], th)
            ch = SecureChannel(sock, k_out, k_in)
            self._verify_and_provision(ch, hello, bn)
        finally:
            with self._lock:
                self._outstanding.discard(bn)

    def _verify_and_provision(self, ch: SecureChannel, hello, bn: bytes) -> None:
        msg = ch.recv()
        self._log(str(msg.get("type")))
        q = AttestationQuote.from_msg(msg)
        who = f"instance {hello['instance_id']}"
        if not q.verify_mac(self.platform_key(q.las_id)):
            return self._reject(ch.send, RejectReason.BAD_MAC, who)
        if q.nonce != bn or not self._consume(q.nonce):
            return self._reject(ch.send, RejectReason.STALE_NONCE, who)
        if not q.sgx_flag:
            return self._reject(ch.send, RejectReason.SGX_FLAG_FALSE, who)
        with self._lock:
            las_ok = q.las_id in self.attested_las
        if not las_ok:
            return self._reject(ch.send, RejectReason.UNATTESTED_LAS, who, q.las_id)
        cfg = self.store.get(q.measurement)
        if cfg is None:
            return self._reject(ch.send, RejectReason.UNKNOWN_MEASUREMENT, who,
                                q.measurement.hex())
        ch.send(message("Accept", measurement=q.measurement))
        self._log("Accept")
        ch.send(cfg.to_msg())
        self._log("Config")
        self.store.record_instance({"instance_id": hello["instance_id"],
                                    "las_id": q.las_id,
                                    "measurement": q.measurement.hex(),
                                    "time": time.time()})


def _admin_handler(cas: CasServer):
    class Admin(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("admin: " + fmt, *args)

        def _reply(self, code: int, body) -> None:
            data = json.dumps(body, sort_keys=True).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_PUT(self):
            parts = self.path.strip("/").split("/")
            if len(parts) != 2 or parts[0] != "policy":
                return self._reply(404, {"error": "not found"})
            try:
                n = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(n) or b"{}")
                cas.store.put_policy(parts[1], ProvisionedConfig.from_json(body))
            except (ValueError, TypeError, AttributeError) as exc:
                return self._reply(400, {"error": str(exc)})
            self._reply(200, {"measurement": parts[1].lower()})

        def do_GET(self):
            if self.path.rstrip("/") != "/instances":
                return self._reply(404, {"error": "not found"})
            self._reply(200, cas.store.instances())

    return Admin
