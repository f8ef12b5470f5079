"""Local Attestation Service: issues quotes on one platform.

On its first quote request the LAS attests itself to the CAS (one
LasAttest/LasAccepted exchange, using the instance's fresh nonce).  Once
admitted it serves later quotes without contacting the CAS again.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from .codec import ProtocolError, check, decode, encode, message, recv_frame, send_frame
from .quote import LAS_MEASUREMENT, QUOTE_NONCE_LEN, AttestationQuote, default_hw_key

log = logging.getLogger(__name__)


class LasServer:
    def __init__(self, cas_addr: tuple[str, int], listen: tuple[str, int] = ("127.0.0.1", 0),
                 hw_key: bytes | None = None, las_id: str = "las0", timeout: float = 5.0):
        self.cas_addr = cas_addr
        self.hw_key = hw_key if hw_key is not None else default_hw_key()
        self.las_id = las_id
        self.timeout = timeout
        self.attested = False
        self.cas_contacts = 0
        self._lock = threading.Lock()
        self._listen = listen
        self._server = None

    def start(self) -> LasServer:
        las = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                las.handle_connection(self.request)

        srv = socketserver.ThreadingTCPServer(self._listen, Handler, bind_and_activate=False)
        srv.allow_reuse_address = True
        srv.daemon_threads = True
        srv.server_bind()
        srv.server_activate()
        self._server = srv
        self.address = srv.server_address
        threading.Thread(target=srv.serve_forever, args=(0.05,), name="las", daemon=True).start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def attest_to_cas(self, nonce: bytes) -> str | None:
        """Admit this LAS at the CAS; returns None on success or the reject reason."""
        q = AttestationQuote.issue(self.hw_key, LAS_MEASUREMENT, nonce, True, self.las_id)
        with socket.create_connection(self.cas_addr, timeout=self.timeout) as s:
            self.cas_contacts += 1
            send_frame(s, encode(q.to_msg("LasAttest")))
            reply = decode(recv_frame(s))
        if isinstance(reply, dict) and reply.get("type") == "LasAccepted":
            return None
        reason = reply.get("reason") if isinstance(reply, dict) else None
        return str(reason or "ProtocolError")

    def handle_connection(self, sock: socket.socket) -> None:
        sock.settimeout(self.timeout)
        try:
            while True:
                try:
                    raw = recv_frame(sock)
                except ProtocolError:
                    return  # peer closed
                req = check(decode(raw), "QuoteRequest", measurement=bytes, nonce=bytes,
                            sgx=bool)
                if len(req["measurement"]) != 32 or len(req["nonce"]) != QUOTE_NONCE_LEN:
                    raise ProtocolError("QuoteRequest fields have wrong sizes")
                with self._lock:
                    if not self.attested:
                        try:
                            reason = self.attest_to_cas(req["nonce"])
                        except OSError as exc:
                            reason = f"CasUnreachable: {exc}"
                        if reason is not None:
                            log.warning("LAS %s not admitted by CAS: %s", self.las_id, reason)
                            send_frame(sock, encode(message("Error", reason=reason)))
                            continue
                        self.attested = True
                q = AttestationQuote.issue(self.hw_key, req["measurement"], req["nonce"],
                                           req["sgx"], self.las_id)
                send_frame(sock, encode(q.to_msg("QuoteResponse")))
        except (ProtocolError, OSError) as exc:
            log.warning("LAS session aborted: %s", exc)
