"""Recording (and optionally tampering) TCP proxy for protocol tests."""

from __future__ import annotations

import socket
import threading


class TapProxy:
    """Forwards every accepted connection to ``upstream`` and records both directions.

    ``flip`` = (direction, offset) XORs one byte at that absolute offset of the
    given direction ("up" is client to server, "down" is server to client).
    """

    def __init__(self, upstream: tuple[str, int], flip: tuple[str, int] | None = None):
        self.upstream = upstream
        self.flip = flip
        self.captured = {"up": bytearray(), "down": bytearray()}
        self._lock = threading.Lock()
        self._srv = socket.create_server(("127.0.0.1", 0))
        self.address = self._srv.getsockname()
        self._stop = False
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        while not self._stop:
            try:
                client, _ = self._srv.accept()
            except OSError:
                return
            server = socket.create_connection(self.upstream)
            for src, dst, d in ((client, server, "up"), (server, client, "down")):
                threading.Thread(target=self._pump, args=(src, dst, d), daemon=True).start()

    def _pump(self, src, dst, direction):
        try:
            while True:
                data = src.recv(65536)
                if not data:
                    break
                with self._lock:
                    buf = self.captured[direction]
                    start = len(buf)
                    buf += data
                    if self.flip and self.flip[0] == direction:
                        off = self.flip[1] - start
                        if 0 <= off < len(data):
                            data = bytearray(data)
                            data[off] ^= 0x01
                            data = bytes(data)
                dst.sendall(data)
        except OSError:
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def wire(self) -> bytes:
        with self._lock:
            return bytes(self.captured["up"]) + bytes(self.captured["down"])

    def close(self):
        self._stop = True
        self._srv.close()
