"""Small blocking client for the stream protocol (watch command, tests)."""

from __future__ import annotations

import socket

from . import protocol


class StreamClient:
    def __init__(self, host: str, port: int, timeout: float | None = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._reader = protocol.FrameReader(self._sock.recv)
        self._seq = 0

    def send(self, mtype: str, payload: dict | None = None) -> None:
        self._sock.sendall(protocol.encode_message(mtype, self._seq, payload or {}))
        self._seq += 1

    def subscribe(self) -> None:
        self.send("SUBSCRIBE")

    def recv(self) -> dict | None:
        """Next validated message, or None when the server hangs up."""
        try:
            return self._reader.read_message()
        except (OSError, TimeoutError):
            return None

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self) -> "StreamClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
