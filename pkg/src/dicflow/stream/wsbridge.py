"""Minimal server-side WebSocket (RFC 6455) transport for browser clients.

The stream server re-exposes its framed JSON messages at /ws so a browser
can speak the protocol without the 4-byte length prefix: each protocol
message rides in one WebSocket text frame. Only what a monitor needs is
implemented: handshake, text frames, ping/pong, close. No extensions, no
TLS.
"""

from __future__ import annotations

import base64
import hashlib
import struct

from ..errors import ProtocolError

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_OP_CONT = 0x0
_OP_TEXT = 0x1
_OP_BINARY = 0x2
_OP_CLOSE = 0x8
_OP_PING = 0x9
_OP_PONG = 0xA


def accept_handshake(sock, expected_path: str = "/ws") -> bytes:
    """Read the HTTP upgrade request and complete the WebSocket handshake.

    Returns any bytes that arrived pipelined after the request headers.
    """
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ProtocolError("connection closed during WebSocket handshake")
        data += chunk
        if len(data) > 65536:
            raise ProtocolError("oversized WebSocket handshake request")
    head, remainder = data.split(b"\r\n\r\n", 1)
    head = head.decode("latin-1")
    lines = head.split("\r\n")
    parts = lines[0].split()
    if len(parts) < 3 or parts[0] != "GET":
        raise ProtocolError(f"not a WebSocket GET request: {lines[0]!r}")
    if parts[1].split("?")[0] != expected_path:
        raise ProtocolError(f"unknown WebSocket path {parts[1]!r}")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if not key or headers.get("upgrade", "").lower() != "websocket":
        raise ProtocolError("missing WebSocket upgrade headers")
    accept = base64.b64encode(hashlib.sha1((key + _GUID).encode()).digest()).decode()
    sock.sendall(
        (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
        ).encode("latin-1")
    )
    return remainder


class WebSocketTransport:
    """Text-frame transport over an upgraded socket."""

    def __init__(self, sock, initial: bytes = b""):
        self._sock = sock
        self._pending = initial

    def _recv_raw(self, n: int) -> bytes:
        if self._pending:
            chunk, self._pending = self._pending[:n], self._pending[n:]
            return chunk
        return self._sock.recv(n)

    def send_payload(self, data: bytes) -> None:
        length = len(data)
        if length < 126:
            header = struct.pack("!BB", 0x80 | _OP_TEXT, length)
        elif length < 65536:
            header = struct.pack("!BBH", 0x80 | _OP_TEXT, 126, length)
        else:
            header = struct.pack("!BBQ", 0x80 | _OP_TEXT, 127, length)
        self._sock.sendall(header + data)

    def _send_control(self, opcode: int, data: bytes = b"") -> None:
        self._sock.sendall(struct.pack("!BB", 0x80 | opcode, len(data)) + data)

    def _read_exact(self, n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            chunk = self._recv_raw(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def _read_frame(self):
        head = self._read_exact(2)
        if head is None:
            return None
        fin = bool(head[0] & 0x80)
        opcode = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            ext = self._read_exact(2)
            if ext is None:
                return None
            (length,) = struct.unpack("!H", ext)
        elif length == 127:
            ext = self._read_exact(8)
            if ext is None:
                return None
            (length,) = struct.unpack("!Q", ext)
        mask = b"\0\0\0\0"
        if masked:
            mask = self._read_exact(4)
            if mask is None:
                return None
        data = self._read_exact(length) if length else b""
        if data is None:
            return None
        if masked:
            data = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
        return fin, opcode, data

    def recv_payload(self) -> bytes | None:
        buffer = b""
        while True:
            frame = self._read_frame()
            if frame is None:
                return None
            fin, opcode, data = frame
            if opcode == _OP_CLOSE:
                try:
                    self._send_control(_OP_CLOSE, data[:2])
                except OSError:
                    pass
                return None
            if opcode == _OP_PING:
                self._send_control(_OP_PONG, data)
                continue
            if opcode == _OP_PONG:
                continue
            if opcode in (_OP_TEXT, _OP_BINARY, _OP_CONT):
                buffer += data
                if fin:
                    return buffer
                continue
            raise ProtocolError(f"unsupported WebSocket opcode {opcode}")

    def close(self) -> None:
        try:
            self._send_control(_OP_CLOSE)
        except OSError:
            pass
        self._sock.close()
