"""Live publication server and operator control inlet.

The server fans immutable per-batch snapshots out to subscribed clients
and funnels operator commands (ROI selection, policy edits, stop) into a
mailbox the controller drains at batch boundaries. Slow clients are
disconnected when their bounded send queue overflows; nothing a client
does can back-pressure the control loop.
"""

from __future__ import annotations

import base64
import io
import queue
import socket
import struct
import threading

from PIL import Image

from ..controller import BatchRecord, RatePolicy, policy_from_json
from ..errors import ConfigError, DicflowError, ProtocolError
from ..imaging.image import GrayImage, quantize_to_u8
from ..opticalflow import ROI
from ..strain import StrainField, StrainStats
from . import protocol
from .wsbridge import WebSocketTransport, accept_handshake

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7341

CLIENT_QUEUE_DEPTH = 8


class LengthPrefixedTransport:
    """The native framing: 4-byte little-endian length + JSON body."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._reader = protocol.FrameReader(sock.recv)

    def send_payload(self, data: bytes) -> None:
        self._sock.sendall(struct.pack("<I", len(data)) + data)

    def recv_payload(self) -> bytes | None:
        header = self._reader._read_exact(4)
        if header is None:
            return None
        (length,) = struct.unpack("<I", header)
        if length > protocol.MAX_FRAME_BYTES:
            raise ProtocolError(f"frame length {length} exceeds the limit")
        return self._reader._read_exact(length)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class ControlMailbox:
    """Thread-safe slots for operator commands, drained at batch boundaries."""

    def __init__(self):
        self._cond = threading.Condition()
        self._roi: ROI | None = None
        self._roi_locked = False
        self._frame_shape: tuple[int, int] | None = None
        self._margin = 2
        self._policy: RatePolicy | None = None
        self._stop = False

    def set_frame_info(self, shape: tuple[int, int], margin: int) -> None:
        with self._cond:
            self._frame_shape = shape
            self._margin = margin

    def lock_roi(self) -> None:
        with self._cond:
            self._roi_locked = True

    def offer_roi(self, roi: ROI) -> tuple[bool, str]:
        """Operator ROI proposal; validated against the margin rule."""
        with self._cond:
            if self._roi_locked:
                return False, "ROI already set; analysis has started"
            if self._frame_shape is None:
                return False, "no frame captured yet"
            try:
                roi.validate_margin(self._frame_shape, self._margin)
            except DicflowError as exc:
                return False, str(exc)
            self._roi = roi
            self._cond.notify_all()
            return True, ""

    def await_roi(self, timeout: float | None = None) -> ROI | None:
        with self._cond:
            self._cond.wait_for(lambda: self._roi is not None, timeout=timeout)
            if self._roi is not None:
                self._roi_locked = True
            return self._roi

    def set_policy(self, policy: RatePolicy) -> None:
        with self._cond:
            self._policy = policy

    def take_policy(self) -> RatePolicy | None:
        with self._cond:
            policy, self._policy = self._policy, None
            return policy

    def request_stop(self) -> None:
        with self._cond:
            self._stop = True

    def stop_requested(self) -> bool:
        with self._cond:
            return self._stop


def stats_to_json(stats: StrainStats | None) -> dict | None:
    if stats is None:
        return None
    return {
        "max_eyy": stats.max_eyy,
        "mean_eyy": stats.mean_eyy,
        "del_max_eyy": stats.del_max_eyy,
        "topk_mean_eyy": {repr(k): v for k, v in stats.topk_mean_eyy.items()},
        "del_topk_eyy": {repr(k): v for k, v in stats.del_topk_eyy.items()},
        "valid_pixel_count": stats.valid_pixel_count,
        "component": stats.component,
    }


class _Client:
    def __init__(self, server: "StreamServer", transport, peer: str):
        self.server = server
        self.transport = transport
        self.peer = peer
        self.queue: queue.Queue = queue.Queue(maxsize=CLIENT_QUEUE_DEPTH)
        self.subscribed = False
        self.alive = True
        self._out_seq = 0
        self._last_in_seq = -1
        self._lock = threading.Lock()

    def send(self, mtype: str, payload: dict) -> None:
        """Enqueue without blocking; overflow disconnects this client only."""
        with self._lock:
            if not self.alive:
                return
            body = protocol.encode_envelope(mtype, self._out_seq, payload)
            self._out_seq += 1
        try:
            self.queue.put_nowait(body)
        except queue.Full:
            self.server._drop(self, "send queue overflow")

    def writer_loop(self) -> None:
        while True:
            body = self.queue.get()
            if body is None or not self.alive:
                return
            try:
                self.transport.send_payload(body)
            except OSError:
                self.server._drop(self, "send failed")
                return

    def reader_loop(self) -> None:
        while self.alive:
            try:
                raw = self.transport.recv_payload()
            except (OSError, ProtocolError):
                break
            if raw is None:
                break
            try:
                msg = protocol.decode_body(raw)
                if msg["seq"] <= self._last_in_seq:
                    raise ProtocolError(
                        f"client seq {msg['seq']} not greater than {self._last_in_seq}"
                    )
                self._last_in_seq = msg["seq"]
            except ProtocolError as exc:
                self.send("CONTROL_ACK", {"command": "?", "ok": False, "reason": str(exc)})
                break
            self.server._handle_control(self, msg)
        self.server._drop(self, "reader closed")


class StreamServer:
    """TCP (and optional WebSocket) publisher for one run.

    Also implements the controller's publisher interface, so it can be
    passed directly as the `publisher` of run_experiment.
    """

    def __init__(
        self,
        host: str = DEFAULT_HOST,
        port: int = DEFAULT_PORT,
        ws_port: int | None = None,
        run_id: str = "",
        margin: int = 2,
        roi_preset: bool = False,
    ):
        self.host = host
        self.port = port
        self.ws_port = ws_port
        self.run_id = run_id
        self.mailbox = ControlMailbox()
        self._margin = margin
        if roi_preset:
            self.mailbox.lock_roi()
        self._state = "waiting_for_first_frame"
        self._clients: list[_Client] = []
        self._lock = threading.Lock()
        self._first_frame_payload: dict | None = None
        self._trace: list[tuple[int, float]] = []
        self._sockets: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._closing = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._listen(self.port, websocket=False)
        if self.ws_port is not None:
            self._listen(self.ws_port, websocket=True)

    def _listen(self, port: int, websocket: bool) -> None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.host, port))
        sock.listen(16)
        bound = sock.getsockname()[1]
        if websocket:
            self.ws_port = bound
        else:
            self.port = bound
        self._sockets.append(sock)
        thread = threading.Thread(
            target=self._accept_loop, args=(sock, websocket), daemon=True
        )
        thread.start()
        self._threads.append(thread)

    def _accept_loop(self, listener: socket.socket, websocket: bool) -> None:
        while not self._closing:
            try:
                sock, addr = listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._setup_client, args=(sock, addr, websocket), daemon=True
            ).start()

    def _setup_client(self, sock: socket.socket, addr, websocket: bool) -> None:
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            if websocket:
                remainder = accept_handshake(sock)
                transport = WebSocketTransport(sock, initial=remainder)
            else:
                transport = LengthPrefixedTransport(sock)
        except (OSError, ProtocolError):
            sock.close()
            return
        client = _Client(self, transport, f"{addr[0]}:{addr[1]}")
        with self._lock:
            self._clients.append(client)
            client.send(
                "HELLO",
                {"protocol_version": protocol.PROTOCOL_VERSION, "run_id": self.run_id, "state": self._state},
            )
        threading.Thread(target=client.writer_loop, daemon=True).start()
        threading.Thread(target=client.reader_loop, daemon=True).start()

    def close(self) -> None:
        self._closing = True
        for sock in self._sockets:
            try:
                sock.close()
            except OSError:
                pass
        with self._lock:
            clients = list(self._clients)
        for client in clients:
            self._drop(client, "server closing")

    def _drop(self, client: _Client, reason: str) -> None:
        with self._lock:
            if client not in self._clients:
                return
            self._clients.remove(client)
        client.alive = False
        try:
            client.queue.put_nowait(None)
        except queue.Full:
            pass
        client.transport.close()

    @property
    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    # -- control inlet -------------------------------------------------------

    def _handle_control(self, client: _Client, msg: dict) -> None:
        mtype, payload = msg["type"], msg["payload"]
        if mtype == "SUBSCRIBE":
            with self._lock:
                client.subscribed = True
                if self._first_frame_payload is not None:
                    client.send("FIRST_FRAME", self._first_frame_payload)
                client.send("RATE_TRACE", {"trace": [[b, f] for b, f in self._trace]})
            client.send("CONTROL_ACK", {"command": "SUBSCRIBE", "ok": True, "reason": ""})
        elif mtype == "SET_ROI":
            try:
                roi = ROI(*(int(v) for v in payload["rect"]))
                ok, reason = self.mailbox.offer_roi(roi)
            except DicflowError as exc:
                ok, reason = False, str(exc)
            client.send("CONTROL_ACK", {"command": "SET_ROI", "ok": ok, "reason": reason})
        elif mtype == "SET_POLICY":
            try:
                self.mailbox.set_policy(policy_from_json(payload.get("policy", {})))
                ok, reason = True, ""
            except ConfigError as exc:
                ok, reason = False, str(exc)
            client.send("CONTROL_ACK", {"command": "SET_POLICY", "ok": ok, "reason": reason})
        elif mtype == "STOP":
            self.mailbox.request_stop()
            client.send("CONTROL_ACK", {"command": "STOP", "ok": True, "reason": ""})

    # -- publisher interface (controller side) --------------------------------

    def _broadcast(self, mtype: str, payload: dict) -> None:
        with self._lock:
            targets = [c for c in self._clients if c.subscribed]
        for client in targets:
            client.send(mtype, payload)

    def publish_first_frame(self, frame: GrayImage) -> None:
        buf = io.BytesIO()
        Image.fromarray(quantize_to_u8(frame.pixels), mode="L").save(buf, format="PNG")
        payload = {
            "png": base64.b64encode(buf.getvalue()).decode("ascii"),
            "width": frame.width,
            "height": frame.height,
            "timestamp": frame.timestamp,
        }
        self.mailbox.set_frame_info(frame.pixels.shape, self._margin)
        with self._lock:
            self._first_frame_payload = payload
            self._state = "running"
            targets = [c for c in self._clients if c.subscribed]
        for client in targets:
            client.send("FIRST_FRAME", payload)

    def publish_snapshot(self, record: BatchRecord, strain: StrainField | None) -> None:
        payload = {
            "batch_index": record.batch_index,
            "fps_used": record.fps_used,
            "next_fps": record.next_fps,
            "fired_row": record.fired_row,
            "flagged": record.flagged,
            "stats": stats_to_json(record.stats),
            "eyy": None,
            "valid": None,
            "roi": None,
        }
        if strain is not None:
            payload["eyy"] = protocol.encode_raster(strain.eyy, "f32le")
            payload["valid"] = protocol.encode_raster(strain.valid.astype("u1"), "u8")
            payload["roi"] = [strain.roi.x0, strain.roi.y0, strain.roi.width, strain.roi.height]
        with self._lock:
            self._trace.append((record.batch_index, record.fps_used))
        self._broadcast("BATCH_SNAPSHOT", payload)

    def publish_run_ended(self, status: str) -> None:
        with self._lock:
            self._state = "ended"
        self._broadcast("RUN_ENDED", {"status": status})
