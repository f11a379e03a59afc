"""Wire protocol: 4-byte little-endian length prefix, then a JSON envelope.

Every message is {"type": str, "seq": int, "payload": {...}}; seq increases
strictly per direction per connection. Raster payloads travel as base64 of
the archive container's raw bytes plus their dims, so a client can decode
them with nothing but a base64 and JSON library.
"""

from __future__ import annotations

import base64
import json
import struct

import numpy as np

from ..errors import ProtocolError

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024

SERVER_TYPES = ("HELLO", "FIRST_FRAME", "BATCH_SNAPSHOT", "RATE_TRACE", "RUN_ENDED", "CONTROL_ACK")
CLIENT_TYPES = ("SUBSCRIBE", "SET_ROI", "SET_POLICY", "STOP")

_DTYPE_SIZE = {"f32le": 4, "u8": 1}


def encode_raster(array: np.ndarray, dtype: str) -> dict:
    """Pack a 2-D raster as {dims, dtype, data-b64} using archive byte order."""
    if dtype == "f32le":
        raw = np.ascontiguousarray(array, dtype="<f4").tobytes()
    elif dtype == "u8":
        raw = np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    else:
        raise ProtocolError(f"unknown raster dtype {dtype!r}")
    return {
        "dims": [int(array.shape[0]), int(array.shape[1])],
        "dtype": dtype,
        "data": base64.b64encode(raw).decode("ascii"),
    }


def decode_raster(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    h, w = (int(d) for d in payload["dims"])
    dtype = payload.get("dtype", "f32le")
    itemsize = _DTYPE_SIZE.get(dtype)
    if itemsize is None:
        raise ProtocolError(f"unknown raster dtype {dtype!r}")
    if len(raw) != h * w * itemsize:
        raise ProtocolError(f"raster byte length {len(raw)} != dims {h}x{w} * {itemsize}")
    arr = np.frombuffer(raw, dtype="<f4" if dtype == "f32le" else np.uint8)
    return arr.reshape(h, w)


def _check_raster(payload_field, where: str) -> None:
    if payload_field is None:
        return
    try:
        decode_raster(payload_field)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad raster in {where}: {exc}") from exc


def validate_message(msg) -> dict:
    """Grammar check; raises ProtocolError on violation, returns the message."""
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    mtype = msg.get("type")
    if mtype not in SERVER_TYPES and mtype not in CLIENT_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    seq = msg.get("seq")
    if not isinstance(seq, int) or seq < 0:
        raise ProtocolError(f"seq must be a non-negative integer, got {seq!r}")
    payload = msg.get("payload")
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be a JSON object")
    if mtype == "BATCH_SNAPSHOT":
        if "batch_index" not in payload:
            raise ProtocolError("BATCH_SNAPSHOT needs batch_index")
        _check_raster(payload.get("eyy"), "BATCH_SNAPSHOT.eyy")
        _check_raster(payload.get("valid"), "BATCH_SNAPSHOT.valid")
    elif mtype == "SET_ROI":
        rect = payload.get("rect")
        if not (isinstance(rect, list) and len(rect) == 4):
            raise ProtocolError("SET_ROI needs rect [x0, y0, width, height]")
    elif mtype == "HELLO" and "protocol_version" not in payload:
        raise ProtocolError("HELLO needs protocol_version")
    elif mtype == "RUN_ENDED" and "status" not in payload:
        raise ProtocolError("RUN_ENDED needs status")
    return msg


def encode_envelope(mtype: str, seq: int, payload: dict) -> bytes:
    """The JSON envelope alone, without transport framing."""
    body = json.dumps(
        {"type": mtype, "seq": seq, "payload": payload}, separators=(",", ":")
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(f"message of {len(body)} bytes exceeds the frame limit")
    return body


def encode_message(mtype: str, seq: int, payload: dict) -> bytes:
    """A full length-prefixed wire frame."""
    body = encode_envelope(mtype, seq, payload)
    return struct.pack("<I", len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message body: {exc}") from exc
    return validate_message(msg)


class FrameReader:
    """Incremental length-prefixed frame parser over a recv() callable."""

    def __init__(self, recv):
        self._recv = recv

    def _read_exact(self, n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            chunk = self._recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def read_message(self) -> dict | None:
        header = self._read_exact(4)
        if header is None:
            return None
        (length,) = struct.unpack("<I", header)
        if length > MAX_FRAME_BYTES:
            raise ProtocolError(f"frame length {length} exceeds the limit")
        body = self._read_exact(length)
        if body is None:
            return None
        return decode_body(body)
