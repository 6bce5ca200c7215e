"""Length-prefixed binary wire protocol for tile streaming.

Every frame is a 4-byte big-endian unsigned payload length followed by
the payload. The payload starts with a 1-byte frame type:

    0x01 HELLO  body: UTF-8 JSON.
                Client -> server: {"batch_size": int, "seed": int?}.
                Server -> client: {"magic": "MDNTTILE", "version": 1,
                "batch_size": int, "seed": int, "tile_size": int}.
    0x02 NEXT   empty body; client requests one batch (pull-based).
    0x03 BATCH  body: 4-byte big-endian tile count, then per tile a
                4-byte big-endian metadata length, the metadata (UTF-8
                JSON: dataset, slide_id, x, y, mpp, width, height,
                tile_index, hed_alpha, hed_beta), and raw RGB8
                row-major pixels (width * height * 3 bytes).
    0x7F ERROR  body: UTF-8 JSON {"code": str, "message": str}.
"""
from __future__ import annotations

import json
import socket

from .errors import ProtocolError, StreamClosed
from .pipeline import TileBatch, decode_records, encode_record

HELLO = 0x01
NEXT = 0x02
BATCH = 0x03
ERROR = 0x7F

SERVER_MAGIC = "MDNTTILE"
PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 30


def write_frame(sock: socket.socket, frame_type: int, body: bytes = b"") -> None:
    payload = bytes([frame_type]) + body
    sock.sendall(len(payload).to_bytes(4, "big") + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise StreamClosed("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket):
    """Read one frame; returns (frame_type, body)."""
    header = _recv_exact(sock, 4)
    length = int.from_bytes(header, "big")
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    payload = _recv_exact(sock, length)
    return payload[0], payload[1:]


def encode_batch(batch: TileBatch) -> bytes:
    parts = [len(batch).to_bytes(4, "big")]
    parts.extend(encode_record(rec) for rec in batch.records)
    return b"".join(parts)


def decode_batch(body: bytes):
    """Decode a BATCH body into a list of (meta, pixels) pairs."""
    if len(body) < 4:
        raise ProtocolError("BATCH body shorter than its count field")
    count = int.from_bytes(body[:4], "big")
    try:
        records, offset = decode_records(body, 4, count)
    except Exception as exc:  # noqa: BLE001 - any parse failure is protocol-level
        raise ProtocolError(f"cannot parse BATCH body: {exc}")
    if offset != len(body):
        raise ProtocolError("trailing bytes after BATCH records")
    return records


def encode_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_json(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON body: {exc}")
    if not isinstance(obj, dict):
        raise ProtocolError("JSON body must be an object")
    return obj
