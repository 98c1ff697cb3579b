"""Newline-delimited JSON message protocol for remote noise prediction.

One JSON document per line.  Tensors travel as a shape list plus base64
of their little-endian 32-bit float bytes, so any finite tensor
round-trips bit-exactly at 32-bit precision.
"""

from __future__ import annotations

import json

import numpy as np

from aspectedit.errors import BackendError
from aspectedit.latents import decode_f32, encode_f32

PROTOCOL_VERSION = 1

OP_HELLO = "hello"
OP_PREDICT = "predict"
OP_RESULT = "result"
OP_ERROR = "error"


class ProtocolError(BackendError):
    """The peer sent a message that violates the wire protocol."""


class BridgeTimeoutError(BackendError):
    """The peer did not answer within the configured timeout."""


def pack_tensor(arr) -> dict:
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "data": encode_f32(arr)}


def unpack_tensor(doc: dict) -> np.ndarray:
    if not isinstance(doc, dict) or "shape" not in doc or "data" not in doc:
        raise ProtocolError("tensor payload needs 'shape' and 'data'")
    return decode_f32(doc["data"], shape=tuple(doc["shape"]))


def hello_message(msg_id: int, concurrent_safe: bool = False) -> dict:
    return {
        "op": OP_HELLO,
        "id": msg_id,
        "version": PROTOCOL_VERSION,
        "concurrent_safe": concurrent_safe,
    }


def predict_message(msg_id: int, latent, t: int, cond: str | None, guidance: float) -> dict:
    return {
        "op": OP_PREDICT,
        "id": msg_id,
        "latent": pack_tensor(latent),
        "t": int(t),
        "cond": cond,
        "guidance": float(guidance),
    }


def result_message(msg_id: int, epsilon, attn=()) -> dict:
    doc = {"op": OP_RESULT, "id": msg_id, "epsilon": pack_tensor(epsilon)}
    if attn:
        doc["attn"] = [
            {"token": int(token), "map": pack_tensor(grid)} for token, grid in attn
        ]
    return doc


def error_message(msg_id: int, reason: str) -> dict:
    return {"op": OP_ERROR, "id": msg_id, "error": {"reason": reason}}


def encode_message(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "op" not in doc or "id" not in doc:
        raise ProtocolError("message needs 'op' and 'id'")
    return doc
