"""Client side of the bridge: connect, handshake, and predict remotely."""

from __future__ import annotations

import socket

import numpy as np

from aspectedit.predictors import AttentionMapRef, PredictionResult

from . import protocol

DEFAULT_TIMEOUT = 30.0


class BridgeClient:
    """One serial connection to a bridge endpoint ('host:port')."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        host, _, port = endpoint.partition(":")
        if not port:
            raise protocol.ProtocolError(f"endpoint {endpoint!r} is not host:port")
        self.timeout = timeout
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        except (OSError, socket.timeout) as exc:
            raise protocol.BridgeTimeoutError(
                f"cannot reach bridge at {endpoint}: {exc}"
            ) from exc
        self._file = self._sock.makefile("rwb")
        self._next_id = 0
        self.concurrent_safe = False
        self._handshake()

    def _send(self, doc: dict) -> dict:
        msg_id = doc["id"]
        try:
            self._file.write(protocol.encode_message(doc))
            self._file.flush()
            line = self._file.readline()
        except (OSError, socket.timeout) as exc:
            raise protocol.BridgeTimeoutError(f"bridge timed out: {exc}") from exc
        if not line:
            raise protocol.ProtocolError("bridge closed the connection")
        reply = protocol.decode_message(line)
        if reply["id"] != msg_id:
            raise protocol.ProtocolError(
                f"reply id {reply['id']} does not match request id {msg_id}"
            )
        if reply["op"] == protocol.OP_ERROR:
            reason = reply.get("error", {}).get("reason", "unspecified")
            raise protocol.ProtocolError(f"bridge error: {reason}")
        return reply

    def _take_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _handshake(self) -> None:
        reply = self._send(protocol.hello_message(self._take_id()))
        if reply["op"] != protocol.OP_HELLO or reply.get("version") != protocol.PROTOCOL_VERSION:
            raise protocol.ProtocolError(f"handshake failed: {reply}")
        self.concurrent_safe = bool(reply.get("concurrent_safe", False))

    def predict(self, latent, t: int, cond: str | None, guidance: float = 1.0):
        reply = self._send(
            protocol.predict_message(self._take_id(), latent, t, cond, guidance)
        )
        if reply["op"] != protocol.OP_RESULT or "epsilon" not in reply:
            raise protocol.ProtocolError(f"unexpected reply: {reply['op']}")
        epsilon = protocol.unpack_tensor(reply["epsilon"])
        attn = tuple(
            AttentionMapRef(token_index=item["token"], grid=protocol.unpack_tensor(item["map"]))
            for item in reply.get("attn", ())
        )
        return epsilon, attn

    def close(self) -> None:
        self._file.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def predict_remote(endpoint: str, z_t, t: int, cond: str | None, guidance: float,
                   timeout: float = DEFAULT_TIMEOUT) -> PredictionResult:
    """One-shot remote prediction satisfying the predictor result contract."""
    with BridgeClient(endpoint, timeout=timeout) as client:
        epsilon, attn = client.predict(z_t, t, cond, guidance)
    return PredictionResult(epsilon=epsilon, token_maps=attn)


class RemotePredictor:
    """Predictor-protocol facade over a persistent bridge connection.

    Raw (guidance-free) predictions are requested so the engine's own
    guidance combination applies unchanged.
    """

    def __init__(self, endpoint: str, schedule=None, timeout: float = DEFAULT_TIMEOUT):
        self.client = BridgeClient(endpoint, timeout=timeout)
        self.schedule = schedule
        self.concurrent_safe = self.client.concurrent_safe

    def predict(self, z_t, t: int, cond) -> PredictionResult:
        text = cond.prompt if cond is not None else None
        z_t = np.asarray(z_t)
        epsilon, attn = self.client.predict(z_t, t, text, guidance=1.0)
        return PredictionResult(epsilon=epsilon.reshape(z_t.shape), token_maps=attn)

    def close(self) -> None:
        self.client.close()
