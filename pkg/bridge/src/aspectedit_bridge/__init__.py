"""Wire-protocol bridge between the editing engine and external noise predictors."""

from .adapters import EchoAdapter, GmmAdapter
from .client import BridgeClient, RemotePredictor, predict_remote
from .protocol import PROTOCOL_VERSION, BridgeTimeoutError, ProtocolError
from .server import BridgeServer, serve, serve_stdio, serve_tcp

__all__ = [
    "PROTOCOL_VERSION",
    "BridgeClient",
    "BridgeServer",
    "BridgeTimeoutError",
    "EchoAdapter",
    "GmmAdapter",
    "ProtocolError",
    "RemotePredictor",
    "predict_remote",
    "serve",
    "serve_stdio",
    "serve_tcp",
]
