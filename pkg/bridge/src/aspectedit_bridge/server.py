"""Bridge responder: serve an adapter over stdio or a TCP socket.

Messages are processed serially per connection; an adapter exception
produces an error message with the request id and keeps the connection
alive.
"""

from __future__ import annotations

import argparse
import socketserver
import sys
import threading

from aspectedit.predictors import load_world
from aspectedit.schedules import build_schedule

from . import protocol
from .adapters import EchoAdapter, GmmAdapter


def _handle_line(adapter, line: bytes | str) -> dict:
    try:
        msg = protocol.decode_message(line)
    except protocol.ProtocolError as exc:
        return protocol.error_message(-1, str(exc))
    msg_id = msg["id"]
    op = msg["op"]
    if op == protocol.OP_HELLO:
        return protocol.hello_message(
            msg_id, getattr(adapter, "concurrent_safe", False)
        )
    if op != protocol.OP_PREDICT:
        return protocol.error_message(msg_id, f"unsupported op {op!r}")
    try:
        latent = protocol.unpack_tensor(msg["latent"])
        epsilon, attn = adapter.predict(
            latent, int(msg["t"]), msg.get("cond"), float(msg.get("guidance", 1.0))
        )
        return protocol.result_message(msg_id, epsilon, attn)
    except Exception as exc:
        return protocol.error_message(msg_id, f"{type(exc).__name__}: {exc}")


def serve_stdio(adapter, stdin=None, stdout=None) -> None:
    """Answer messages on stdin until it closes."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(protocol.encode_message(_handle_line(adapter, line)))
        stdout.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            reply = _handle_line(self.server.adapter, line)
            self.wfile.write(protocol.encode_message(reply))
            self.wfile.flush()


class BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, adapter):
        super().__init__(address, _Handler)
        self.adapter = adapter


def serve_tcp(adapter, host: str = "127.0.0.1", port: int = 0) -> BridgeServer:
    """Start a TCP responder in a background thread; caller shuts it down."""
    server = BridgeServer((host, port), adapter)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def serve(adapter, transport: str = "stdio"):
    """Serve over 'stdio' or a 'host:port' TCP address (blocking)."""
    if transport == "stdio":
        serve_stdio(adapter)
        return None
    host, _, port = transport.partition(":")
    server = BridgeServer((host or "127.0.0.1", int(port or 0)), adapter)
    server.serve_forever()
    return server


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aspectedit-bridge", description=__doc__)
    parser.add_argument("--adapter", choices=["echo", "gmm"], default="echo")
    parser.add_argument("--world", help="analytic-world config (gmm adapter)")
    parser.add_argument("--schedule", choices=["linear", "cosine"], default="linear")
    parser.add_argument("--timesteps", type=int, default=1000)
    parser.add_argument("--transport", default="stdio", help="'stdio' or host:port")
    args = parser.parse_args(argv)
    if args.adapter == "gmm":
        if not args.world:
            parser.error("--adapter gmm requires --world")
        with open(args.world) as fh:
            world = load_world(fh.read())
        adapter = GmmAdapter(world, build_schedule(args.schedule, args.timesteps))
    else:
        adapter = EchoAdapter()
    serve(adapter, args.transport)
    return 0


if __name__ == "__main__":
    sys.exit(main())
