"""Pull-based streaming tile server.

Each connection negotiates a HELLO, then receives one BATCH per NEXT
request. Streams are per-connection and reproducible from their seed;
nothing is buffered beyond the batch being sent, so client pacing
bounds server memory. Foreground masks are shared across connections.
"""
from __future__ import annotations

import dataclasses
import socketserver
import threading

from . import protocol
from .errors import PathtilesError, ProtocolError, StreamClosed
from .manifest import DatasetManifest
from .pipeline import MaskCache, StreamConfig, TileStream


class _TileHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: TileServer = self.server  # type: ignore[assignment]
        sock = self.request
        try:
            frame_type, body = protocol.read_frame(sock)
            if frame_type != protocol.HELLO:
                raise ProtocolError("expected HELLO as the first frame")
            hello = protocol.decode_json(body)
            batch_size = int(hello.get("batch_size", server.config.batch_size))
            seed = int(hello.get("seed", server.config.seed))
            if batch_size < 1:
                raise ProtocolError("batch_size must be at least 1")
            config = dataclasses.replace(server.config,
                                         batch_size=batch_size, seed=seed)
            stream = TileStream(server.manifest, config,
                                mask_cache=server.mask_cache)
            protocol.write_frame(sock, protocol.HELLO, protocol.encode_json({
                "magic": protocol.SERVER_MAGIC,
                "version": protocol.PROTOCOL_VERSION,
                "batch_size": batch_size,
                "seed": seed,
                "tile_size": config.sampler.tile_size_px,
            }))
            while True:
                frame_type, _ = protocol.read_frame(sock)
                if frame_type != protocol.NEXT:
                    raise ProtocolError(f"expected NEXT, got 0x{frame_type:02x}")
                batch = stream.next_batch()
                protocol.write_frame(sock, protocol.BATCH,
                                     protocol.encode_batch(batch))
        except StreamClosed:
            pass
        except ProtocolError as exc:
            self._send_error(sock, "PROTOCOL", str(exc))
        except PathtilesError as exc:
            self._send_error(sock, type(exc).__name__, str(exc))

    @staticmethod
    def _send_error(sock, code: str, message: str) -> None:
        try:
            protocol.write_frame(sock, protocol.ERROR, protocol.encode_json(
                {"code": code, "message": message}))
        except OSError:
            pass


class TileServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str, port: int, manifest: DatasetManifest,
                 config: StreamConfig):
        self.manifest = manifest
        self.config = config
        self.mask_cache = MaskCache()
        super().__init__((host, port), _TileHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve(manifest: DatasetManifest, config: StreamConfig,
          host: str = "127.0.0.1", port: int = 0,
          ready_callback=None) -> None:
    """Run the service loop until interrupted.

    ``ready_callback(port)``, when given, fires once the socket is
    bound; with port 0 this is how callers learn the chosen port.
    """
    with TileServer(host, port, manifest, config) as server:
        if ready_callback is not None:
            ready_callback(server.port)
        server.serve_forever()


def start_background(manifest: DatasetManifest, config: StreamConfig,
                     host: str = "127.0.0.1", port: int = 0) -> TileServer:
    """Start a server on a daemon thread; caller shuts it down."""
    server = TileServer(host, port, manifest, config)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
