"""Minimal in-process echo service for wire-protocol tests.

Parses request bytes with ``struct`` directly, independent of the client
codec, so a symmetric encode/decode bug in the client cannot hide here.
"""

import struct
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

PROTOCOL_VERSION = 1


def parse_request(body: bytes):
    version, prompt_len = struct.unpack_from("<II", body, 0)
    prompt = body[8:8 + prompt_len].decode("utf-8")
    off = 8 + prompt_len
    n, h, w = struct.unpack_from("<III", body, off)
    off += 12
    count = n * h * w * 3
    pixels = np.frombuffer(body, dtype="<f4", count=count, offset=off)
    if off + count * 4 != len(body):
        raise ValueError("trailing bytes in request")
    return version, prompt, (n, h, w), pixels


def echo_response(version: int, pixels: np.ndarray) -> bytes:
    loss = np.float32(np.float64(pixels).mean())
    grads = np.full(pixels.size, 1.0 / pixels.size, dtype="<f4")
    return struct.pack("<I", version) + struct.pack("<f", loss) + grads.tobytes()


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        server = self.server
        if server.fail_next_requests > 0:
            server.fail_next_requests -= 1
            self.connection.close()
            return
        body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        try:
            version, prompt, shape, pixels = parse_request(body)
        except Exception as exc:  # malformed body
            self.send_error(400, str(exc))
            return
        if version != PROTOCOL_VERSION:
            self.send_error(409, f"protocol {version} unsupported")
            return
        if self.path != "/v1/echo":
            self.send_error(404, "stub only serves /v1/echo")
            return
        out_version = server.respond_with_version
        payload = echo_response(out_version, pixels)
        self.send_response(200)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@contextmanager
def run_echo_stub(fail_next_requests: int = 0,
                  respond_with_version: int = PROTOCOL_VERSION):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.fail_next_requests = fail_next_requests
    server.respond_with_version = respond_with_version
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}"
    finally:
        server.shutdown()
        thread.join(timeout=5)
