"""Binary wire protocol, little-endian throughout.

Request:  u32 version | u32 prompt byte length | prompt UTF-8
          | u32 n | u32 h | u32 w | n*h*w*3 float32 pixels
          (image-major, row-major, RGB, values in [0, 1])
Response: u32 version | f32 loss | n*h*w*3 float32 gradients
          (same ordering as the request pixels)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1


class MalformedRequest(ValueError):
    """Request bytes do not parse as a loss request."""


@dataclass(frozen=True)
class LossRequest:
    version: int
    prompt: str
    pixels: np.ndarray  # (n, h, w, 3) float32


def decode_request(body: bytes) -> LossRequest:
    try:
        version, prompt_len = struct.unpack_from("<II", body, 0)
        prompt = body[8:8 + prompt_len].decode("utf-8")
        offset = 8 + prompt_len
        n, h, w = struct.unpack_from("<III", body, offset)
        offset += 12
        count = n * h * w * 3
        if offset + 4 * count != len(body):
            raise MalformedRequest(
                f"pixel payload is {len(body) - offset} bytes, "
                f"expected {4 * count}")
        pixels = np.frombuffer(body, dtype="<f4", count=count,
                               offset=offset).reshape(n, h, w, 3)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise MalformedRequest(str(exc)) from exc
    return LossRequest(version=version, prompt=prompt, pixels=pixels)


def encode_response(loss: float, grads: np.ndarray,
                    version: int = PROTOCOL_VERSION) -> bytes:
    grads = np.ascontiguousarray(grads, dtype="<f4")
    return (struct.pack("<I", version) + struct.pack("<f", float(loss))
            + grads.tobytes())


def encode_request(prompt: str, pixels: np.ndarray,
                   version: int = PROTOCOL_VERSION) -> bytes:
    """Client-side encoder, used by tests to build request bodies."""
    pixels = np.ascontiguousarray(pixels, dtype="<f4")
    n, h, w, c = pixels.shape
    if c != 3:
        raise ValueError("pixels must be (n, h, w, 3)")
    prompt_bytes = prompt.encode("utf-8")
    return (struct.pack("<II", version, len(prompt_bytes)) + prompt_bytes
            + struct.pack("<III", n, h, w) + pixels.tobytes())
