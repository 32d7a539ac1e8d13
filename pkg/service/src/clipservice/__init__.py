"""Embedding-loss service: CLIP-backed text-image loss with pixel
gradients, served over a raw binary HTTP protocol."""

from .app import create_app
from .model import ClipLossModel, ModelUnavailable
from .protocol import (
    PROTOCOL_VERSION,
    MalformedRequest,
    decode_request,
    encode_request,
    encode_response,
)

__version__ = "0.1.0"

__all__ = [
    "create_app",
    "ClipLossModel",
    "ModelUnavailable",
    "PROTOCOL_VERSION",
    "MalformedRequest",
    "decode_request",
    "encode_request",
    "encode_response",
    "__version__",
]
