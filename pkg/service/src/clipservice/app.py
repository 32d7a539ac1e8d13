"""FastAPI application: binary loss endpoint, model-free echo, health."""

from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .model import IMAGE_SIZE, ClipLossModel, ModelUnavailable
from .protocol import (
    PROTOCOL_VERSION,
    MalformedRequest,
    decode_request,
    encode_response,
)

_BINARY = "application/octet-stream"


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(model_spec: str = "openai/clip-vit-base-patch32",
               device: str = "cpu", eager: bool = False) -> FastAPI:
    """Build the service; the backbone loads lazily on first /v1/loss
    unless ``eager`` is set."""
    app = FastAPI(title="clip-loss-service")
    state = {"model": None}
    lock = threading.Lock()

    def get_model() -> ClipLossModel:
        with lock:
            if state["model"] is None:
                state["model"] = ClipLossModel(model_spec, device)
            return state["model"]

    if eager:
        get_model()

    @app.get("/v1/health")
    def health():
        return {"model": model_spec, "device": device,
                "loaded": state["model"] is not None,
                "protocol": PROTOCOL_VERSION}

    @app.post("/v1/echo")
    async def echo(request: Request):
        body = await request.body()
        try:
            req = decode_request(body)
        except MalformedRequest as exc:
            return _error(400, str(exc))
        if req.version != PROTOCOL_VERSION:
            return _error(409, f"protocol {req.version} unsupported, "
                               f"service speaks {PROTOCOL_VERSION}")
        loss = np.float32(np.float64(req.pixels).mean())
        grads = np.full(req.pixels.shape, 1.0 / req.pixels.size,
                        dtype=np.float32)
        return Response(content=encode_response(loss, grads),
                        media_type=_BINARY)

    @app.post("/v1/loss")
    async def loss(request: Request):
        body = await request.body()
        try:
            req = decode_request(body)
        except MalformedRequest as exc:
            return _error(400, str(exc))
        if req.version != PROTOCOL_VERSION:
            return _error(409, f"protocol {req.version} unsupported, "
                               f"service speaks {PROTOCOL_VERSION}")
        n, h, w = req.pixels.shape[:3]
        if n < 1 or h != IMAGE_SIZE or w != IMAGE_SIZE:
            return _error(400, f"expected a non-empty batch of "
                               f"{IMAGE_SIZE}x{IMAGE_SIZE} images, "
                               f"got {n}x{h}x{w}")
        if req.pixels.min() < 0.0 or req.pixels.max() > 1.0:
            return _error(422, "pixel values must lie in [0, 1]")
        try:
            model = get_model()
            value, grads = model.loss_and_grads(req.prompt, req.pixels)
        except ModelUnavailable as exc:
            return _error(500, str(exc))
        except Exception as exc:
            return _error(500, f"model failure: {exc}")
        if not np.isfinite(value) or not np.isfinite(grads).all():
            return _error(500, "model produced non-finite values")
        return Response(content=encode_response(value, grads),
                        media_type=_BINARY)

    return app
