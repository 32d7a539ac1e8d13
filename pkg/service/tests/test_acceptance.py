"""Service-side acceptance: gradient fidelity, determinism, and wire
conformance with the renderer package's client."""

import threading
import time

import numpy as np
import pytest
import uvicorn

from clipservice.app import create_app
from clipservice.model import ClipLossModel


def report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def live_server():
    """A real uvicorn server, so conformance covers actual HTTP."""
    app = create_app(model_spec="random-tiny")
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    for _ in range(100):
        if server.started:
            break
        time.sleep(0.05)
    host, port = server.servers[0].sockets[0].getsockname()[:2]
    yield f"http://{host}:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def probe_gradients(model, prompt, pixels, h):
    """5-pixel finite-difference probe: two forward calls against the
    returned analytic gradients. Returns (rel err, loss, deterministic)."""
    loss, grads = model.loss_and_grads(prompt, pixels)
    picks = np.argsort(np.abs(grads).ravel())[-5:]
    direction = np.zeros(grads.size)
    direction[picks] = 1.0
    direction = direction.reshape(grads.shape)
    up, _ = model.loss_and_grads(
        prompt, np.clip(pixels + h * direction, 0, 1).astype(np.float32))
    down, _ = model.loss_and_grads(
        prompt, np.clip(pixels - h * direction, 0, 1).astype(np.float32))
    fd = (up - down) / (2 * h)
    analytic = float(grads.ravel()[picks].sum())
    rel = abs(analytic - fd) / max(1e-9, abs(fd))
    again, grads2 = model.loss_and_grads(prompt, pixels)
    return rel, loss, loss == again and np.array_equal(grads, grads2)


class TestServiceAcceptance:
    def test_gradient_fidelity_offline_backbone(self):
        # The untrained backbone's directional signal (~2.5e-4) sits near
        # the float32 loss quantization at a 1e-3 step, so the probe step
        # widens to 1e-2 here; the pretrained test below keeps 1e-3.
        model = ClipLossModel("random-tiny")
        rng = np.random.default_rng(3)
        pixels = rng.uniform(0.1, 0.9, size=(1, 224, 224, 3)).astype(np.float32)
        rel, loss, deterministic = probe_gradients(
            model, "a brushed steel kettle", pixels, h=1e-2)
        report("service gradient fidelity (offline backbone)",
               rel < 1e-2 and -1.0 <= loss <= 1.0 and deterministic,
               f"5-pixel probe rel err {rel:.2e} (< 1e-2), loss {loss:.4f} "
               f"in [-1, 1], deterministic: {deterministic}")

    def test_gradient_fidelity_pretrained(self):
        from clipservice.model import ModelUnavailable
        try:
            model = ClipLossModel("openai/clip-vit-base-patch32")
        except ModelUnavailable as exc:
            pytest.skip(f"pretrained weights unavailable here: {exc}")
        rng = np.random.default_rng(3)
        pixels = rng.uniform(0.1, 0.9, size=(1, 224, 224, 3)).astype(np.float32)
        rel, loss, deterministic = probe_gradients(
            model, "a shoe made of gold", pixels, h=1e-3)
        report("service gradient fidelity (pretrained)",
               rel < 1e-2 and -1.0 <= loss <= 1.0 and deterministic,
               f"5-pixel probe rel err {rel:.2e} (< 1e-2), loss {loss:.4f} "
               f"in [-1, 1], deterministic: {deterministic}")

    def test_wire_conformance_with_renderer_client(self, live_server):
        sgshade_opt = pytest.importorskip(
            "sgshade.optimization",
            reason="renderer package not installed alongside the service")
        rng = np.random.default_rng(11)
        images = rng.uniform(size=(2, 224, 224, 3))

        echo_client = sgshade_opt.RemoteEmbeddingLoss.echo(live_server)
        loss, grads = echo_client(images)
        pix32 = images.astype("<f4")
        expected_loss = np.float32(np.float64(pix32.ravel()).mean())
        expected_grad = np.float64(np.float32(1.0 / pix32.size))
        echo_ok = (np.float32(loss) == expected_loss
                   and grads.shape == images.shape
                   and (grads == expected_grad).all())

        loss_client = sgshade_opt.RemoteEmbeddingLoss(live_server,
                                                      "a pewter goblet")
        value, g = loss_client(images)
        loss_ok = -1.0 <= value <= 1.0 and g.shape == images.shape \
            and np.isfinite(g).all()
        report("wire conformance with renderer client",
               echo_ok and loss_ok,
               f"echo bit-exact: {echo_ok}, /v1/loss over live HTTP: "
               f"loss {value:.4f}, grads {g.shape}")
