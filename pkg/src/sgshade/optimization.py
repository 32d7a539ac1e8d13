"""Training loop and its building blocks.

Loss providers hide where gradients come from: the in-process
image-target loss differentiates mean squared error analytically, the
remote provider ships pixel batches to an embedding service over a raw
binary protocol and receives d(loss)/d(pixel) back. Either way the
provider returns per-pixel gradients that seed the reverse sweep of the
render tape, so the rest of the loop never branches on the loss kind.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import requests

from . import diffmath as dm
from .appearance import AppearanceConfig, StyleParameters, init_style
from .geometry import Camera, TriangleMesh, sample_cameras
from .imageio import write_png

__all__ = [
    "PROTOCOL_VERSION",
    "NumericError",
    "RemoteServiceError",
    "ProtocolMismatchError",
    "AdamWState",
    "adamw_step",
    "learning_rate_at",
    "cosine_loss",
    "image_target_loss",
    "crop_augment",
    "bilinear_resize",
    "ImageTargetLoss",
    "RemoteEmbeddingLoss",
    "encode_loss_request",
    "decode_loss_response",
    "TrainConfig",
    "TextPromptObjective",
    "ImageTargetObjective",
    "TrainResult",
    "train",
    "write_log_csv",
]

PROTOCOL_VERSION = 1


class NumericError(RuntimeError):
    """Optimization hit a non-finite value; carries the iteration index."""


class RemoteServiceError(RuntimeError):
    """The embedding service is unreachable or returned garbage."""


class ProtocolMismatchError(RemoteServiceError):
    """Wire protocol version disagreement between client and service."""


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 1e-2) -> np.ndarray:
    """Decoupled-weight-decay Adam; returns the updated parameter and
    advances ``state`` in place."""
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in optimizer step")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return param - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)


def learning_rate_at(iteration: int, base_lr: float = 5e-4,
                     decay: float = 0.7, every: int = 500) -> float:
    return base_lr * decay ** (iteration // every)


# ---------------------------------------------------------------------------
# losses


def cosine_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Negative cosine similarity of two embedding vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine loss is undefined for zero-norm vectors")
    return float(-(a @ b) / (na * nb))


def image_target_loss(images: np.ndarray, targets: np.ndarray):
    """Mean squared error over all pixels with its analytic gradient."""
    images = np.asarray(images, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if images.shape != targets.shape:
        raise ValueError(f"shape mismatch: {images.shape} vs {targets.shape}")
    diff = images - targets
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


# ---------------------------------------------------------------------------
# differentiable crops


def _bilinear_weights(y0: float, x0: float, side: int, src_h: int, src_w: int,
                      out_size: int):
    """Corner indices and weights resampling a (side x side) window of an
    (src_h x src_w) image onto an out_size grid, pixel-center convention."""
    coords = (np.arange(out_size) + 0.5) * (side / out_size) - 0.5
    ys = np.clip(coords + y0, 0.0, src_h - 1.0)
    xs = np.clip(coords + x0, 0.0, src_w - 1.0)
    yl = np.floor(ys).astype(np.intp)
    xl = np.floor(xs).astype(np.intp)
    yh = np.minimum(yl + 1, src_h - 1)
    xh = np.minimum(xl + 1, src_w - 1)
    fy = (ys - yl)[:, None]
    fx = (xs - xl)[None, :]

    idx = []
    wts = []
    for yy, wy in ((yl, 1.0 - fy), (yh, fy)):
        for xx, wx in ((xl, 1.0 - fx), (xh, fx)):
            idx.append((yy[:, None] * src_w + xx[None, :]).ravel())
            wts.append((wy * wx).ravel()[:, None])
    return idx, wts


def _resample(image, idx, wts, out_size: int):
    h, w = dm.value_of(image).shape[:2]
    flat = dm.reshape(image, (h * w, 3))
    acc = 0.0
    for i, wt in zip(idx, wts):
        acc = acc + wt * dm.take_rows(flat, i)
    return dm.reshape(acc, (out_size, out_size, 3))


def bilinear_resize(image, out_size: int = 224):
    """Differentiable square resize of an (H, W, 3) value-like."""
    h, w = dm.value_of(image).shape[:2]
    side = min(h, w)
    idx, wts = _bilinear_weights(0.0, 0.0, side, h, w, out_size)
    return _resample(image, idx, wts, out_size)


def crop_augment(image, n: int, scale_range: tuple[float, float],
                 rng: np.random.Generator, out_size: int = 224):
    """n random square crops, bilinearly resized to out_size.

    Gradients route back to the source pixels through the bilinear
    weights. Returns a stacked (n, out_size, out_size, 3) value-like.
    """
    lo, hi = scale_range
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError("crop scale range must satisfy 0 < lo <= hi <= 1")
    h, w = dm.value_of(image).shape[:2]
    if h < out_size * lo or w < out_size * lo:
        raise ValueError(
            f"image {h}x{w} too small for {out_size} crops at scale {lo}")
    side_min = min(h, w)
    crops = []
    for _ in range(n):
        scale = rng.uniform(lo, hi)
        side = int(round(scale * side_min))
        side = max(2, min(side, side_min))
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
        idx, wts = _bilinear_weights(float(y0), float(x0), side, h, w, out_size)
        crops.append(_resample(image, idx, wts, out_size))
    return dm.stack_values(crops)


# ---------------------------------------------------------------------------
# loss providers


class ImageTargetLoss:
    """MSE against fixed target views; in-process analytic gradients."""

    def __init__(self, targets: np.ndarray):
        self.targets = np.asarray(targets, dtype=np.float64)

    def __call__(self, images: np.ndarray):
        return image_target_loss(images, self.targets)


def encode_loss_request(prompt: str, pixels: np.ndarray) -> bytes:
    """version u32 | prompt length u32 + UTF-8 | n,h,w u32 | f32 pixels.

    Everything little-endian; pixels image-major, row-major, RGB, [0, 1].
    """
    pixels = np.ascontiguousarray(pixels, dtype="<f4")
    n, h, w, c = pixels.shape
    if c != 3:
        raise ValueError("pixels must be (n, h, w, 3)")
    prompt_bytes = prompt.encode("utf-8")
    head = np.array([PROTOCOL_VERSION, len(prompt_bytes)], dtype="<u4").tobytes()
    dims = np.array([n, h, w], dtype="<u4").tobytes()
    return head + prompt_bytes + dims + pixels.tobytes()


def decode_loss_response(body: bytes, shape: tuple) -> tuple[float, np.ndarray]:
    n, h, w = shape
    expect = 4 + 4 + n * h * w * 3 * 4
    if len(body) != expect:
        raise RemoteServiceError(
            f"response size {len(body)} != expected {expect}")
    version = int(np.frombuffer(body, dtype="<u4", count=1)[0])
    if version != PROTOCOL_VERSION:
        raise ProtocolMismatchError(
            f"service speaks protocol {version}, client {PROTOCOL_VERSION}")
    loss = float(np.frombuffer(body, dtype="<f4", count=1, offset=4)[0])
    grads = np.frombuffer(body, dtype="<f4", count=n * h * w * 3,
                          offset=8).reshape(n, h, w, 3)
    return loss, grads.astype(np.float64)


class RemoteEmbeddingLoss:
    """Client for the embedding-loss service.

    POSTs the pixel batch to ``{endpoint}{route}`` and returns
    (loss, pixel gradients). Requests are idempotent, so transient
    transport failures are retried.
    """

    def __init__(self, endpoint: str, prompt: str, route: str = "/v1/loss",
                 timeout: float = 120.0, retries: int = 2,
                 retry_wait: float = 0.5):
        self.endpoint = endpoint.rstrip("/")
        self.prompt = prompt
        self.route = route
        self.timeout = timeout
        self.retries = retries
        self.retry_wait = retry_wait

    @classmethod
    def echo(cls, endpoint: str, **kwargs) -> "RemoteEmbeddingLoss":
        """Protocol-conformance client against the model-free echo route."""
        return cls(endpoint, prompt="", route="/v1/echo", **kwargs)

    def __call__(self, images: np.ndarray):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[3] != 3:
            raise ValueError("expected an (n, h, w, 3) image batch")
        payload = encode_loss_request(self.prompt, images)
        body = self._post(payload)
        loss, grads = decode_loss_response(body, images.shape[:3])
        if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
            raise RemoteServiceError("service returned non-finite values")
        return loss, grads

    def _post(self, payload: bytes) -> bytes:
        url = self.endpoint + self.route
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    url, data=payload, timeout=self.timeout,
                    headers={"Content-Type": "application/octet-stream"})
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                time.sleep(self.retry_wait * (attempt + 1))
                continue
            if resp.status_code == 409:
                raise ProtocolMismatchError(resp.text)
            if resp.status_code != 200:
                raise RemoteServiceError(
                    f"service returned HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.content
        raise RemoteServiceError(f"service unreachable at {url}: {last}")


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1500
    views_per_iter: int = 5
    crops_per_view: int = 4
    crop_scale: tuple[float, float] = (0.5, 0.99)
    learning_rate: float = 5e-4
    lr_decay: float = 0.7
    lr_decay_every: int = 500
    weight_decay: float = 1e-2
    image_height: int = 224
    image_width: int = 224
    camera_anchor: tuple[float, float, float] = (0.0, 0.0, 1.0)
    camera_radius: float = 2.0
    camera_sigma: float = 0.3
    fov_deg: float = 45.0
    background: str = "alternate"   # white | black | alternate per iteration
    seed: int = 0
    snapshot_every: int = 0
    snapshot_dir: str | None = None
    include_uncropped: bool = True

    def validate(self) -> None:
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("crop scale range must satisfy 0 < lo <= hi <= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.views_per_iter < 1 or self.crops_per_view < 0:
            raise ValueError("view count must be positive, crop count >= 0")
        if self.crops_per_view == 0 and not self.include_uncropped:
            raise ValueError("nothing to encode: no crops and no full image")
        if self.background not in ("white", "black", "alternate"):
            raise ValueError("background must be white, black or alternate")


@dataclass(frozen=True)
class TextPromptObjective:
    prompt: str
    endpoint: str
    route: str = "/v1/loss"   # "/v1/echo" exercises transport without a model


@dataclass(frozen=True)
class ImageTargetObjective:
    cameras: list[Camera]
    images: list[np.ndarray]
    background: str = "white"


@dataclass
class TrainResult:
    style: StyleParameters
    log: list[tuple[int, float, float, float]]  # (iter, loss, lr, seconds)


def _background_for(config: TrainConfig, iteration: int) -> str:
    if config.background == "alternate":
        return "white" if iteration % 2 == 0 else "black"
    return config.background


def train(mesh: TriangleMesh, objective, config: TrainConfig,
          style: StyleParameters | None = None,
          appearance: AppearanceConfig | None = None,
          progress=None) -> TrainResult:
    """Optimize style parameters on a normalized mesh.

    ``objective`` selects the loss: a :class:`TextPromptObjective` renders
    sampled views, crop-augments them and queries the remote embedding
    service; an :class:`ImageTargetObjective` renders its fixed cameras
    and matches the given target images. Aborts with
    :class:`NumericError` if the loss goes non-finite.
    """
    from . import renderer  # renderer imports appearance; keep import lazy

    config.validate()
    rng = np.random.default_rng(config.seed)
    if style is None:
        style = init_style(appearance or AppearanceConfig(), rng)

    image_mode = isinstance(objective, ImageTargetObjective)
    if image_mode:
        if len(objective.cameras) != len(objective.images):
            raise ValueError("one target image per camera required")
        batch = _BatchedViews.build(mesh, objective, style, renderer)
        provider = ImageTargetLoss(batch.targets)
    else:
        provider = RemoteEmbeddingLoss(objective.endpoint, objective.prompt,
                                       route=objective.route)

    opt_state = {k: AdamWState.zeros_like(v) for k, v in style.params.items()}
    log: list[tuple[int, float, float, float]] = []

    for it in range(config.iterations):
        t0 = time.perf_counter()
        lr = learning_rate_at(it, config.learning_rate, config.lr_decay,
                              config.lr_decay_every)

        tape = dm.Tape()
        lifted = {k: tape.lift(v, trainable=True)
                  for k, v in style.params.items()}
        lobes = renderer.light_lobe_values(lifted["light.axis_raw"],
                                            lifted["light.sharpness_raw"],
                                            lifted["light.amplitude_raw"])

        if image_mode:
            output = batch.shade(style, lifted, lobes, renderer)
        else:
            bg = _background_for(config, it)
            cams = sample_cameras(config.camera_anchor, config.camera_radius,
                                  config.camera_sigma, config.views_per_iter,
                                  rng, fov_deg=config.fov_deg,
                                  height=config.image_height,
                                  width=config.image_width)
            pieces = []
            for cam in cams:
                view = renderer.sample_view(mesh, cam)
                image, _ = renderer.shade_view(view, style, lifted, lobes,
                                               background=bg)
                if config.include_uncropped:
                    pieces.append(bilinear_resize(image))
                if config.crops_per_view:
                    crops = crop_augment(image, config.crops_per_view,
                                         config.crop_scale, rng)
                    pieces.extend(dm.take_rows(crops, np.array([i]))
                                  for i in range(config.crops_per_view))
            output = _restack(pieces)

        if not isinstance(output, dm.DiffValue):
            raise NumericError(
                f"no camera ray hit the mesh at iteration {it}")
        loss, pixel_grads = provider(dm.value_of(output))
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {it}")
        grads = dm.backward(tape, output, seed=pixel_grads)

        for (name, value), grad in zip(list(style.params.items()), grads):
            try:
                style.params[name] = adamw_step(
                    value, grad, opt_state[name], lr=lr,
                    weight_decay=config.weight_decay)
            except NumericError as exc:
                raise NumericError(f"{exc} (iteration {it}, {name})") from exc
        _reproject_light_axes(style)

        log.append((it, float(loss), lr, time.perf_counter() - t0))
        if progress is not None:
            progress(it, float(loss), lr)
        if (config.snapshot_every and config.snapshot_dir
                and (it + 1) % config.snapshot_every == 0):
            _write_snapshot(mesh, style, config, it)

    return TrainResult(style=style, log=log)


def _restack(pieces):
    """Stack a list of (1, h, w, 3) / (h, w, 3) values into (n, h, w, 3)."""
    flat = []
    for p in pieces:
        v = dm.value_of(p)
        flat.append(dm.reshape(p, v.shape[1:]) if v.ndim == 4 else p)
    return dm.stack_values(flat)


@dataclass
class _BatchedViews:
    """All target views fused into one shading batch.

    Raycasts and network input features are fixed across iterations, so
    they are built once; every iteration is then a single shade call over
    the concatenated hit rays, scattered back into the (V, H, W, 3) stack.
    """

    points: np.ndarray
    normals: np.ndarray
    to_camera: np.ndarray
    features: tuple
    rows: np.ndarray          # into the flattened (V * H * W) image stack
    shape: tuple              # (V, H, W)
    background: float
    targets: np.ndarray

    @classmethod
    def build(cls, mesh, objective: "ImageTargetObjective", style, renderer):
        from .appearance import normal_features, normal_to_angles, svbrdf_features
        from .renderer import BACKGROUNDS

        h = objective.cameras[0].height
        w = objective.cameras[0].width
        points, normals, to_cam, rows = [], [], [], []
        for i, cam in enumerate(objective.cameras):
            if (cam.height, cam.width) != (h, w):
                raise ValueError("all target cameras must share one size")
            view = renderer.sample_view(mesh, cam)
            r = view.hit_rows
            points.append(view.hits.points[r])
            normals.append(view.hits.normals[r])
            to_cam.append(-view.dirs[r])
            rows.append(r + i * h * w)
        points = np.concatenate(points)
        normals = np.concatenate(normals)
        theta, phi = normal_to_angles(normals)
        feats = (svbrdf_features(style, points),
                 normal_features(style, points, theta, phi)
                 if style.config.use_normal_net else None,
                 theta, phi)
        return cls(points=points, normals=normals,
                   to_camera=np.concatenate(to_cam), features=feats,
                   rows=np.concatenate(rows),
                   shape=(len(objective.cameras), h, w),
                   background=BACKGROUNDS[objective.background],
                   targets=np.stack([np.asarray(im, dtype=np.float64)
                                     for im in objective.images]))

    def shade(self, style, params, lobes, renderer):
        shaded = renderer.shade_hits(self.points, self.normals,
                                     self.to_camera, style, params, lobes,
                                     features=self.features)
        display = [renderer.tonemap(c) for c in shaded["rgb"]]
        grid = dm.transpose2d(dm.stack_values(display))
        v, h, w = self.shape
        flat = dm.scatter_rows(grid, self.rows, v * h * w,
                               np.full(3, self.background))
        return dm.reshape(flat, (v, h, w, 3))


def _reproject_light_axes(style: StyleParameters) -> None:
    axes = style.params["light.axis_raw"]
    style.params["light.axis_raw"] = axes / np.linalg.norm(
        axes, axis=1, keepdims=True)


def _write_snapshot(mesh, style, config: TrainConfig, iteration: int) -> None:
    from pathlib import Path

    from . import renderer

    cam = Camera(position=np.asarray(config.camera_anchor, dtype=np.float64)
                 / np.linalg.norm(config.camera_anchor) * config.camera_radius,
                 fov_deg=config.fov_deg, height=config.image_height,
                 width=config.image_width)
    shot = renderer.render_view(cam, mesh, style, background="white")
    out = Path(config.snapshot_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / f"snapshot_{iteration + 1:05d}.png", shot.image)


def write_log_csv(log, path) -> None:
    with open(path, "w") as f:
        f.write("iter,loss,lr,seconds\n")
        for it, loss, lr, seconds in log:
            f.write(f"{it},{loss:.10g},{lr:.10g},{seconds:.4f}\n")
