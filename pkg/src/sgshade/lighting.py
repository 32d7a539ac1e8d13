"""Environment illumination as a trainable mixture of spherical Gaussians.

Constraints are enforced by reparameterization: sharpness and amplitudes
live as softplus pre-images, lobe axes as free 3-vectors that are
re-projected to unit norm after every optimizer step (and normalized with
a guarded norm inside every forward pass). Arbitrary optimizer updates
therefore cannot leave the valid domain.

Equirectangular convention, fixed for file round-trips: pixel (row, col)
of an H x W map has v = (row + 0.5) / H, u = (col + 0.5) / W, colatitude
phi = pi * v measured from +Y (row 0 is the +Y pole), longitude
theta = 2 * pi * u, and direction
(sin(phi) * cos(theta), cos(phi), sin(phi) * sin(theta)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffmath as dm
from .sg import SphericalGaussian, integral_coeff, sg_energy

__all__ = [
    "EnvironmentMap",
    "init_envmap",
    "eval_envmap",
    "total_energy",
    "fit_envmap_from_image",
    "equirect_directions",
    "render_equirect",
    "save_lobes_text",
    "load_lobes_text",
]

DEFAULT_TOTAL_ENERGY = 6.25


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inv_softplus(y: np.ndarray) -> np.ndarray:
    """Pre-image of softplus; stable for big y where softplus(x) ~= x."""
    y = np.asarray(y, dtype=np.float64)
    small = y < 20.0
    # the 1e-300 floor maps y = 0 to a deeply negative (but finite) raw
    y_small = np.where(small, np.maximum(y, 1e-300), 1.0)
    y_big = np.where(small, 20.0, y)
    return np.where(small, np.log(np.expm1(y_small)),
                    y_big + np.log1p(-np.exp(-y_big)))


@dataclass
class EnvironmentMap:
    """K light lobes in reparameterized storage.

    ``trainable_*`` flags let fitting freeze individual blocks; the
    optimizer only sees blocks whose flag is set.
    """

    axis_raw: np.ndarray        # (K, 3)
    sharpness_raw: np.ndarray   # (K,)  softplus pre-image
    amplitude_raw: np.ndarray   # (K, 3) softplus pre-image
    trainable_axes: bool = True
    trainable_sharpness: bool = True
    trainable_amplitudes: bool = True

    def __post_init__(self):
        self.axis_raw = np.asarray(self.axis_raw, dtype=np.float64).reshape(-1, 3)
        k = len(self.axis_raw)
        self.sharpness_raw = np.asarray(self.sharpness_raw,
                                        dtype=np.float64).reshape(k)
        self.amplitude_raw = np.asarray(self.amplitude_raw,
                                        dtype=np.float64).reshape(k, 3)

    @property
    def num_lobes(self) -> int:
        return len(self.axis_raw)

    @property
    def lobes(self) -> list[SphericalGaussian]:
        axes = self.axis_raw / np.linalg.norm(self.axis_raw, axis=1,
                                              keepdims=True)
        lam = softplus(self.sharpness_raw)
        amp = softplus(self.amplitude_raw)
        return [SphericalGaussian(axes[k], lam[k], amp[k])
                for k in range(self.num_lobes)]

    @classmethod
    def from_lobes(cls, lobes: list[SphericalGaussian]) -> "EnvironmentMap":
        return cls(
            axis_raw=np.stack([g.lobe_axis for g in lobes]),
            sharpness_raw=inv_softplus(np.array([g.sharpness for g in lobes])),
            amplitude_raw=inv_softplus(np.stack([g.amplitude for g in lobes])),
        )

    def reproject_axes(self) -> None:
        """Pull raw axes back onto the unit sphere (optimizer barrier)."""
        self.axis_raw /= np.linalg.norm(self.axis_raw, axis=1, keepdims=True)

    def scaled(self, factor: float) -> "EnvironmentMap":
        """New map with every amplitude multiplied by ``factor``."""
        amp = softplus(self.amplitude_raw) * float(factor)
        return replace(self, amplitude_raw=inv_softplus(amp))


def fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden * i
    return np.stack([r * np.cos(theta), z, r * np.sin(theta)], axis=1)


def init_envmap(num_lobes: int, total_energy: float = DEFAULT_TOTAL_ENERGY,
                rng: np.random.Generator | None = None) -> EnvironmentMap:
    """Quasi-uniform axes, equal sharpness K/2, near-white amplitudes
    (10% jitter) rescaled so the summed lobe energies hit ``total_energy``
    exactly."""
    if num_lobes < 1:
        raise ValueError("need at least one lobe")
    rng = rng or np.random.default_rng(0)
    axes = fibonacci_sphere(num_lobes)
    lam = max(num_lobes / 2.0, 0.5)
    amp = np.ones((num_lobes, 3)) * rng.uniform(0.9, 1.1, size=(num_lobes, 3))
    # per-lobe channel-mean energy: coeff(lam) * mean(amp_k)
    current = float(integral_coeff(lam)) * float(amp.mean(axis=1).sum())
    amp *= total_energy / current
    return EnvironmentMap(
        axis_raw=axes,
        sharpness_raw=inv_softplus(np.full(num_lobes, lam)),
        amplitude_raw=inv_softplus(amp),
    )


def eval_envmap(env: EnvironmentMap, directions) -> np.ndarray:
    """Incident radiance: sum of all lobes at unit direction(s)."""
    d = np.asarray(directions, dtype=np.float64)
    single = d.ndim == 1
    d = d.reshape(-1, 3)
    axes = env.axis_raw / np.linalg.norm(env.axis_raw, axis=1, keepdims=True)
    lam = softplus(env.sharpness_raw)           # (K,)
    amp = softplus(env.amplitude_raw)           # (K, 3)
    t = d @ axes.T                              # (N, K)
    w = np.exp(lam[None, :] * (t - 1.0))        # (N, K)
    rgb = w @ amp                               # (N, 3)
    return rgb[0] if single else rgb


def total_energy(env: EnvironmentMap) -> float:
    return float(sum(sg_energy(g) for g in env.lobes))


# ---------------------------------------------------------------------------
# equirectangular rasterization


def equirect_directions(height: int, width: int) -> np.ndarray:
    """(H, W, 3) unit directions at pixel centers, +Y pole on row 0."""
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    phi = np.pi * v[:, None]
    theta = 2.0 * np.pi * u[None, :]
    sin_phi = np.sin(phi)
    return np.stack([
        np.broadcast_to(sin_phi * np.cos(theta), (height, width)),
        np.broadcast_to(np.cos(phi), (height, width)),
        np.broadcast_to(sin_phi * np.sin(theta), (height, width)),
    ], axis=-1)


def equirect_solid_angles(height: int, width: int) -> np.ndarray:
    """(H, W) pixel solid angles; sums to 4*pi."""
    v = (np.arange(height) + 0.5) / height
    w = np.sin(np.pi * v) * (np.pi / height) * (2.0 * np.pi / width)
    return np.broadcast_to(w[:, None], (height, width)).copy()


def render_equirect(env: EnvironmentMap, height: int = 128,
                    width: int = 256) -> np.ndarray:
    dirs = equirect_directions(height, width).reshape(-1, 3)
    return eval_envmap(env, dirs).reshape(height, width, 3)


# ---------------------------------------------------------------------------
# text export: one lobe per line "mux muy muz lambda ar ag ab"


def save_lobes_text(env: EnvironmentMap, path) -> None:
    lines = []
    for g in env.lobes:
        fields = list(g.lobe_axis) + [g.sharpness] + list(g.amplitude)
        lines.append(" ".join(f"{x:.17g}" for x in fields))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_lobes_text(path) -> EnvironmentMap:
    lobes = []
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(tok) for tok in line.split()]
            if len(vals) != 7:
                raise ValueError(f"{path}: expected 7 numbers per lobe line")
            lobes.append(SphericalGaussian(vals[0:3], vals[3], vals[4:7]))
    if not lobes:
        raise ValueError(f"{path}: no lobes found")
    return EnvironmentMap.from_lobes(lobes)


# ---------------------------------------------------------------------------
# fitting a map to an equirectangular radiance image


def fit_envmap_from_image(image: np.ndarray, num_lobes: int,
                          iterations: int = 1200, lr: float = 5e-2,
                          rng: np.random.Generator | None = None,
                          max_pixels: int = 4096) -> tuple[EnvironmentMap, float]:
    """Fit lobes to a latitude-longitude radiance image.

    Minimizes the solid-angle-weighted squared error with AdamW starting
    from :func:`init_envmap`. Returns (fitted map, absolute RMSE over the
    weighted pixels). Large images are subsampled to ``max_pixels``.
    """
    from .optimization import AdamWState, adamw_step  # circular at import time

    if num_lobes < 1:
        raise ValueError("need at least one lobe")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) radiance image")
    if not np.all(np.isfinite(image)):
        raise ValueError("radiance image contains non-finite pixels")

    h, w = image.shape[:2]
    stride = max(1, int(np.ceil(np.sqrt(h * w / max_pixels))))
    img = image[::stride, ::stride]
    dirs = equirect_directions(h, w)[::stride, ::stride].reshape(-1, 3)
    weights = equirect_solid_angles(h, w)[::stride, ::stride].reshape(-1)
    weights = weights / weights.sum()
    target = img.reshape(-1, 3)

    rng = rng or np.random.default_rng(0)
    env = init_envmap(num_lobes, rng=rng)
    # brightness pre-match speeds convergence a lot
    mean_target = float((weights[:, None] * target).sum())
    mean_init = float((weights[:, None] * eval_envmap(env, dirs)).sum())
    if mean_init > 0 and mean_target > 0:
        env = env.scaled(mean_target / mean_init)

    params = {
        "axis": env.axis_raw.copy(),
        "sharpness": env.sharpness_raw.copy(),
        "amplitude": env.amplitude_raw.copy(),
    }
    state = {k: AdamWState.zeros_like(v) for k, v in params.items()}

    for _ in range(iterations):
        tape = dm.Tape()
        lifted = {k: tape.lift(v, trainable=True) for k, v in params.items()}
        pred_cols = _eval_lobes_diff(lifted, dirs)
        loss = 0.0
        for c in range(3):
            r = pred_cols[c] - target[:, c]
            loss = loss + dm.vsum(weights * r * r)
        grads = dm.backward(tape, loss)
        for (name, value), grad in zip(params.items(), grads):
            params[name] = adamw_step(value, grad, state[name], lr=lr,
                                      weight_decay=0.0)
        params["axis"] /= np.linalg.norm(params["axis"], axis=1, keepdims=True)

    fitted = EnvironmentMap(params["axis"], params["sharpness"],
                            params["amplitude"])
    residual = eval_envmap(fitted, dirs) - target
    rmse = float(np.sqrt((weights[:, None] * residual**2).sum() / 3.0))
    return fitted, rmse


def _eval_lobes_diff(lifted: dict, dirs: np.ndarray) -> list:
    """Differentiable per-channel radiance of the lobe mixture at ``dirs``."""
    k = dm.value_of(lifted["sharpness"]).shape[0]
    cols = [0.0, 0.0, 0.0]
    for i in range(k):
        row = dm.take_rows(lifted["axis"], np.array([i]))
        axis = dm.normalize([dm.column(row, 0), dm.column(row, 1),
                             dm.column(row, 2)])
        lam = dm.softplus(dm.take_rows(lifted["sharpness"], np.array([i])))
        amp_row = dm.take_rows(lifted["amplitude"], np.array([i]))
        t = axis[0] * dirs[:, 0] + axis[1] * dirs[:, 1] + axis[2] * dirs[:, 2]
        wgt = dm.exp(lam * (t - 1.0))
        for c in range(3):
            cols[c] = cols[c] + wgt * dm.softplus(dm.column(amp_row, c))
    return cols
