"""Learnable appearance fields.

Two coordinate MLPs drive the look of the surface: a normal-offset
network that perturbs face normals in spherical angles (bounded by
tanh to (-pi/4, pi/4) per component) and an SVBRDF network with two
shared layers feeding three exclusive heads for diffuse albedo, specular
amplitude and roughness, each squashed into (0, 1). Inputs go through a
Fourier-feature positional encoding; a random Gaussian matrix by default,
a deterministic frequency ladder or a raw passthrough when ablated.

Forward code is written against :mod:`sgshade.diffmath` dispatch helpers
and therefore runs identically on plain arrays (inference) and on
tape-tracked values (training).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffmath as dm
from .lighting import DEFAULT_TOTAL_ENERGY, EnvironmentMap, init_envmap

__all__ = [
    "PositionalEncoding",
    "AppearanceConfig",
    "MaterialEdit",
    "StyleParameters",
    "init_style",
    "save_style",
    "load_style",
    "symmetry_prior",
    "positional_encode",
    "predict_svbrdf",
    "predict_normal",
    "roughness_to_sharpness",
    "normal_to_angles",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
ANGLE_MARGIN = 1e-4          # open-interval clamp margin for (theta, phi)
OFFSET_BOUND = np.pi / 4.0   # tanh scaling of the normal offsets


# ---------------------------------------------------------------------------
# positional encoding


@dataclass(frozen=True)
class PositionalEncoding:
    """beta(l) = [cos(2 pi B l), sin(2 pi B l)]; identity when B is None.

    B is fixed at initialization and never trained.
    """

    matrix: np.ndarray | None  # (k, d) or None for passthrough

    @classmethod
    def gaussian(cls, input_dim: int, features: int, sigma: float,
                 rng: np.random.Generator) -> "PositionalEncoding":
        return cls(matrix=rng.normal(0.0, sigma, size=(features, input_dim)))

    @classmethod
    def ladder(cls, input_dim: int, max_freq: int) -> "PositionalEncoding":
        """Deterministic integer frequencies 1..N per input dimension,
        frequency-major."""
        rows = []
        for f in range(1, max_freq + 1):
            for i in range(input_dim):
                row = np.zeros(input_dim)
                row[i] = f
                rows.append(row)
        return cls(matrix=np.array(rows))

    @classmethod
    def identity(cls) -> "PositionalEncoding":
        return cls(matrix=None)

    @property
    def output_dim(self) -> int | None:
        return None if self.matrix is None else 2 * len(self.matrix)

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.matrix is None:
            return x
        z = 2.0 * np.pi * x @ self.matrix.T
        return np.concatenate([np.cos(z), np.sin(z)], axis=1)


def positional_encode(x, encoding: PositionalEncoding) -> np.ndarray:
    return encoding.encode(x)


def symmetry_prior(x, axis: str | None):
    """Mirror the chosen coordinate (|z| for 'z'); identity when None."""
    if axis is None:
        return np.asarray(x, dtype=np.float64)
    try:
        j = "xyz".index(axis)
    except ValueError:
        raise ValueError(f"symmetry axis must be one of x, y, z, got {axis!r}")
    x = np.array(x, dtype=np.float64, copy=True)
    x[..., j] = np.abs(x[..., j])
    return x


def roughness_to_sharpness(r):
    """Specular lobe sharpness 2 / r^2: r in [0.01, 1] spans [2, 20000]."""
    return 2.0 / (r * r)


# ---------------------------------------------------------------------------
# configuration and parameters


@dataclass(frozen=True)
class AppearanceConfig:
    hidden_width: int = 256
    svbrdf_pe_features: int = 128
    svbrdf_pe_sigma: float = 12.0
    normal_pe_features: int = 64
    normal_pe_sigma: float = 4.0
    use_specular: bool = True        # off: diffuse-only shading
    use_normal_net: bool = True
    use_svbrdf_pe: bool = True
    use_normal_pe: bool = True
    symmetry_axis: str | None = None
    roughness_min: float = 0.01
    num_lights: int = 32

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class MaterialEdit:
    """Post-network override of the specular channels, applied right
    before lobe construction."""

    roughness: float | None = None
    roughness_scale: float | None = None
    specular: float | None = None
    specular_scale: float | None = None

    def validate(self, roughness_min: float) -> None:
        if self.roughness is not None and not (roughness_min <= self.roughness <= 1.0):
            raise ValueError(f"roughness override must lie in [{roughness_min}, 1]")
        if self.specular is not None and not (0.0 <= self.specular <= 1.0):
            raise ValueError("specular override must lie in [0, 1]")
        for s in (self.roughness_scale, self.specular_scale):
            if s is not None and s <= 0.0:
                raise ValueError("scale overrides must be positive")


@dataclass
class StyleParameters:
    """The trainable state: network weights plus light-lobe raw blocks.

    ``params`` is insertion-ordered; lifting its values onto a tape in
    order gives the gradient layout used by the optimizer.
    """

    config: AppearanceConfig
    params: dict[str, np.ndarray]
    pe_svbrdf: PositionalEncoding
    pe_normal: PositionalEncoding
    material_edit: MaterialEdit | None = None

    @property
    def env(self) -> EnvironmentMap:
        return EnvironmentMap(self.params["light.axis_raw"],
                              self.params["light.sharpness_raw"],
                              self.params["light.amplitude_raw"])

    def set_env(self, env: EnvironmentMap) -> None:
        self.params["light.axis_raw"] = np.array(env.axis_raw)
        self.params["light.sharpness_raw"] = np.array(env.sharpness_raw)
        self.params["light.amplitude_raw"] = np.array(env.amplitude_raw)

    def copy(self) -> "StyleParameters":
        return StyleParameters(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            pe_svbrdf=self.pe_svbrdf,
            pe_normal=self.pe_normal,
            material_edit=self.material_edit,
        )


def _dense_init(rng, fan_in: int, fan_out: int, scale: float):
    return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))


def _add_mlp(params, rng, prefix: str, dims: list[int],
             zero_final: bool = False, final_gain: float = 1.0) -> None:
    for i, (fi, fo) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        if last and zero_final:
            w = np.zeros((fi, fo))
        else:
            gain = final_gain if last else np.sqrt(2.0)
            w = _dense_init(rng, fi, fo, gain)
        params[f"{prefix}.{i}.W"] = w
        params[f"{prefix}.{i}.b"] = np.zeros(fo)


def init_style(config: AppearanceConfig, rng: np.random.Generator,
               total_energy: float = DEFAULT_TOTAL_ENERGY) -> StyleParameters:
    pe_sv = (PositionalEncoding.gaussian(3, config.svbrdf_pe_features,
                                         config.svbrdf_pe_sigma, rng)
             if config.use_svbrdf_pe else PositionalEncoding.identity())
    pe_nm = (PositionalEncoding.gaussian(5, config.normal_pe_features,
                                         config.normal_pe_sigma, rng)
             if config.use_normal_pe else PositionalEncoding.identity())

    w = config.hidden_width
    sv_in = pe_sv.output_dim or 3
    nm_in = pe_nm.output_dim or 5

    params: dict[str, np.ndarray] = {}
    _add_mlp(params, rng, "svbrdf.shared", [sv_in, w, w])
    _add_mlp(params, rng, "svbrdf.diffuse", [w, w, w, 3])
    if config.use_specular:
        _add_mlp(params, rng, "svbrdf.specular", [w, w, w, 3])
        _add_mlp(params, rng, "svbrdf.roughness", [w, w, w, 1])
    if config.use_normal_net:
        # zero-initialized final layer: training starts from true geometry
        _add_mlp(params, rng, "normal", [nm_in, w, w, 2], zero_final=True)

    env = init_envmap(config.num_lights, total_energy, rng)
    params["light.axis_raw"] = env.axis_raw
    params["light.sharpness_raw"] = env.sharpness_raw
    params["light.amplitude_raw"] = env.amplitude_raw

    return StyleParameters(config=config, params=params,
                           pe_svbrdf=pe_sv, pe_normal=pe_nm)


# ---------------------------------------------------------------------------
# forward passes (generic over arrays / DiffValues)


def _silu(x):
    return x * dm.sigmoid(x)


def _mlp(h, p: dict, prefix: str, num_layers: int):
    """Hidden layers use SiLU (smooth, so finite-difference checks hold);
    the final layer is linear and squashed by the caller."""
    for i in range(num_layers):
        h = dm.matmul(h, p[f"{prefix}.{i}.W"]) + p[f"{prefix}.{i}.b"]
        if i < num_layers - 1:
            h = _silu(h)
    return h


def svbrdf_features(style: StyleParameters, points: np.ndarray) -> np.ndarray:
    pts = symmetry_prior(points, style.config.symmetry_axis)
    return style.pe_svbrdf.encode(pts)


def normal_features(style: StyleParameters, points: np.ndarray,
                    theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    pts = symmetry_prior(points, style.config.symmetry_axis)
    raw = np.concatenate([pts, theta[:, None], phi[:, None]], axis=1)
    return style.pe_normal.encode(raw)


def svbrdf_heads(feats: np.ndarray, p: dict, config: AppearanceConfig) -> dict:
    """Batched SVBRDF evaluation from precomputed features.

    Returns per-channel columns: diffuse [r, g, b], and when specular is
    enabled specular [r, g, b] plus a roughness column clamped to
    [roughness_min, 1].
    """
    shared = _silu(_mlp(feats, p, "svbrdf.shared", 2))
    out = {"diffuse": _split3(dm.sigmoid(_mlp(shared, p, "svbrdf.diffuse", 3)))}
    if config.use_specular:
        out["specular"] = _split3(dm.sigmoid(_mlp(shared, p, "svbrdf.specular", 3)))
        rough = dm.sigmoid(_mlp(shared, p, "svbrdf.roughness", 3))
        out["roughness"] = dm.clamp(dm.column(rough, 0),
                                    config.roughness_min, 1.0)
    return out


def _split3(x):
    return [dm.column(x, 0), dm.column(x, 1), dm.column(x, 2)]


def normal_to_angles(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals -> (theta in (0, 2pi), phi in (0, pi)), +Y pole."""
    n = np.atleast_2d(np.asarray(n, dtype=np.float64))
    theta = np.arctan2(n[:, 2], n[:, 0]) % (2.0 * np.pi)
    phi = np.arccos(np.clip(n[:, 1], -1.0, 1.0))
    theta = np.clip(theta, ANGLE_MARGIN, 2.0 * np.pi - ANGLE_MARGIN)
    phi = np.clip(phi, ANGLE_MARGIN, np.pi - ANGLE_MARGIN)
    return theta, phi


def normal_offsets(feats: np.ndarray, p: dict) -> tuple:
    """(delta_theta, delta_phi), each bounded to (-pi/4, pi/4)."""
    out = _mlp(feats, p, "normal", 3)
    return (OFFSET_BOUND * dm.tanh(dm.column(out, 0)),
            OFFSET_BOUND * dm.tanh(dm.column(out, 1)))


def shaded_normal(theta, phi, d_theta, d_phi):
    """Apply offsets, clamp to the open angle ranges, rebuild the vector."""
    theta_hat = dm.clamp(theta + d_theta, ANGLE_MARGIN,
                         2.0 * np.pi - ANGLE_MARGIN)
    phi_hat = dm.clamp(phi + d_phi, ANGLE_MARGIN, np.pi - ANGLE_MARGIN)
    sin_phi = dm.sin(phi_hat)
    return [sin_phi * dm.cos(theta_hat), dm.cos(phi_hat),
            sin_phi * dm.sin(theta_hat)]


# ---------------------------------------------------------------------------
# single-point conveniences (numpy in, numpy out)


def predict_svbrdf(style: StyleParameters, point) -> dict:
    """SVBRDF at one surface point: diffuse albedo (and the diffuse BRDF
    value albedo/pi), specular amplitude, roughness."""
    feats = svbrdf_features(style, np.asarray(point, dtype=np.float64).reshape(1, 3))
    heads = svbrdf_heads(feats, style.params, style.config)
    out = {
        "diffuse_albedo": np.array([float(dm.value_of(c)[0])
                                    for c in heads["diffuse"]]),
    }
    out["diffuse_brdf"] = out["diffuse_albedo"] / np.pi
    if style.config.use_specular:
        out["specular_amp"] = np.array([float(dm.value_of(c)[0])
                                        for c in heads["specular"]])
        out["roughness"] = float(dm.value_of(heads["roughness"])[0])
    return out


def predict_normal(style: StyleParameters, point, normal) -> np.ndarray:
    """Offset normal at one surface point; the geometric normal itself
    when the normal network is disabled."""
    normal = np.asarray(normal, dtype=np.float64).reshape(1, 3)
    if not style.config.use_normal_net:
        return normal[0]
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    theta, phi = normal_to_angles(normal)
    feats = normal_features(style, point, theta, phi)
    d_theta, d_phi = normal_offsets(feats, style.params)
    comps = shaded_normal(theta, phi, d_theta, d_phi)
    return np.array([float(dm.value_of(c)[0]) for c in comps])


# ---------------------------------------------------------------------------
# checkpoints


def save_style(style: StyleParameters, path) -> None:
    """Versioned binary checkpoint; round-trips bit-exactly."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(style.config),
        "config_hash": style.config.config_hash(),
        "param_names": list(style.params.keys()),
    }
    arrays = {f"param:{k}": v for k, v in style.params.items()}
    arrays["pe_svbrdf"] = (style.pe_svbrdf.matrix
                           if style.pe_svbrdf.matrix is not None else np.zeros((0, 0)))
    arrays["pe_normal"] = (style.pe_normal.matrix
                           if style.pe_normal.matrix is not None else np.zeros((0, 0)))
    with open(path, "wb") as f:
        np.savez(f, __meta__=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            **arrays)


def load_style(path) -> StyleParameters:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint format {meta['format_version']} not supported")
        config = AppearanceConfig(**meta["config"])
        params = {k: data[f"param:{k}"] for k in meta["param_names"]}
        pe_sv = data["pe_svbrdf"]
        pe_nm = data["pe_normal"]
    return StyleParameters(
        config=config,
        params=params,
        pe_svbrdf=PositionalEncoding(pe_sv if pe_sv.size else None),
        pe_normal=PositionalEncoding(pe_nm if pe_nm.size else None),
    )
