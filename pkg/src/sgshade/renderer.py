"""Closed-form shading of camera rays and image assembly.

Per hit point, the reflected radiance integral is evaluated entirely
through SG products and full-sphere closed-form integrals:

* the clamped cosine is approximated by one broad SG minus a constant
  offset (its value is ~1 along the normal, ~0 at the horizon and
  negative below it, which suppresses below-horizon light);
* the specular NDF lobe in the half-vector domain is warped into the
  incident domain around the mirror direction, with sharpness divided by
  4 (h . v) evaluated at the lobe center;
* each light lobe contributes max(0, integral) for the diffuse and the
  specular term separately, so radiance stays non-negative and exactly
  linear in every lobe amplitude.

Everything is written against :mod:`sgshade.diffmath` dispatch helpers:
with plain arrays this is the fast forward renderer, with tape-tracked
values the same code differentiates with respect to all style and light
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .appearance import (
    MaterialEdit,
    StyleParameters,
    normal_features,
    normal_offsets,
    normal_to_angles,
    roughness_to_sharpness,
    shaded_normal,
    svbrdf_features,
    svbrdf_heads,
)
from .geometry import Camera, HitBatch, RayHit, TriangleMesh, camera_rays, cast_rays
from .lighting import EnvironmentMap, render_equirect
from .sg import SphericalGaussian, integral_coeff, product_shape

__all__ = [
    "COSINE_SG_SHARPNESS",
    "COSINE_SG_AMPLITUDE",
    "COSINE_SG_OFFSET",
    "RenderedView",
    "ViewSample",
    "cosine_sg",
    "specular_lobe",
    "shade_components",
    "shade_ray",
    "sample_view",
    "shade_view",
    "render_view",
    "relight",
    "edit_material",
    "export_components",
    "tonemap",
    "light_lobe_values",
    "BACKGROUNDS",
]

# One-lobe approximation of the cosine: v . n ~= A * G(v; n, L) - OFFSET.
# Endpoints: 1.0077 along the normal, -0.0065 at the horizon.
COSINE_SG_SHARPNESS = 0.0315
COSINE_SG_AMPLITUDE = 32.7080
COSINE_SG_OFFSET = 31.7003

GRAZING_EPS = 1e-4     # lower clamp of n . v inside the specular warp
F0 = 0.04              # Fresnel reflectance at normal incidence
GAMMA = 1.0 / 2.2
TONEMAP_FLOOR = 1e-12  # keeps the gamma curve's gradient finite at black

BACKGROUNDS = {"white": 1.0, "black": 0.0}


@dataclass(frozen=True)
class RenderedView:
    """Tone-mapped image in [0, 1], hit mask, and the generating camera.
    ``linear`` (optional) holds pre-tonemap radiance with zero background.
    """

    image: np.ndarray
    mask: np.ndarray
    camera: Camera
    linear: np.ndarray | None = None


@dataclass(frozen=True)
class ViewSample:
    """Raycast of one camera: fixed geometry reused across iterations."""

    camera: Camera
    dirs: np.ndarray       # (H*W, 3) unit ray directions
    hits: HitBatch

    @property
    def hit_rows(self) -> np.ndarray:
        return np.flatnonzero(self.hits.mask)


def sample_view(mesh: TriangleMesh, camera: Camera) -> ViewSample:
    origins, dirs = camera_rays(camera)
    return ViewSample(camera=camera, dirs=dirs,
                      hits=cast_rays(mesh, origins, dirs))


def tonemap(channel):
    """clamp to [0, 1] then gamma 1/2.2. The tiny floor keeps the power
    law's slope finite; it maps to zero in any 8-bit output."""
    return dm.clamp(channel, TONEMAP_FLOOR, 1.0) ** GAMMA


# ---------------------------------------------------------------------------
# single-lobe helpers (public, numpy in / numpy out)


def cosine_sg(normal) -> tuple[SphericalGaussian, float]:
    """The cosine-approximation lobe about ``normal`` and its offset."""
    lobe = SphericalGaussian(np.asarray(normal, dtype=np.float64),
                             COSINE_SG_SHARPNESS,
                             np.full(3, COSINE_SG_AMPLITUDE))
    return lobe, COSINE_SG_OFFSET


def fresnel_shadowing(cos_nv, roughness):
    """Schlick Fresnel times the height-correlated Smith factor with the
    4 cos^2 denominator absorbed, all evaluated at the mirror direction."""
    c = dm.clamp(cos_nv, GRAZING_EPS, 1.0)
    k = (roughness + 1.0) * (roughness + 1.0) * 0.125
    denom = c * (1.0 - k) + k
    fresnel = F0 + (1.0 - F0) * (1.0 - c) ** 5
    return fresnel / (4.0 * denom * denom)


def specular_lobe(view_dir, normal, sharpness, amplitude,
                  roughness) -> SphericalGaussian:
    """Warp the half-vector NDF lobe into the incident-light domain.

    ``view_dir`` points from the surface toward the camera. The returned
    lobe sits on the mirror direction with sharpness divided by 4 (h . v)
    at the lobe center (where h = n), and amplitude scaled by the
    Fresnel-shadowing factor.
    """
    v = np.asarray(view_dir, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    c = float(np.clip(v @ n, GRAZING_EPS, 1.0))
    axis = 2.0 * c * n - v
    axis = axis / np.linalg.norm(axis)
    m_p = float(dm.value_of(fresnel_shadowing(v @ n, roughness)))
    return SphericalGaussian(axis, float(sharpness) / (4.0 * c),
                             m_p * np.asarray(amplitude, dtype=np.float64))


# ---------------------------------------------------------------------------
# batched shading core


def light_lobe_values(axis_raw, sharpness_raw, amplitude_raw):
    """Per-lobe (axis comps, sharpness, amp channels); value-likes in,
    value-likes out, shapes (1,) so they broadcast against ray batches."""
    count = dm.value_of(sharpness_raw).shape[0]
    lobes = []
    for k in range(count):
        row = dm.take_rows(axis_raw, np.array([k]))
        axis = dm.normalize([dm.column(row, 0), dm.column(row, 1),
                             dm.column(row, 2)])
        lam = dm.softplus(dm.take_rows(sharpness_raw, np.array([k])))
        amp_row = dm.take_rows(amplitude_raw, np.array([k]))
        amp = [dm.softplus(dm.column(amp_row, c)) for c in range(3)]
        lobes.append((axis, lam, amp))
    return lobes


def _apply_material_edit(heads: dict, edit: MaterialEdit | None,
                         roughness_min: float) -> dict:
    if edit is None:
        return heads
    out = dict(heads)
    if edit.roughness is not None:
        out["roughness"] = np.full_like(dm.value_of(heads["roughness"]),
                                        edit.roughness)
    elif edit.roughness_scale is not None:
        out["roughness"] = dm.clamp(heads["roughness"] * edit.roughness_scale,
                                    roughness_min, 1.0)
    if edit.specular is not None:
        ref = dm.value_of(heads["specular"][0])
        out["specular"] = [np.full_like(ref, edit.specular) for _ in range(3)]
    elif edit.specular_scale is not None:
        out["specular"] = [dm.clamp(ch * edit.specular_scale, 0.0, 1.0)
                           for ch in heads["specular"]]
    return out


def shade_components(nhat, to_camera, diffuse_albedo, specular_amp,
                     roughness, light_lobes, use_specular: bool = True):
    """Per-lobe closed-form shading given raw material values.

    ``nhat``/``to_camera`` are 3-lists of batched components,
    ``diffuse_albedo``/``specular_amp`` 3-lists of channels, ``roughness``
    a batched column. Returns (diffuse, specular) channel lists of
    pre-tonemap radiance; every per-lobe term is clamped at zero, keeping
    radiance non-negative and exactly linear in each lobe amplitude.
    """
    v = to_camera
    inv_pi = 1.0 / np.pi
    f_d = [diffuse_albedo[c] * inv_pi for c in range(3)]

    if use_specular:
        lam_j = roughness_to_sharpness(roughness)
        cos_nv = dm.dot(nhat, v)
        # back-facing shading normals keep diffuse, drop specular
        front = (dm.value_of(cos_nv) > 0.0).astype(np.float64)
        c = dm.clamp(cos_nv, GRAZING_EPS, 1.0)
        m_p = fresnel_shadowing(cos_nv, roughness)
        warp_axis = dm.normalize([2.0 * c * nhat[i] - v[i] for i in range(3)])
        warp_lam = lam_j / (4.0 * c)
        warp_amp = [m_p * specular_amp[ch] * front for ch in range(3)]

    diffuse = [0.0, 0.0, 0.0]
    specular = [0.0, 0.0, 0.0]
    for mu_k, lam_k, amp_k in light_lobes:
        # diffuse: integral(L * C) - offset * integral(L), per unit amplitude
        _, lam_dc, scale_dc = product_shape(mu_k, lam_k, nhat,
                                            COSINE_SG_SHARPNESS)
        bracket = (scale_dc * integral_coeff(lam_dc) * COSINE_SG_AMPLITUDE
                   - COSINE_SG_OFFSET * integral_coeff(lam_k))
        for ch in range(3):
            diffuse[ch] = diffuse[ch] + f_d[ch] * dm.maximum(
                amp_k[ch] * bracket, 0.0)

        if use_specular:
            # specular: P = L x warped lobe, then the same cosine bracket
            mu_p, lam_p, scale_p = product_shape(mu_k, lam_k,
                                                 warp_axis, warp_lam)
            _, lam_pc, scale_pc = product_shape(mu_p, lam_p, nhat,
                                                COSINE_SG_SHARPNESS)
            bracket_s = scale_p * (
                scale_pc * integral_coeff(lam_pc) * COSINE_SG_AMPLITUDE
                - COSINE_SG_OFFSET * integral_coeff(lam_p))
            for ch in range(3):
                specular[ch] = specular[ch] + dm.maximum(
                    amp_k[ch] * warp_amp[ch] * bracket_s, 0.0)
    return diffuse, specular


def shade_hits(points: np.ndarray, geo_normals: np.ndarray,
               to_camera: np.ndarray, style: StyleParameters, params: dict,
               light_lobes: list, features: tuple | None = None,
               want_components: bool = False) -> dict:
    """Radiance of a batch of surface points, pre-tonemap.

    ``to_camera`` holds unit vectors from the surface toward the viewer.
    ``params`` maps parameter names to arrays or tape values;
    ``light_lobes`` comes from :func:`light_lobe_values`. Returns
    per-channel column lists under 'rgb' (and 'diffuse'/'specular'
    components plus the shading normal when requested).
    """
    cfg = style.config
    if features is None:
        theta, phi = normal_to_angles(geo_normals)
        features = (
            svbrdf_features(style, points),
            normal_features(style, points, theta, phi)
            if cfg.use_normal_net else None,
            theta, phi,
        )
    feats_sv, feats_nm, theta, phi = features

    heads = svbrdf_heads(feats_sv, params, cfg)
    heads = _apply_material_edit(heads, style.material_edit, cfg.roughness_min)

    if cfg.use_normal_net:
        d_theta, d_phi = normal_offsets(feats_nm, params)
        nhat = shaded_normal(theta, phi, d_theta, d_phi)
    else:
        nhat = [geo_normals[:, 0], geo_normals[:, 1], geo_normals[:, 2]]

    v = [to_camera[:, 0], to_camera[:, 1], to_camera[:, 2]]
    diffuse, specular = shade_components(
        nhat, v, heads["diffuse"],
        heads.get("specular"), heads.get("roughness"), light_lobes,
        use_specular=cfg.use_specular)

    use_spec = cfg.use_specular
    rgb = [diffuse[ch] + specular[ch] for ch in range(3)] if use_spec else diffuse
    out = {"rgb": rgb}
    if want_components:
        out["diffuse"] = diffuse
        out["specular"] = specular if use_spec else [0.0, 0.0, 0.0]
        out["normal"] = nhat
        out["heads"] = heads
    return out


def shade_ray(hit: RayHit, ray_dir, style: StyleParameters,
              env: EnvironmentMap | None = None) -> np.ndarray:
    """Pre-tonemap radiance of one hit; ``ray_dir`` is the camera-ray
    direction (camera toward surface)."""
    env = env if env is not None else style.env
    lobes = light_lobe_values(env.axis_raw, env.sharpness_raw,
                               env.amplitude_raw)
    to_cam = -np.asarray(ray_dir, dtype=np.float64).reshape(1, 3)
    shaded = shade_hits(hit.point.reshape(1, 3), hit.normal.reshape(1, 3),
                        to_cam, style, style.params, lobes)
    return np.array([float(dm.value_of(c)[0]) for c in shaded["rgb"]])


# ---------------------------------------------------------------------------
# image assembly


def shade_view(view: ViewSample, style: StyleParameters, params: dict,
               light_lobes: list, background: str = "white",
               features: tuple | None = None):
    """Shade one raycast view into a (H, W, 3) display-space image.

    Returns (image value-like, mask). Keeps the whole chain on the tape
    when ``params``/``light_lobes`` are tracked.
    """
    cam = view.camera
    h, w = cam.height, cam.width
    bg = BACKGROUNDS[background] if isinstance(background, str) else float(background)
    rows = view.hit_rows
    if len(rows) == 0:
        return np.full((h, w, 3), bg), np.zeros((h, w), dtype=bool)

    hits = view.hits
    shaded = shade_hits(hits.points[rows], hits.normals[rows],
                        -view.dirs[rows], style, params, light_lobes,
                        features=features)
    display = [tonemap(c) for c in shaded["rgb"]]
    grid = dm.transpose2d(dm.stack_values(display))        # (B, 3)
    flat = dm.scatter_rows(grid, rows, h * w, np.full(3, bg))
    image = dm.reshape(flat, (h, w, 3))
    return image, hits.mask.reshape(h, w)


def render_view(camera: Camera, mesh: TriangleMesh, style: StyleParameters,
                env: EnvironmentMap | None = None, background: str = "white",
                keep_linear: bool = False) -> RenderedView:
    """Forward render: cast, shade, tonemap, composite background."""
    view = sample_view(mesh, camera)
    env = env if env is not None else style.env
    lobes = light_lobe_values(env.axis_raw, env.sharpness_raw,
                               env.amplitude_raw)
    image, mask = shade_view(view, style, style.params, lobes,
                             background=background)
    image = dm.value_of(image)

    linear = None
    if keep_linear:
        rows = view.hit_rows
        linear = np.zeros((camera.height * camera.width, 3))
        if len(rows):
            shaded = shade_hits(view.hits.points[rows], view.hits.normals[rows],
                                -view.dirs[rows], style, style.params, lobes)
            linear[rows] = np.stack([dm.value_of(c) for c in shaded["rgb"]],
                                    axis=1)
        linear = linear.reshape(camera.height, camera.width, 3)
    return RenderedView(image=image, mask=mask, camera=camera, linear=linear)


def relight(mesh: TriangleMesh, style: StyleParameters,
            new_env: EnvironmentMap, cameras: list[Camera],
            background: str = "white",
            keep_linear: bool = False) -> list[RenderedView]:
    """Re-render a trained style under replacement lighting."""
    return [render_view(cam, mesh, style, env=new_env, background=background,
                        keep_linear=keep_linear) for cam in cameras]


def edit_material(style: StyleParameters, roughness: float | None = None,
                  specular: float | None = None,
                  roughness_scale: float | None = None,
                  specular_scale: float | None = None) -> StyleParameters:
    """Style copy with post-network overrides of the specular channels."""
    if not style.config.use_specular:
        raise ValueError("style was trained without a specular term")
    edit = MaterialEdit(roughness=roughness, roughness_scale=roughness_scale,
                        specular=specular, specular_scale=specular_scale)
    edit.validate(style.config.roughness_min)
    out = style.copy()
    out.material_edit = edit
    return out


def export_components(mesh: TriangleMesh, style: StyleParameters,
                      env: EnvironmentMap | None, camera: Camera,
                      background: str = "white") -> dict[str, np.ndarray]:
    """Disentangled per-pixel channel maps sharing the render's mask.

    Keys: render, normal ((n+1)/2), diffuse, roughness, specular, envmap,
    mask. All are display-ready [0, 1] arrays.
    """
    env = env if env is not None else style.env
    view = sample_view(mesh, camera)
    lobes = light_lobe_values(env.axis_raw, env.sharpness_raw,
                               env.amplitude_raw)
    image, mask = shade_view(view, style, style.params, lobes,
                             background=background)

    h, w = camera.height, camera.width
    bg = BACKGROUNDS[background]
    rows = view.hit_rows

    def sheet(cols3):
        flat = np.full((h * w, 3), bg)
        if len(rows):
            flat[rows] = np.stack([np.broadcast_to(dm.value_of(c), rows.shape)
                                   for c in cols3], axis=1)
        return flat.reshape(h, w, 3)

    out = {"render": dm.value_of(image),
           "mask": mask.astype(np.float64),
           "envmap": np.clip(render_equirect(env), 0.0, 1.0) ** GAMMA}
    for key in ("normal", "diffuse", "specular", "roughness"):
        out[key] = np.full((h, w, 3), bg)
    if len(rows):
        shaded = shade_hits(view.hits.points[rows], view.hits.normals[rows],
                            -view.dirs[rows], style, style.params, lobes,
                            want_components=True)
        nhat = shaded["normal"]
        out["normal"] = sheet([(nhat[i] + 1.0) * 0.5 for i in range(3)])
        out["diffuse"] = sheet(shaded["heads"]["diffuse"])
        if style.config.use_specular:
            out["specular"] = sheet(shaded["heads"]["specular"])
            r = shaded["heads"]["roughness"]
            out["roughness"] = sheet([r, r, r])
    return out
