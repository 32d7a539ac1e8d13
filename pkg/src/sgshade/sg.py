"""Closed-form spherical-Gaussian algebra.

An SG is the spherical function a * exp(lambda * (v . mu - 1)) with unit
lobe axis mu, sharpness lambda > 0 and per-channel amplitude a >= 0. The
family is closed under pointwise products and has a closed-form integral
over the sphere, which is what makes the whole shading pipeline expressible
without sampling.

The public API operates on the ``SphericalGaussian`` dataclass with numpy
payloads. The underlying kernels (`product_shape`, `integral_coeff`) are
written against :mod:`sgshade.diffmath` dispatch helpers, so the renderer
reuses them with tape-tracked values and gradients flow through every lobe
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm

TWO_PI = 2.0 * np.pi
FOUR_PI = 4.0 * np.pi
DEGENERATE_AXIS_EPS = 1e-8

__all__ = [
    "SphericalGaussian",
    "DegenerateAxisError",
    "sg_eval",
    "sg_product",
    "sg_integral",
    "sg_inner_product",
    "sg_energy",
    "product_shape",
    "integral_coeff",
]


class DegenerateAxisError(ValueError):
    """Raised when an SG product collapses onto a zero mean axis
    (antipodal lobes of equal sharpness); the pointwise product is then a
    constant function, not an SG."""


@dataclass(frozen=True)
class SphericalGaussian:
    """One lobe: unit axis, positive sharpness, non-negative RGB amplitude."""

    lobe_axis: np.ndarray
    sharpness: float
    amplitude: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.lobe_axis, dtype=np.float64).reshape(3)
        amp = np.asarray(self.amplitude, dtype=np.float64)
        if amp.ndim == 0:
            amp = np.full(3, float(amp))
        amp = amp.reshape(3)
        object.__setattr__(self, "lobe_axis", axis)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "sharpness", float(self.sharpness))
        if abs(np.linalg.norm(axis) - 1.0) > 1e-6:
            raise ValueError(f"lobe axis must be unit length, got |mu|={np.linalg.norm(axis)}")
        if not self.sharpness > 0.0:
            raise ValueError(f"sharpness must be positive, got {self.sharpness}")
        if np.any(amp < 0.0):
            raise ValueError("amplitude components must be non-negative")


def sg_eval(g: SphericalGaussian, v) -> np.ndarray:
    """Evaluate the lobe at unit direction(s) v: a * exp(lambda*(v.mu - 1)).

    v may be (3,) or (N, 3); returns (3,) or (N, 3) accordingly.
    """
    v = np.asarray(v, dtype=np.float64)
    t = v @ g.lobe_axis  # () or (N,)
    w = np.exp(g.sharpness * (t - 1.0))
    return np.multiply.outer(w, g.amplitude) if v.ndim == 2 else w * g.amplitude


def product_shape(mu1, lam1, mu2, lam2):
    """Shape part of an SG product, amplitude-free and diff-friendly.

    mu1/mu2 are 3-sequences of scalar-likes; returns (mu, lam, scale) with
    the product amplitude being a1 * a2 * scale. Uses the guarded norm, so
    near-antipodal inputs degrade smoothly toward the constant-function
    limit instead of dividing by zero.
    """
    lam_m = lam1 + lam2
    mu_m = [(lam1 * mu1[i] + lam2 * mu2[i]) / lam_m for i in range(3)]
    nm = dm.norm(mu_m)
    mu = [mu_m[0] / nm, mu_m[1] / nm, mu_m[2] / nm]
    lam = lam_m * nm
    scale = dm.exp(lam_m * (nm - 1.0))
    return mu, lam, scale


def integral_coeff(lam):
    """Full-sphere integral of a unit-amplitude SG: 2*pi*(1-e^(-2L))/L.

    Evaluated through expm1 so small sharpness keeps full precision; the
    L -> 0 limit is 4*pi, matching the constant-function reading of a
    degenerate product.
    """
    return TWO_PI * (-dm.expm1(-2.0 * lam)) / lam


def sg_product(g1: SphericalGaussian, g2: SphericalGaussian) -> SphericalGaussian:
    """Pointwise product of two lobes, itself an SG.

    Raises :class:`DegenerateAxisError` when the weighted mean axis
    vanishes; callers that only need the integral should use
    :func:`sg_inner_product`, which absorbs that case.
    """
    lam_m = g1.sharpness + g2.sharpness
    mu_m = (g1.sharpness * g1.lobe_axis + g2.sharpness * g2.lobe_axis) / lam_m
    nm = np.linalg.norm(mu_m)
    if nm < DEGENERATE_AXIS_EPS:
        raise DegenerateAxisError(
            "antipodal lobes of equal sharpness have no product axis")
    return SphericalGaussian(
        lobe_axis=mu_m / nm,
        sharpness=lam_m * nm,
        amplitude=g1.amplitude * g2.amplitude * np.exp(lam_m * (nm - 1.0)),
    )


def sg_integral(g: SphericalGaussian) -> np.ndarray:
    """Integral of the lobe over the whole sphere, per channel."""
    return g.amplitude * integral_coeff(g.sharpness)


def sg_inner_product(g1: SphericalGaussian, g2: SphericalGaussian) -> np.ndarray:
    """Integral of the pointwise product over the sphere, per channel.

    The degenerate-axis case integrates the constant a1*a2*e^(-lam_m)
    over 4*pi, which is the exact limit of product-then-integrate.
    """
    try:
        return sg_integral(sg_product(g1, g2))
    except DegenerateAxisError:
        lam_m = g1.sharpness + g2.sharpness
        return FOUR_PI * g1.amplitude * g2.amplitude * np.exp(-lam_m)


def sg_energy(g: SphericalGaussian) -> float:
    """Channel-mean of the full-sphere integral — one scalar per lobe."""
    return float(np.mean(sg_integral(g)))
