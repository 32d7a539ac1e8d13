"""Shared numeric oracles: finite differences and sphere quadrature.

These stay deliberately independent of the library's own closed forms so
they can vouch for them.
"""

import numpy as np
import pytest


def central_difference(f, x0, h=1e-5):
    """Central finite-difference gradient of scalar f at array x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    it = np.nditer(x0, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def rel_err(analytic, reference, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    return np.abs(analytic - reference) / np.maximum(floor, np.abs(reference))


def sphere_quadrature_dirs(n_polar=200, n_azimuth=400):
    """Gauss-Legendre x midpoint product rule over the unit sphere.

    Returns (dirs (N,3), weights (N,)) with sum(weights) = 4*pi.
    """
    t, wt = np.polynomial.legendre.leggauss(n_polar)  # t = cos(polar angle)
    phi = (np.arange(n_azimuth) + 0.5) * (2.0 * np.pi / n_azimuth)
    s = np.sqrt(1.0 - t**2)
    dirs = np.stack([
        np.outer(s, np.cos(phi)).ravel(),
        np.outer(s, np.sin(phi)).ravel(),
        np.outer(t, np.ones_like(phi)).ravel(),
    ], axis=-1)
    weights = np.outer(wt, np.full(n_azimuth, 2.0 * np.pi / n_azimuth)).ravel()
    return dirs, weights


def sphere_integral(f, n_polar=200, n_azimuth=400):
    """Quadrature of a vector-valued function over the full sphere."""
    dirs, w = sphere_quadrature_dirs(n_polar, n_azimuth)
    vals = f(dirs)
    return np.tensordot(w, vals, axes=(0, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
