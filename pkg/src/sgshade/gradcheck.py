"""Finite-difference verification of the render gradients.

Builds one differentiable render of a view, seeds the reverse sweep with
the analytic MSE pixel gradient, and compares every requested parameter
entry against a central finite difference of the same scalar loss. The
finite-difference side only ever runs plain forward renders.
"""

from __future__ import annotations

import numpy as np

from . import diffmath as dm
from . import renderer
from .appearance import StyleParameters
from .geometry import Camera, TriangleMesh

__all__ = ["parameter_class", "finite_difference_check"]


def parameter_class(name: str) -> str:
    """Grouping key: light.axis / light.sharpness / light.amplitude or
    the owning network name."""
    if name.startswith("light."):
        return name.removesuffix("_raw")
    return name.split(".")[0]


def _loss_and_grads(mesh, style, camera, target, params):
    view = renderer.sample_view(mesh, camera)
    lobes = renderer.light_lobe_values(params["light.axis_raw"],
                                       params["light.sharpness_raw"],
                                       params["light.amplitude_raw"])
    image, _ = renderer.shade_view(view, style, params, lobes,
                                   background="white")
    value = dm.value_of(image)
    diff = value - target
    loss = float((diff * diff).sum() / diff.size)
    return image, loss, 2.0 * diff / diff.size


def finite_difference_check(mesh: TriangleMesh, style: StyleParameters,
                            camera: Camera, *, samples_per_class: int = 0,
                            h: float = 1e-5, seed: int = 0) -> dict:
    """Max relative gradient error per parameter class.

    ``samples_per_class`` limits how many entries of each parameter array
    are probed; 0 checks every entry. Relative error uses the usual
    |analytic - fd| / max(1e-6, |fd|) convention.
    """
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.2, 0.8,
                         size=(camera.height, camera.width, 3))

    tape = dm.Tape()
    lifted = {k: tape.lift(v, trainable=True) for k, v in style.params.items()}
    image, _, pixel_grads = _loss_and_grads(mesh, style, camera, target,
                                            lifted)
    grads = dm.backward(tape, image, seed=pixel_grads)

    def scalar() -> float:
        _, loss, _ = _loss_and_grads(mesh, style, camera, target,
                                     style.params)
        return loss

    worst: dict[str, float] = {}
    for (name, value), grad in zip(style.params.items(), grads):
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        if samples_per_class and flat.size > samples_per_class:
            picks = rng.choice(flat.size, size=samples_per_class,
                               replace=False)
        else:
            picks = range(flat.size)
        cls = parameter_class(name)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = scalar()
            flat[i] = orig - h
            down = scalar()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - fd) / max(1e-6, abs(fd))
            worst[cls] = max(worst.get(cls, 0.0), rel)
    return worst
