"""Inverse rendering as a verifiable stand-in for the text objective.

Synthesizes views of a sphere with a known lighting rig and constant
albedo, then recovers a style from scratch by matching those images, and
reports PSNR on the training views and on a held-out novel view.

A larger version of this experiment (8 views, 500 iterations) is the
recovery gate in tests/test_acceptance.py; this demo is trimmed to run
in about a minute.
"""

from pathlib import Path

import numpy as np

from sgshade.appearance import AppearanceConfig, init_style
from sgshade.geometry import Camera, make_icosphere, normalize_mesh
from sgshade.lighting import EnvironmentMap
from sgshade.optimization import ImageTargetObjective, TrainConfig, train
from sgshade.renderer import render_view
from sgshade.sg import SphericalGaussian
from sgshade.imageio import write_png

out = Path(__file__).parent / "out" / "05_recovery"
out.mkdir(parents=True, exist_ok=True)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def psnr(a, b):
    return 10.0 * np.log10(1.0 / float(np.mean((a - b) ** 2)))


mesh = normalize_mesh(make_icosphere(3))
rng = np.random.default_rng(42)

truth = init_style(AppearanceConfig(hidden_width=16, svbrdf_pe_features=4,
                                    svbrdf_pe_sigma=0.5, use_specular=False,
                                    use_normal_net=False, num_lights=4), rng)
truth.params["svbrdf.diffuse.2.W"] = np.zeros_like(
    truth.params["svbrdf.diffuse.2.W"])
truth.params["svbrdf.diffuse.2.b"] = np.array([1.0986, -0.2007, -0.8473])
truth.set_env(EnvironmentMap.from_lobes([
    SphericalGaussian(unit([0.2, 0.9, 0.4]), 6.0, [1.4, 1.2, 0.9]),
    SphericalGaussian(unit([-0.7, 0.4, 0.6]), 10.0, [0.7, 0.9, 1.3]),
    SphericalGaussian(unit([0.8, -0.1, 0.6]), 8.0, [1.0, 0.6, 0.4]),
    SphericalGaussian(unit([-0.2, -0.8, -0.6]), 5.0, [0.5, 0.7, 0.8]),
]))

positions = []
for az in np.linspace(0, 2 * np.pi, 4, endpoint=False):
    positions.append(unit([np.cos(az) * 0.83, 0.56, np.sin(az) * 0.83]) * 2)
for az in np.linspace(0, 2 * np.pi, 4, endpoint=False) + np.pi / 4:
    positions.append(unit([np.cos(az) * 0.83, -0.56, np.sin(az) * 0.83]) * 2)
cams = [Camera(position=p, height=64, width=64) for p in positions]
heldout = Camera(position=unit([np.cos(0.4), 0.1, np.sin(0.4)]) * 2.0,
                 height=64, width=64)

targets = [render_view(c, mesh, truth, background="white").image
           for c in cams]
target_held = render_view(heldout, mesh, truth, background="white").image
write_png(out / "target_view0.png", targets[0])

result = train(
    mesh,
    ImageTargetObjective(cameras=cams, images=targets, background="white"),
    TrainConfig(iterations=200, learning_rate=5e-3, weight_decay=1e-3,
                seed=7),
    appearance=AppearanceConfig(hidden_width=32, svbrdf_pe_features=16,
                                svbrdf_pe_sigma=1.0, use_specular=False,
                                use_normal_net=False, num_lights=4))

losses = [r[1] for r in result.log]
print(f"loss {losses[0]:.5f} -> {losses[-1]:.6f} over {len(losses)} iterations")

re0 = render_view(cams[0], mesh, result.style, background="white").image
held = render_view(heldout, mesh, result.style, background="white").image
write_png(out / "recovered_view0.png", re0)
write_png(out / "novel_view.png", held)
print(f"train-view PSNR {psnr(re0, targets[0]):.1f} dB, "
      f"held-out PSNR {psnr(held, target_held):.1f} dB")
print(f"outputs in {out}")
