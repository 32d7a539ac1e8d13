"""Fitting SG lobes to an HDR panorama.

Synthesizes a panorama from a known 4-lobe sky, writes it as Radiance
HDR, fits 8 fresh lobes to the image by gradient descent, and compares
the reconstruction.
"""

from pathlib import Path

import numpy as np

from sgshade.imageio import read_hdr, write_hdr, write_png
from sgshade.lighting import (
    EnvironmentMap,
    equirect_solid_angles,
    fit_envmap_from_image,
    render_equirect,
    save_lobes_text,
    total_energy,
)
from sgshade.sg import SphericalGaussian

out = Path(__file__).parent / "out" / "04_fit_env"
out.mkdir(parents=True, exist_ok=True)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


truth = EnvironmentMap.from_lobes([
    SphericalGaussian(unit([0.2, 0.9, 0.4]), 6.0, [1.4, 1.2, 0.9]),
    SphericalGaussian(unit([-0.7, 0.4, 0.6]), 10.0, [0.7, 0.9, 1.3]),
    SphericalGaussian(unit([0.8, -0.1, 0.6]), 8.0, [1.0, 0.6, 0.4]),
    SphericalGaussian(unit([-0.2, -0.8, -0.6]), 5.0, [0.5, 0.7, 0.8]),
])
pano = render_equirect(truth, 64, 128)
write_hdr(out / "truth.hdr", pano)
print(f"truth panorama: energy {total_energy(truth):.3f}")

image = read_hdr(out / "truth.hdr")
fitted, rmse = fit_envmap_from_image(image, 8, rng=np.random.default_rng(1))
save_lobes_text(fitted, out / "fitted_lobes.txt")
print(f"fitted 8 lobes: weighted RMSE {rmse:.4f}, "
      f"energy {total_energy(fitted):.3f}")

recon = render_equirect(fitted, 64, 128)
w = equirect_solid_angles(64, 128)[..., None]
rel = np.sqrt((w * (recon - image) ** 2).sum() / (w * image ** 2).sum())
print(f"relative image RMSE {rel:.2%}")

tonemap = lambda x: np.clip(x, 0, 1) ** (1 / 2.2)
write_png(out / "truth.png", tonemap(pano))
write_png(out / "fitted.png", tonemap(recon))
print(f"outputs in {out}")
