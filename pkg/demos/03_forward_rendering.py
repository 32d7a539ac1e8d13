"""Forward rendering: shading, component maps, relighting, material edits.

Renders an untrained (random) style under a hand-built 3-lobe sky, then
shows the disentangled channel exports, a relit version, and a roughness
x specular sweep grid.
"""

from pathlib import Path

import numpy as np

from sgshade.appearance import AppearanceConfig, init_style
from sgshade.geometry import Camera, make_icosphere, normalize_mesh
from sgshade.lighting import EnvironmentMap
from sgshade.renderer import (
    edit_material,
    export_components,
    relight,
    render_view,
)
from sgshade.sg import SphericalGaussian
from sgshade.imageio import write_png

out = Path(__file__).parent / "out" / "03_forward"
out.mkdir(parents=True, exist_ok=True)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


rng = np.random.default_rng(11)
style = init_style(AppearanceConfig(hidden_width=32, svbrdf_pe_features=16,
                                    svbrdf_pe_sigma=3.0,
                                    normal_pe_features=16,
                                    normal_pe_sigma=2.0, num_lights=3), rng)
style.set_env(EnvironmentMap.from_lobes([
    SphericalGaussian(unit([0.4, 0.8, 0.45]), 14.0, [2.6, 2.4, 2.0]),
    SphericalGaussian(unit([-0.7, 0.3, 0.2]), 5.0, [0.5, 0.7, 1.1]),
    SphericalGaussian(unit([0.1, -0.9, 0.4]), 3.0, [0.35, 0.3, 0.25]),
]))

mesh = normalize_mesh(make_icosphere(3))
camera = Camera(position=[0.5, 0.7, 2.0], height=192, width=192)

view = render_view(camera, mesh, style, background="white")
write_png(out / "render.png", view.image)
print(f"render: mask covers {view.mask.mean():.0%} of the frame")

comps = export_components(mesh, style, None, camera)
for name, image in comps.items():
    write_png(out / f"component_{name}.png", image)
print("components:", ", ".join(sorted(comps)))

# swap the sky for a single hard key light
key = EnvironmentMap.from_lobes(
    [SphericalGaussian(unit([-0.6, 0.7, 0.6]), 40.0, [6.0, 5.5, 5.0])])
relit = relight(mesh, style, key, [camera])[0]
write_png(out / "relit.png", relit.image)

rows = []
for r in (0.2, 0.5, 0.9):
    row = [render_view(camera, mesh, edit_material(style, roughness=r,
                                                   specular=s)).image
           for s in (0.2, 0.5, 0.9)]
    rows.append(np.concatenate(row, axis=1))
write_png(out / "material_grid.png", np.concatenate(rows, axis=0))
print(f"outputs in {out}")
