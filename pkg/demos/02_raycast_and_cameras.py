"""Meshes, BVH ray casting and camera sampling.

Builds a jittered icosphere, normalizes it into the unit sphere, casts a
full camera's rays through the BVH, and writes the hit mask and a depth
visualization. Also shows the Gaussian camera sampling around an anchor
view.
"""

from pathlib import Path

import numpy as np

from sgshade.geometry import (
    Camera,
    TriangleMesh,
    camera_rays,
    cast_rays,
    make_icosphere,
    normalize_mesh,
    sample_cameras,
)
from sgshade.imageio import write_png

out = Path(__file__).parent / "out" / "02_raycast"
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(3)

base = make_icosphere(3)
bumpy = TriangleMesh.from_arrays(
    base.vertices + 0.05 * rng.standard_normal(base.vertices.shape),
    base.faces)
mesh = normalize_mesh(bumpy)
print(f"mesh: {mesh.num_vertices} vertices, {mesh.num_faces} faces, "
      f"max |v| = {np.linalg.norm(mesh.vertices, axis=1).max():.6f}")

camera = Camera(position=[0.6, 0.8, 1.9], height=256, width=256)
origins, dirs = camera_rays(camera)
hits = cast_rays(mesh, origins, dirs)
print(f"cast {len(dirs)} rays: {hits.mask.sum()} hits")

mask = hits.mask.reshape(256, 256)
write_png(out / "mask.png", mask.astype(float))

depth = np.zeros(len(dirs))
t = hits.t[hits.mask]
depth[hits.mask] = 1.0 - (t - t.min()) / (np.ptp(t) + 1e-9)
write_png(out / "depth.png", depth.reshape(256, 256))

normals = np.zeros((len(dirs), 3))
normals[hits.mask] = (hits.normals[hits.mask] + 1.0) * 0.5
write_png(out / "normals.png", normals.reshape(256, 256, 3))

cams = sample_cameras([0, 0, 1.0], radius=2.0, sigma=0.3, n=6, rng=rng)
print("sampled camera positions (all on the radius-2 sphere):")
for c in cams:
    print(f"  {c.position.round(3)}  |c| = {np.linalg.norm(c.position):.3f}")
print(f"outputs in {out}")
