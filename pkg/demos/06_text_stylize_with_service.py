"""Text-driven stylization through the embedding-loss service.

Boots the service in-process (pretrained CLIP when its weights are
available, otherwise the deterministic offline backbone), then runs a
short `stylize` via the CLI against it. With the offline backbone the
objective is semantically meaningless but the full transport, crop
augmentation and gradient plumbing are real; point --model at the
pretrained checkpoint for actual text-driven looks.

Requires the service package: pip install -e ./service
"""

import threading
import time
from pathlib import Path

import numpy as np

out = Path(__file__).parent / "out" / "06_text_stylize"
out.mkdir(parents=True, exist_ok=True)

import uvicorn
from clipservice.app import create_app
from clipservice.model import ClipLossModel, ModelUnavailable

spec = "openai/clip-vit-base-patch32"
try:
    ClipLossModel(spec)
except ModelUnavailable:
    print("pretrained weights unavailable; using the offline backbone")
    spec = "random-tiny"

server = uvicorn.Server(uvicorn.Config(create_app(model_spec=spec, eager=True),
                                       host="127.0.0.1", port=0,
                                       log_level="error"))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)
host, port = server.servers[0].sockets[0].getsockname()[:2]
endpoint = f"http://{host}:{port}"
print(f"service ({spec}) at {endpoint}")

from sgshade.cli import main
from sgshade.geometry import TriangleMesh, make_icosphere, normalize_mesh, save_obj

base = make_icosphere(3)
mesh = normalize_mesh(TriangleMesh.from_arrays(
    base.vertices * np.array([1.45, 0.55, 0.8]), base.faces))
mesh_path = out / "blob.obj"
save_obj(mesh, mesh_path)

t0 = time.time()
code = main([
    "stylize", "--mesh", str(mesh_path), "--out", str(out / "run"),
    "--loss", "remote", "--prompt", "a shoe made of gold",
    "--endpoint", endpoint, "--iterations", "40", "--views-per-iter", "2",
    "--crops-per-view", "3", "--size", "128", "--net-width", "64",
    "--brdf-pe-features", "32", "--normal-pe-features", "16",
    "--lights", "16", "--snapshot-every", "20", "--seed", "1"])
print(f"stylize exit code {code} after {time.time() - t0:.0f}s; "
      f"snapshots in {out / 'run' / 'snapshots'}")

server.should_exit = True
thread.join(timeout=5)
