"""Command-line entry points.

Every run writes its fully resolved configuration into the output
directory as a flat key = value file, so any artifact can be reproduced
from its directory alone. Exit codes: 0 success, 2 bad arguments,
3 I/O failure, 4 numeric failure, 5 remote-service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .appearance import AppearanceConfig, init_style, load_style, save_style
from .geometry import (
    Camera,
    MeshError,
    load_mesh,
    make_icosphere,
    normalize_mesh,
    sample_cameras,
)
from .gradcheck import finite_difference_check
from .imageio import read_radiance_image, write_pfm, write_png
from .lighting import (
    fit_envmap_from_image,
    load_lobes_text,
    render_equirect,
    save_lobes_text,
)
from .optimization import (
    ImageTargetObjective,
    NumericError,
    RemoteServiceError,
    TextPromptObjective,
    TrainConfig,
    train,
    write_log_csv,
)
from .renderer import edit_material, export_components, render_view

log = logging.getLogger("sgshade")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_REMOTE = 5


# ---------------------------------------------------------------------------
# flat key = value config files (TOML-compatible scalars)


def dump_flat_config(values: dict, path: Path) -> None:
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, bool):
            out = "true" if v else "false"
        elif isinstance(v, (int, float)):
            out = repr(v)
        elif v is None:
            continue
        else:
            out = json.dumps(str(v))
        lines.append(f"{key} = {out}")
    path.write_text("\n".join(lines) + "\n")


def load_flat_config(path: Path) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, text = line.partition("=")
        text = text.strip()
        if text in ("true", "false"):
            value: object = text == "true"
        elif text.startswith('"'):
            value = json.loads(text)
        else:
            try:
                value = int(text)
            except ValueError:
                value = float(text)
        values[key.strip()] = value
    return values


# ---------------------------------------------------------------------------
# shared helpers


def _parse_vec3(text: str) -> np.ndarray:
    parts = [float(t) for t in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return np.array(parts)


def _parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",")]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out

def _write_resolved_config(args, out: Path) -> None:
    values = {k: v for k, v in vars(args).items()
              if k not in ("func",) and not k.startswith("_")}
    for key, v in list(values.items()):
        if isinstance(v, np.ndarray):
            values[key] = ",".join(repr(float(x)) for x in v)
        elif isinstance(v, list):
            values[key] = ",".join(repr(float(x)) for x in v)
    dump_flat_config(values, out / "resolved_config.toml")


def _load_normalized_mesh(path) -> "TriangleMesh":
    return normalize_mesh(load_mesh(path))


def _appearance_from_args(args) -> AppearanceConfig:
    return AppearanceConfig(
        hidden_width=args.net_width,
        svbrdf_pe_features=args.brdf_pe_features,
        normal_pe_features=args.normal_pe_features,
        use_specular=not args.no_specular,
        use_normal_net=not args.no_normal_net,
        use_svbrdf_pe=not (args.no_pe or args.no_brdf_pe),
        use_normal_pe=not (args.no_pe or args.no_normal_pe),
        symmetry_axis=args.symmetry,
        num_lights=args.lights,
    )


def _cameras_from_args(args, rng) -> list[Camera]:
    if args.view:
        return [Camera(position=v, fov_deg=args.fov, height=args.size,
                       width=args.size) for v in args.view]
    return sample_cameras(args.anchor, args.radius, args.sigma, args.views,
                          rng, fov_deg=args.fov, height=args.size,
                          width=args.size)


def _add_camera_flags(p, default_views=4):
    p.add_argument("--view", type=_parse_vec3, action="append",
                   help="explicit camera position x,y,z (repeatable)")
    p.add_argument("--views", type=int, default=default_views,
                   help="number of sampled views when --view is not given")
    p.add_argument("--anchor", type=_parse_vec3, default=np.array([0.0, 0.0, 1.0]))
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--background", choices=["white", "black"], default="white")


# ---------------------------------------------------------------------------
# subcommands


def cmd_stylize(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    mesh = _load_normalized_mesh(args.mesh)
    appearance = _appearance_from_args(args)

    if args.loss == "remote":
        if not args.prompt or not args.endpoint:
            raise ValueError("remote loss requires --prompt and --endpoint")
        objective = TextPromptObjective(prompt=args.prompt,
                                        endpoint=args.endpoint,
                                        route=args.route)
    else:
        if not args.targets:
            raise ValueError("image loss requires --targets")
        objective = _load_targets(Path(args.targets))

    config = TrainConfig(
        iterations=args.iterations,
        views_per_iter=args.views_per_iter,
        crops_per_view=0 if args.no_crop else args.crops_per_view,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        image_height=args.size,
        image_width=args.size,
        camera_anchor=tuple(args.anchor),
        camera_radius=args.radius,
        camera_sigma=args.sigma,
        fov_deg=args.fov,
        seed=args.seed,
        snapshot_every=args.snapshot_every,
        snapshot_dir=str(out / "snapshots"),
    )

    def progress(it, loss, lr):
        if it % max(1, args.log_every) == 0:
            log.info("iter %d: loss %.6f lr %.2e", it, loss, lr)

    result = train(mesh, objective, config, appearance=appearance,
                   progress=progress)
    save_style(result.style, out / "style.ckpt")
    write_log_csv(result.log, out / "train_log.csv")
    save_lobes_text(result.style.env, out / "lighting_lobes.txt")
    shot = render_view(_cameras_from_args(args, np.random.default_rng(args.seed))[0],
                       mesh, result.style, background="white")
    write_png(out / "final_render.png", shot.image)
    log.info("checkpoint written to %s", out / "style.ckpt")
    return EXIT_OK


def _load_targets(targets_dir: Path) -> ImageTargetObjective:
    from .imageio import read_png

    meta = json.loads((targets_dir / "cameras.json").read_text())
    cameras = [Camera(position=np.array(c["position"]),
                      fov_deg=c.get("fov_deg", 45.0),
                      height=c.get("height", 224), width=c.get("width", 224))
               for c in meta["cameras"]]
    images = [read_png(targets_dir / f"view_{i:03d}.png")
              for i in range(len(cameras))]
    return ImageTargetObjective(cameras=cameras, images=images,
                                background=meta.get("background", "white"))


def cmd_render(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    mesh = _load_normalized_mesh(args.mesh)
    style = load_style(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    cameras = _cameras_from_args(args, rng)
    meta = {"cameras": [], "background": args.background}
    for i, cam in enumerate(cameras):
        view = render_view(cam, mesh, style, background=args.background,
                           keep_linear=args.linear)
        write_png(out / f"view_{i:03d}.png", view.image)
        write_png(out / f"view_{i:03d}_mask.png", view.mask.astype(float))
        if args.linear:
            write_pfm(out / f"view_{i:03d}.pfm", view.linear)
        meta["cameras"].append({"position": [float(x) for x in cam.position],
                                "fov_deg": cam.fov_deg,
                                "height": cam.height, "width": cam.width})
    if args.emit_targets:
        (out / "cameras.json").write_text(json.dumps(meta, indent=2,
                                                     sort_keys=True))
    return EXIT_OK


def cmd_relight(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    mesh = _load_normalized_mesh(args.mesh)
    style = load_style(args.checkpoint)
    env_path = Path(args.env)
    if env_path.suffix.lower() == ".txt":
        env = load_lobes_text(env_path)
    else:
        image = read_radiance_image(env_path)
        env, rmse = fit_envmap_from_image(image, args.fit_lobes,
                                          rng=np.random.default_rng(args.seed))
        log.info("fitted %d lobes, weighted RMSE %.4f", args.fit_lobes, rmse)
        save_lobes_text(env, out / "fitted_lobes.txt")
    rng = np.random.default_rng(args.seed)
    for i, cam in enumerate(_cameras_from_args(args, rng)):
        view = render_view(cam, mesh, style, env=env,
                           background=args.background)
        write_png(out / f"relit_{i:03d}.png", view.image)
    return EXIT_OK


def cmd_edit_material(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    mesh = _load_normalized_mesh(args.mesh)
    style = load_style(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    cam = _cameras_from_args(args, rng)[0]
    rows = []
    for r in args.roughness:
        row = []
        for s in args.specular:
            edited = edit_material(style, roughness=r, specular=s)
            row.append(render_view(cam, mesh, edited,
                                   background=args.background).image)
        rows.append(np.concatenate(row, axis=1))
    grid = np.concatenate(rows, axis=0)
    write_png(out / "material_grid.png", grid)
    return EXIT_OK


def cmd_fit_env(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    image = read_radiance_image(args.image)
    env, rmse = fit_envmap_from_image(image, args.lobes,
                                      iterations=args.iterations,
                                      rng=np.random.default_rng(args.seed))
    save_lobes_text(env, out / "lobes.txt")
    preview = render_equirect(env, args.preview_height, 2 * args.preview_height)
    write_pfm(out / "preview.pfm", preview)
    write_png(out / "preview.png", np.clip(preview, 0.0, 1.0) ** (1 / 2.2))
    log.info("fit %d lobes: weighted RMSE %.5f", args.lobes, rmse)
    print(f"rmse {rmse:.6f}")
    return EXIT_OK


def cmd_export_components(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    mesh = _load_normalized_mesh(args.mesh)
    style = load_style(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    cam = _cameras_from_args(args, rng)[0]
    comps = export_components(mesh, style, None, cam,
                              background=args.background)
    for name, image in comps.items():
        write_png(out / f"{args.stem}_{name}.png", image)
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    out = _out_dir(args)
    _write_resolved_config(args, out)
    rng = np.random.default_rng(args.seed)
    config = AppearanceConfig(hidden_width=16, svbrdf_pe_features=8,
                              svbrdf_pe_sigma=2.0, normal_pe_features=8,
                              normal_pe_sigma=1.0, num_lights=2)
    style = init_style(config, rng)
    mesh = normalize_mesh(make_icosphere(0))
    camera = Camera(position=[0.4, 0.5, 2.0], height=8, width=8)
    worst = finite_difference_check(mesh, style, camera,
                                    samples_per_class=args.per_class,
                                    seed=args.seed)
    failed = False
    lines = []
    for cls in sorted(worst):
        ok = worst[cls] < args.tolerance
        failed |= not ok
        line = f"{'PASS' if ok else 'FAIL'} {cls}: max rel err {worst[cls]:.3e}"
        lines.append(line)
        print(line)
    (out / "gradient_report.txt").write_text("\n".join(lines) + "\n")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgshade",
        description="Spherical-Gaussian appearance stylization for "
                    "triangle meshes")
    parser.add_argument("--config", type=Path,
                        help="flat key = value file supplying flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stylize", help="optimize a style on a mesh")
    common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--prompt", help="text prompt (remote loss)")
    p.add_argument("--targets", help="target-image directory (image loss)")
    p.add_argument("--loss", choices=["remote", "image"], default="remote")
    p.add_argument("--endpoint", help="embedding service base URL")
    p.add_argument("--route", default="/v1/loss")
    p.add_argument("--iterations", type=int, default=1500)
    p.add_argument("--views-per-iter", type=int, default=5)
    p.add_argument("--crops-per-view", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=5e-4)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--lights", type=int, default=32)
    p.add_argument("--net-width", type=int, default=256)
    p.add_argument("--brdf-pe-features", type=int, default=128)
    p.add_argument("--normal-pe-features", type=int, default=64)
    p.add_argument("--snapshot-every", type=int, default=100)
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--symmetry", choices=["x", "y", "z"], default=None)
    p.add_argument("--no-specular", action="store_true")
    p.add_argument("--no-normal-net", action="store_true")
    p.add_argument("--no-pe", action="store_true")
    p.add_argument("--no-normal-pe", action="store_true")
    p.add_argument("--no-brdf-pe", action="store_true")
    p.add_argument("--no-crop", action="store_true")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("render", help="render views from a checkpoint")
    common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--linear", action="store_true",
                   help="also write pre-tonemap PFM images")
    p.add_argument("--emit-targets", action="store_true",
                   help="write cameras.json for image-loss training")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("relight", help="re-render under replacement lighting")
    common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", required=True,
                   help="lighting: .txt lobe list or .hdr/.pfm image to fit")
    p.add_argument("--fit-lobes", type=int, default=32)
    _add_camera_flags(p)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("edit-material", help="roughness/specular sweep grid")
    common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--roughness", type=_parse_floats, default=[0.2, 0.5, 0.9])
    p.add_argument("--specular", type=_parse_floats, default=[0.2, 0.5, 0.9])
    _add_camera_flags(p)
    p.set_defaults(func=cmd_edit_material)

    p = sub.add_parser("fit-env", help="fit SG lobes to an HDR panorama")
    common(p)
    p.add_argument("--image", required=True, help=".hdr or .pfm panorama")
    p.add_argument("--lobes", type=int, default=32)
    p.add_argument("--iterations", type=int, default=1200)
    p.add_argument("--preview-height", type=int, default=128)
    p.set_defaults(func=cmd_fit_env)

    p = sub.add_parser("export-components",
                       help="write disentangled channel maps")
    common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stem", default="style")
    _add_camera_flags(p)
    p.set_defaults(func=cmd_export_components)

    p = sub.add_parser("check-gradients",
                       help="finite-difference audit of render gradients")
    common(p)
    p.add_argument("--per-class", type=int, default=6,
                   help="entries probed per parameter array (0 = all)")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_check_gradients)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()

    # --config supplies defaults; explicit flags still win
    probe, _ = parser.parse_known_args(argv)
    if probe.config is not None:
        try:
            file_values = load_flat_config(probe.config)
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        known = {action.dest
                 for sp_action in parser._subparsers._group_actions
                 for sub_parser in sp_action.choices.values()
                 for action in sub_parser._actions}
        filtered = {k: v for k, v in file_values.items() if k in known}
        for sp_action in parser._subparsers._group_actions:
            for sub_parser in sp_action.choices.values():
                sub_parser.set_defaults(**filtered)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    # note: MeshError and DomainError subclass ValueError; order matters
    try:
        return args.func(args)
    except (MeshError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, dm.DomainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RemoteServiceError as exc:
        print(f"remote service error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
