"""Command-line entry point: ``sobolev-inr <command> ...``.

Settings resolve as built-in defaults < ``--config`` file (``key = value``
lines, keys named like the long flags) < explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import pipelines, radiance
from .io import array_digest, file_digest, read_png, read_wav, write_manifest, write_png
from .metrics import RENDER_PROTOCOL, psnr, ssim
from .network import ACTIVATIONS, CheckpointError, load_checkpoint, save_checkpoint
from .training import TrainingDiverged, write_metrics_csv

log = logging.getLogger("sobolev_inr")


class UsageError(Exception):
    pass


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _coerce(value, like):
    if not isinstance(value, str):
        return value
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def resolve(args, defaults: dict) -> dict:
    """Merge defaults, the optional config file, and flags that were given."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        for key, val in read_config_file(args.config).items():
            if key not in defaults:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = _coerce(val, defaults[key])
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


IMAGE_DEFAULTS = dict(
    activation="sine", pe=False, sobolev=True, lam=1.0, filter="sobel", factor=4,
    iters=50_000, lr=1e-4, seed=0, deriv_source="full", layers=4, width=256,
    omega0=30.0, num_frequencies=5, log_interval=100, deriv_units="normalized",
)
AUDIO_DEFAULTS = dict(
    sobolev=True, lam=1.0, factor=5, iters=50_000, lr=5e-5, seed=0, layers=4,
    width=256, omega0=30.0, log_interval=100, deriv_units="normalized",
)
SCENE_DEFAULTS = dict(
    activation="sine", pe=True, sobolev=True, lam=1.0, filter="sobel", iters=400_000,
    lr=5e-4, seed=0, layers=8, width=256, omega0=1.0, num_frequencies=10, samples=64,
    batch_rays=128, holdout_every=8, log_interval=1000, downscale=1, deriv_source="train",
)
SWEEP_DEFAULTS = dict(
    iters=10_000, lr=1e-4, seed=0, factor=4, layers=4, width=256, omega0=30.0,
    num_frequencies=5, lam=1.0, log_interval=100,
)


def _check_lambda(args, opts):
    if not opts["sobolev"] and args.lam is not None:
        raise UsageError("--lambda only applies with Sobolev training; drop it or pass --sobolev")


def _train_config(opts, **extra):
    return pipelines.TrainConfig(
        lam=opts["lam"],
        learning_rate=opts["lr"],
        iterations=opts["iters"],
        seed=opts["seed"],
        omega0=opts["omega0"],
        use_sobolev=opts["sobolev"],
        hidden_layers=opts["layers"],
        width=opts["width"],
        log_interval=opts["log_interval"],
        deriv_units=opts["deriv_units"],
        **extra,
    )


def cmd_fit_image(args) -> int:
    opts = resolve(args, IMAGE_DEFAULTS)
    _check_lambda(args, opts)
    img = read_png(args.image)
    cfg = _train_config(
        opts,
        activation=opts["activation"],
        use_positional_encoding=opts["pe"],
        num_frequencies=opts["num_frequencies"],
        filter=opts["filter"],
    )
    task = pipelines.ImageTask(img, opts["factor"], cfg, deriv_source=opts["deriv_source"], output_dir=args.out)
    rep = pipelines.run_image_regression(task)
    print(f"eval PSNR {rep.psnr:.3f} dB  SSIM {rep.ssim:.4f}  -> {args.out}")
    return 0


def cmd_fit_audio(args) -> int:
    opts = resolve(args, AUDIO_DEFAULTS)
    _check_lambda(args, opts)
    wave, rate = read_wav(args.audio)
    if rate != 44_100:
        log.info("%s: sample rate %d Hz (used as-is, no resampling)", args.audio, rate)
    cfg = _train_config(opts, activation="sine")
    task = pipelines.AudioTask(wave, rate, opts["factor"], cfg, output_dir=args.out)
    rep = pipelines.run_audio_regression(task)
    print(f"eval PSNR {rep.psnr:.3f} dB  -> {args.out}")
    return 0


def _scene_views(args):
    if args.toy_sphere is not None:
        scene = radiance.parse_scene_spec(Path(args.toy_sphere).read_text()) if args.toy_sphere else radiance.SphereScene()
        return scene, scene.poses()
    if args.poses:
        return None, radiance.load_llff_poses(args.poses)
    raise UsageError("give --toy-sphere [SPEC] or --poses FILE")


def cmd_fit_scene(args) -> int:
    t0 = time.perf_counter()
    opts = resolve(args, SCENE_DEFAULTS)
    _check_lambda(args, opts)
    scene, poses = _scene_views(args)
    if scene is not None:
        views = scene.views()
        bound = scene.bound
    else:
        if not args.images:
            raise UsageError("--poses needs --images DIR with one PNG per pose (sorted by name)")
        files = sorted(Path(args.images).glob("*.png"))
        if len(files) != len(poses):
            raise UsageError(f"{len(files)} images for {len(poses)} poses")
        views = [(p, read_png(f)) for p, f in zip(poses, files)]
        bound = None
    cfg = radiance.RenderConfig(
        lam=opts["lam"], learning_rate=opts["lr"], iterations=opts["iters"],
        batch_rays=opts["batch_rays"], samples=opts["samples"], seed=opts["seed"],
        activation=opts["activation"], omega0=opts["omega0"], use_positional_encoding=opts["pe"],
        num_frequencies=opts["num_frequencies"], use_sobolev=opts["sobolev"], filter=opts["filter"],
        hidden_layers=opts["layers"], width=opts["width"], holdout_every=opts["holdout_every"],
        train_downscale=opts["downscale"], deriv_source=opts["deriv_source"], bound=bound,
        log_interval=opts["log_interval"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": "fit-scene", "config": asdict(cfg),
                "input_hash": array_digest(*[np.concatenate([p.c2w.ravel(), im.ravel()]) for p, im in views])}
    try:
        field, rep = radiance.train_inverse_rendering(views, cfg)
    except TrainingDiverged as exc:
        write_metrics_csv(exc.log, out / "metrics.csv")
        manifest.update(failure=str(exc), wall_clock_seconds=time.perf_counter() - t0)
        write_manifest(out / "manifest.json", manifest)
        raise
    meta = {"kind": "radiance", "bound": field.bound, "samples": cfg.samples}
    save_checkpoint(out / "checkpoint.bin", field.params, meta)
    write_metrics_csv(rep.log, out / "metrics.csv")
    for i, img in zip(rep.heldout_views, rep.renders):
        write_png(out / f"heldout_{i:03d}.png", img)
    manifest.update(
        final_metrics={"heldout_psnr": rep.heldout_psnr, "heldout_ssim": rep.heldout_ssim},
        result_hash=file_digest(out / "checkpoint.bin", out / "metrics.csv"),
        wall_clock_seconds=time.perf_counter() - t0,
    )
    write_manifest(out / "manifest.json", manifest)
    print(f"held-out PSNR {rep.heldout_psnr:.3f} dB  SSIM {rep.heldout_ssim:.4f}  -> {out}")
    return 0


def cmd_render(args) -> int:
    try:
        params, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(f"{args.checkpoint}: {exc}") from exc
    if meta.get("kind") != "radiance" or params.in_dim != 3 or params.out_dim != 4:
        raise UsageError(f"{args.checkpoint}: not a radiance-field checkpoint (kind={meta.get('kind')!r})")
    scene, poses = _scene_views(args)
    field = radiance.RadianceField(params, float(meta["bound"]))
    samples = args.samples or int(meta.get("samples", 64))
    idx = args.views if args.views else range(len(poses))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in idx:
        pose = poses[i].scaled(args.scale)
        img = radiance.render_view(field, pose, samples)
        write_png(out / f"render_{i:03d}.png", img)
        line = f"view {i}: {pose.width}x{pose.height}"
        if scene is not None:
            gt = scene.render(pose)
            line += f"  PSNR {psnr(img, gt, RENDER_PROTOCOL):.3f}  SSIM {ssim(img, gt, RENDER_PROTOCOL):.4f}"
        print(line)
    return 0


def cmd_sweep_activations(args) -> int:
    t0 = time.perf_counter()
    opts = resolve(args, SWEEP_DEFAULTS)
    img = read_png(args.image)
    cfg = pipelines.image_config(
        iterations=opts["iters"], learning_rate=opts["lr"], seed=opts["seed"],
        hidden_layers=opts["layers"], width=opts["width"], omega0=opts["omega0"],
        num_frequencies=opts["num_frequencies"], lam=opts["lam"], log_interval=opts["log_interval"],
    )
    runs = pipelines.sweep_activations(img, cfg, factor=opts["factor"], output_dir=args.out)
    write_manifest(
        Path(args.out) / "manifest.json",
        {
            "command": "sweep-activations",
            "config": asdict(cfg),
            "input_hash": array_digest(img),
            "final_metrics": {r.label: {"psnr": r.psnr, "ssim": r.ssim, "final_deriv_loss": r.final_deriv_loss} for r in runs},
            "wall_clock_seconds": time.perf_counter() - t0,
        },
    )
    for r in runs:
        print(f"{r.label:12s} PSNR {r.psnr:7.3f}  SSIM {r.ssim:.4f}  L_der {r.final_deriv_loss:.5g}")
    return 0


def _common(p, with_sobolev=True):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int, help="hidden layer count")
    p.add_argument("--width", type=int, help="hidden units per layer")
    p.add_argument("--omega0", type=float, help="sine frequency scale")
    p.add_argument("--log-interval", type=int)
    if with_sobolev:
        p.add_argument("--sobolev", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--lambda", dest="lam", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sobolev-inr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-image", help="image regression from a PNG")
    p.add_argument("image")
    _common(p)
    p.add_argument("--activation", choices=ACTIVATIONS)
    p.add_argument("--pe", action=argparse.BooleanOptionalAction, default=None, help="positional encoding")
    p.add_argument("--num-frequencies", type=int)
    p.add_argument("--filter", choices=("sobel", "vanilla"))
    p.add_argument("--factor", type=int)
    p.add_argument("--deriv-source", choices=pipelines.DERIV_SOURCES)
    p.add_argument("--deriv-units", choices=("normalized", "raw"))
    p.set_defaults(func=cmd_fit_image)

    p = sub.add_parser("fit-audio", help="audio regression from a 16-bit mono WAV")
    p.add_argument("audio")
    _common(p)
    p.add_argument("--factor", type=int)
    p.add_argument("--deriv-units", choices=("normalized", "raw"))
    p.set_defaults(func=cmd_fit_audio)

    p = sub.add_parser("fit-scene", help="inverse rendering of posed images")
    _common(p)
    p.add_argument("--toy-sphere", nargs="?", const="", metavar="SPEC", help="procedural sphere scene")
    p.add_argument("--poses", help="N x 17 pose/bounds array (.npy or raw doubles)")
    p.add_argument("--images", help="directory of PNGs matching --poses")
    p.add_argument("--activation", choices=ACTIVATIONS)
    p.add_argument("--pe", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--num-frequencies", type=int)
    p.add_argument("--filter", choices=("sobel", "vanilla"))
    p.add_argument("--samples", type=int)
    p.add_argument("--batch-rays", type=int)
    p.add_argument("--holdout-every", type=int)
    p.add_argument("--downscale", type=int, help="train at 1/N resolution")
    p.add_argument("--deriv-source", choices=("train", "full"))
    p.set_defaults(func=cmd_fit_scene)

    p = sub.add_parser("render", help="render poses from a radiance checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--toy-sphere", nargs="?", const="", metavar="SPEC")
    p.add_argument("--poses")
    p.add_argument("--scale", type=float, default=1.0, help="resolution multiplier")
    p.add_argument("--samples", type=int)
    p.add_argument("--views", type=int, nargs="*")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep-activations", help="activation study on a grayscale image")
    p.add_argument("image")
    _common(p, with_sobolev=False)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--factor", type=int)
    p.add_argument("--num-frequencies", type=int)
    p.set_defaults(func=cmd_sweep_activations)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
