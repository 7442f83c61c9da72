"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
Angles on the command line are degrees; they are converted to radians here.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .geometry import DepthMap, PanoramaImage, PerspectiveImage
from .imageio import (
    list_images,
    read_features,
    read_matches,
    read_pfm,
    read_png,
    read_poses,
    read_trajectory,
    write_png,
    write_poses,
    write_trajectory,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class ValidationError(ValueError):
    pass


def _size(text: str):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from exc
    return w, h


def _range(text: str):
    """``start:stop:step`` inclusive of ``stop`` (to rounding)."""
    try:
        a, b, s = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from exc
    n = int(math.floor((b - a) / s + 1e-9)) + 1
    return [round(a + k * s, 10) for k in range(n)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_project(args) -> int:
    from .projection import ViewWindow, pano_to_perspective, perspective_to_pano, split_panorama

    out = Path(args.out)
    if args.direction == "persp2pano":
        persp = PerspectiveImage(read_png(args.input))
        win = ViewWindow.from_degrees(args.yaw, args.pitch, args.hfov or 90.0, args.vfov, persp.width, persp.height)
        pano, cover = perspective_to_pano(persp, win, (args.pano_height, 2 * args.pano_height))
        write_png(out, pano.data, bits=16)
        return EXIT_OK
    pano = PanoramaImage(read_png(args.input)).checked()
    if args.split:
        views = split_panorama(pano, args.split, args.overlap, math.radians(args.hfov) if args.hfov else None,
                               args.size)
        out.mkdir(parents=True, exist_ok=True)
        meta = []
        for k, (img, win) in enumerate(views):
            write_png(out / f"view_{k:02d}.png", img.data, bits=16)
            meta.append({"yaw_degrees": math.degrees(win.yaw), "hfov_degrees": math.degrees(win.hfov)})
        (out / "views.json").write_text(json.dumps(meta, indent=2))
    else:
        win = ViewWindow.from_degrees(args.yaw, args.pitch, args.hfov or 90.0, args.vfov, *args.size)
        img, _ = pano_to_perspective(pano, win)
        write_png(out, img.data, bits=16)
    return EXIT_OK


def cmd_keyframes(args) -> int:
    from .keyframes import build_neighboring_pairs, build_walkin_pair
    from .projection import ViewWindow

    pano = PanoramaImage(read_png(args.pano)).checked()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "walkin":
        if not args.depth:
            raise ValidationError("walk-in keyframes need --depth")
        depth = DepthMap(read_pfm(args.depth))
        win = ViewWindow.from_degrees(args.yaw, args.pitch, args.hfov, None, *args.size)
        pairs = [build_walkin_pair(pano, depth, win, args.walk_ratio)]
    else:
        pairs = build_neighboring_pairs(pano, args.n_views, args.overlap, math.radians(args.hfov), args.size)
    for k, p in enumerate(pairs):
        write_png(out / f"pair_{k:02d}_source.png", p.source.data, bits=16)
        write_png(out / f"pair_{k:02d}_target.png", p.target.data, bits=16)
        write_png(out / f"pair_{k:02d}_mask.png", p.target_inpaint_mask.astype(np.float64))
        write_poses(out / f"pair_{k:02d}.json", [p.source_pose, p.target_pose], p.intrinsics)
    return EXIT_OK


def cmd_trajectory(args) -> int:
    from .trajectory import TrajectorySpec, generate_star_trajectory, slerp_pose, upsample_trajectory

    if args.mode == "star":
        if not args.depth:
            raise ValidationError("star mode needs --depth (panorama depth PFM)")
        spec = generate_star_trajectory(DepthMap(read_pfm(args.depth)), tuple(args.center), args.n_directions,
                                        args.margin_meters, args.fps, turn_radius=args.turn_radius_meters)
        write_trajectory(args.out, spec)
        return EXIT_OK
    if not args.poses:
        raise ValidationError(f"{args.mode} mode needs --poses")
    poses, intr, _ = read_poses(args.poses)
    if args.mode == "interpolate":
        if len(poses) < 2:
            raise ValidationError("interpolation needs at least two poses")
        n = args.frames
        frames = []
        for a, b in zip(poses[:-1], poses[1:]):
            frames += [slerp_pose(a, b, k / (n - 1)) for k in range(n - 1)]
        frames.append(poses[-1])
        write_poses(args.out, frames, intr[0], [k / args.fps for k in range(len(frames))])
    else:
        spec = read_trajectory(args.poses, args.fps)
        spec = upsample_trajectory(spec, math.radians(args.max_rot_degrees), args.max_trans_meters)
        write_trajectory(args.out, spec, intr[0])
    return EXIT_OK


def cmd_raymap(args) -> int:
    from .raymap import stack_raymaps, write_raymap_volume

    poses, intr, _ = read_poses(args.poses)
    if intr[0] is None:
        raise ValidationError("pose file must carry intrinsics")
    vol = stack_raymaps(poses, intr[0], args.size, args.normalize)
    write_raymap_volume(args.out, vol, intr[0].scaled(*args.size) if args.size else intr[0])
    return EXIT_OK


def _load_array(path):
    p = Path(path)
    if p.suffix == ".npy":
        return np.load(p)
    return read_png(p)


def _denoiser(spec: str, schedule):
    from .denoisers import OracleDenoiser, SocketDenoiser, StubDenoiser

    if spec == "stub":
        return StubDenoiser()
    kind, _, arg = spec.partition(":")
    if kind == "oracle" and arg:
        return OracleDenoiser(_load_array(arg), shift_aware=True)
    if kind == "external" and arg:
        return SocketDenoiser(arg)
    raise ValidationError("--denoiser must be oracle:<file>, stub or external:<address>")


def cmd_sample(args) -> int:
    from .keyframes import KeyframePair, WALK_IN
    from .raymap import stack_raymaps
    from .sampler import make_schedule, panorama_outpaint_sample, spatial_diffusion_sample

    sched = make_schedule(args.steps, args.beta_min, args.beta_max)
    den = _denoiser(args.denoiser, sched)
    out = Path(args.out)
    if args.mode == "panorama":
        if not (args.known and args.mask):
            raise ValidationError("panorama mode needs --known and --mask")
        known = _load_array(args.known)
        mask = _load_array(args.mask)
        mask = (mask[..., 0] if mask.ndim == 3 else mask) > 0.5
        interval = None if args.cycle_interval == 0 else (args.cycle_interval or max(1, args.steps // 4))
        z = panorama_outpaint_sample(den, known, mask, sched, interval, args.seed, args.sigma_scale)
        np.save(out.with_suffix(".npy"), z)
        if z.shape[-1] in (1, 3, 4):
            write_png(out.with_suffix(".png"), z, bits=16)
        return EXIT_OK
    if not (args.source and args.target and args.poses):
        raise ValidationError("video mode needs --source, --target and --poses")
    poses, intr, _ = read_poses(args.poses)
    if intr[0] is None:
        raise ValidationError("pose file must carry intrinsics")
    src, tgt = read_png(args.source), read_png(args.target)
    mask = np.zeros(src.shape[:2], bool) if not args.mask else read_png(args.mask)[..., 0] > 0.5
    pair_intr = intr[0].scaled(src.shape[1], src.shape[0])
    pair = KeyframePair(PerspectiveImage(src), poses[0], PerspectiveImage(tgt), poses[-1], mask, WALK_IN, pair_intr)
    size = (intr[0].width, intr[0].height)
    frames = spatial_diffusion_sample(pair, den, sched, stack_raymaps(poses, intr[0]), poses, args.tau_t,
                                      args.tau_q, args.seed, latent_size=size, weight_mode=args.weight_mode,
                                      sigma_scale=args.sigma_scale)
    out.mkdir(parents=True, exist_ok=True)
    for k, fr in enumerate(frames):
        write_png(out / f"frame_{k:03d}.png", fr, bits=16)
    np.save(out / "frames.npy", np.stack(frames))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import feature_distribution, frechet_distance, mtsed_verdict, psnr, ssim
    from .report import emit_report

    rows = []
    if args.metric in ("psnr", "ssim"):
        if not (args.a and args.b):
            raise ValidationError(f"{args.metric} needs --a and --b image directories")
        ra, rb = list_images(args.a), list_images(args.b)
        if [p.name for p in ra] != [p.name for p in rb]:
            raise ValidationError("image directories hold different file names")
        fn = psnr if args.metric == "psnr" else ssim
        for k, (pa, pb) in enumerate(zip(ra, rb)):
            rows.append({"sequence": pa.name, "frames": k, args.metric: fn(read_png(pa), read_png(pb))})
    elif args.metric == "mtsed":
        if not args.matches:
            raise ValidationError("mtsed needs --matches")
        for k, (m, rel, ka, kb) in enumerate(read_matches(args.matches)):
            v = mtsed_verdict(m, rel, ka, kb, args.t_error, args.t_match)
            rows.append({"sequence": k, "frames": k, "mtsed": float(v.passed), "median_error": v.median_error,
                         "matches": v.count})
    else:
        if not (args.features_a and args.features_b):
            raise ValidationError("fvd needs --features-a and --features-b")
        d = frechet_distance(feature_distribution(read_features(args.features_a)),
                             feature_distribution(read_features(args.features_b)))
        rows.append({"sequence": "all", "fvd": d})
    out = Path(args.out)
    for fmt in args.formats:
        emit_report({"rows": rows}, fmt, out.with_suffix("." + fmt))
    print(json.dumps({"rows": len(rows)}))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, load_config, run_pipeline

    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.stages:
        overrides["stages"] = tuple(args.stages)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), **overrides})
    manifest = run_pipeline(cfg)
    print(json.dumps({"status": manifest.status, "outputs": len(manifest.output_hashes())}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .pipeline import tau_sweep
    from .report import emit_report

    res = tau_sweep(args.tau_t_range, args.tau_q_range, args.seed, steps=args.steps)
    out = Path(args.out)
    for fmt in ("csv", "json", "svg"):
        emit_report(res, fmt, out.with_suffix("." + fmt))
    print(json.dumps(res["best"]))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panoview", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("project", help="panorama <-> perspective projection")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--yaw", type=float, default=0.0, help="degrees")
    s.add_argument("--pitch", type=float, default=0.0, help="degrees")
    s.add_argument("--hfov", type=float, default=None, help="degrees")
    s.add_argument("--vfov", type=float, default=None, help="degrees")
    s.add_argument("--out-size", dest="size", type=_size, default=(256, 256), help="WIDTHxHEIGHT of each view")
    s.add_argument("--direction", choices=["pano2persp", "persp2pano"], default="pano2persp")
    s.add_argument("--split", type=int, default=0, help="cut a ring of N views instead of one")
    s.add_argument("--overlap", type=float, default=0.25)
    s.add_argument("--pano-height", type=int, default=512)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("keyframes", help="build keyframe pairs")
    s.add_argument("--pano", required=True)
    s.add_argument("--depth", help="panorama depth (PFM), needed for walk-in")
    s.add_argument("--mode", choices=["walkin", "neighbor"], default="walkin")
    s.add_argument("--walk-ratio", type=float, default=0.8)
    s.add_argument("--yaw", type=float, default=0.0)
    s.add_argument("--pitch", type=float, default=0.0)
    s.add_argument("--hfov", type=float, default=90.0)
    s.add_argument("--views", dest="n_views", type=int, default=6)
    s.add_argument("--overlap", type=float, default=0.25)
    s.add_argument("--out-size", dest="size", type=_size, default=(256, 256))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_keyframes)

    s = sub.add_parser("trajectory", help="generate or resample camera paths")
    s.add_argument("--mode", choices=["star", "interpolate", "upsample"], required=True)
    s.add_argument("--depth")
    s.add_argument("--poses")
    s.add_argument("--center", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    s.add_argument("--n-directions", type=int, default=8)
    s.add_argument("--margin-meters", type=float, default=0.3)
    s.add_argument("--turn-radius-meters", type=float, default=0.0)
    s.add_argument("--frames", type=int, default=16, help="frames per segment (interpolate)")
    s.add_argument("--max-rot-degrees", type=float, default=5.0)
    s.add_argument("--max-trans-meters", type=float, default=0.1)
    s.add_argument("--fps", type=float, default=12.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("raymap", help="Plücker raymaps for a pose file")
    s.add_argument("--poses", required=True)
    s.add_argument("--size", type=_size, default=None)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_raymap)

    s = sub.add_parser("sample", help="run a diffusion sampler")
    s.add_argument("--mode", choices=["panorama", "video"], required=True)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--beta-min", type=float, default=1e-4)
    s.add_argument("--beta-max", type=float, default=0.02)
    s.add_argument("--tau-t", type=float, default=4.7, help="meters")
    s.add_argument("--tau-q", type=float, default=1.68, help="radians")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma-scale", type=float, default=1.0)
    s.add_argument("--weight-mode", choices=["literal", "blend"], default="literal")
    s.add_argument("--denoiser", default="stub", help="oracle:<file>, stub or external:<address>")
    s.add_argument("--known")
    s.add_argument("--mask")
    s.add_argument("--cycle-interval", type=int, default=None, help="0 disables shifting")
    s.add_argument("--source")
    s.add_argument("--target")
    s.add_argument("--poses")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="compute metrics")
    s.add_argument("--metric", choices=["psnr", "ssim", "mtsed", "fvd"], required=True)
    s.add_argument("--a")
    s.add_argument("--b")
    s.add_argument("--matches")
    s.add_argument("--features-a")
    s.add_argument("--features-b")
    s.add_argument("--t-error", type=float, default=2.5)
    s.add_argument("--t-match", type=int, default=10)
    s.add_argument("--formats", nargs="+", choices=["csv", "json", "svg"], default=["csv", "json"])
    s.add_argument("--out", required=True, help="report path prefix")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="run the staged pipeline from a YAML config")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--stages", nargs="+")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("sweep", help="temperature sweep on the toy scene")
    s.add_argument("--tau-t-range", type=_range, default=_range("4.0:5.5:0.1"), help="start:stop:step meters")
    s.add_argument("--tau-q-range", type=_range, default=_range("1.0:2.4:0.1"), help="start:stop:step radians")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
