"""Configurable end-to-end runs with a hash manifest, plus the temperature sweep harness.

Stages exchange data through files under ``output_dir`` so any subset can be
re-run on top of earlier outputs:

    project -> keyframes -> trajectory -> raymaps -> sample -> eval
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from . import __version__
from .denoisers import DenoiserInterface, OracleDenoiser, SocketDenoiser, StubDenoiser
from .geometry import CameraIntrinsics, CameraPose, DepthMap, PanoramaImage, PerspectiveImage
from .imageio import (
    list_images,
    read_pfm,
    read_png,
    read_poses,
    write_pfm,
    write_png,
    write_poses,
    write_trajectory,
)
from .keyframes import build_neighboring_pairs, build_walkin_pair, KeyframePair, WALK_IN
from .metrics import feature_distribution, frechet_distance, mtsed_verdict, psnr, ssim, video_feature_stack
from .projection import ViewWindow, perspective_to_pano, split_panorama
from .raymap import read_raymap_volume, stack_raymaps, write_raymap_volume
from .report import emit_report
from .sampler import (
    WEIGHT_MODES,
    compute_spatial_weights,
    make_schedule,
    panorama_outpaint_sample,
    resize_latent,
    spatial_diffusion_sample,
)
from .synthetic import BoxRoom, patch_statistics, synthetic_correspondences
from .trajectory import generate_star_trajectory, slerp_pose

STAGES = ("project", "keyframes", "trajectory", "raymaps", "sample", "eval")
THREADS_ENV = "PANOVIEW_THREADS"
CACHE_ENV = "PANOVIEW_CACHE_DIR"


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


class StageError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    stages: Tuple[str, ...] = STAGES
    output_dir: str = "run"
    seed: int = 0
    scene: str = "synthetic-box"
    panorama_path: Optional[str] = None
    depth_path: Optional[str] = None
    pano_height_px: int = 128
    view_size_px: int = 64
    hfov_degrees: float = 90.0
    n_views: int = 6
    overlap_fraction: float = 0.25
    walk_ratio: float = 0.8
    depth_mode: str = "center"
    n_directions: int = 8
    safety_margin_meters: float = 0.3
    frames_per_pair: int = 8
    latent_size_px: int = 32
    steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.02
    sigma_scale: float = 1.0
    weight_mode: str = "blend"
    tau_t_meters: float = 4.7
    tau_q_radians: float = 1.68
    cycle_interval: Optional[int] = None
    denoiser: str = "oracle"
    eval_reference_dir: Optional[str] = None
    eval_candidate_dir: Optional[str] = None

    def __post_init__(self):
        self.stages = tuple(self.stages)
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.stages and all(s in STAGES for s in self.stages), f"stages must be drawn from {STAGES}")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        need(self.scene in ("synthetic-box", "files"), "scene must be 'synthetic-box' or 'files'")
        if self.scene == "files" and "project" in self.stages:
            need(self.panorama_path and self.depth_path, "scene 'files' needs panorama_path and depth_path")
        need(self.pano_height_px >= 8 and self.pano_height_px % 2 == 0, "pano_height_px must be even and >= 8")
        need(self.view_size_px >= 8, "view_size_px must be >= 8")
        need(0.0 < self.hfov_degrees < 180.0, "hfov_degrees must be in (0, 180)")
        need(3 <= self.n_views <= 12, "n_views must be in [3, 12]")
        need(0.0 <= self.overlap_fraction <= 2.0 / 3.0, "overlap_fraction must be in [0, 2/3]")
        need(0.0 <= self.walk_ratio < 1.0, "walk_ratio must be in [0, 1)")
        need(self.depth_mode in ("center", "p10"), "depth_mode must be 'center' or 'p10'")
        need(self.n_directions >= 3, "n_directions must be >= 3")
        need(self.safety_margin_meters >= 0, "safety_margin_meters must be >= 0")
        need(self.frames_per_pair >= 2, "frames_per_pair must be >= 2")
        need(self.latent_size_px >= 12 and self.latent_size_px % 2 == 0,
             "latent_size_px must be even and >= 12")
        need(isinstance(self.steps, int) and self.steps >= 1, "steps must be a positive integer")
        need(0.0 < self.beta_min <= self.beta_max < 1.0, "need 0 < beta_min <= beta_max < 1")
        need(self.sigma_scale >= 0, "sigma_scale must be >= 0")
        need(self.weight_mode in WEIGHT_MODES, f"weight_mode must be one of {WEIGHT_MODES}")
        need(self.tau_t_meters > 0 and self.tau_q_radians > 0, "temperatures must be positive")
        need(self.cycle_interval is None or self.cycle_interval >= 1, "cycle_interval must be >= 1 or null")
        need(self.denoiser in ("oracle", "stub") or self.denoiser.startswith("external:"),
             "denoiser must be 'oracle', 'stub' or 'external:<address>'")
        if self.stages == ("eval",) and (self.eval_reference_dir or self.eval_candidate_dir):
            need(self.eval_reference_dir and self.eval_candidate_dir,
                 "directory evaluation needs both eval_reference_dir and eval_candidate_dir")

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kw = dict(d)
        if "stages" in kw:
            kw["stages"] = tuple(kw["stages"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    return PipelineConfig.loads(Path(path).read_text())


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(config.dumps())


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What a run read and wrote.  Stages are only ever appended."""

    config_hash: str
    seed: int
    tool_version: str = __version__
    inputs: Dict[str, str] = field(default_factory=dict)
    stages: List[dict] = field(default_factory=list)
    status: str = "running"

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_stage(self, name: str, outputs, seconds: float, root) -> None:
        root = Path(root)
        listing = [{"path": str(Path(p).relative_to(root)), "sha256": sha256_file(p)} for p in sorted(outputs)]
        self.stages.append({"name": name, "outputs": listing, "seconds": round(float(seconds), 6)})

    def output_hashes(self) -> Dict[str, str]:
        return {o["path"]: o["sha256"] for s in self.stages for o in s["outputs"]}

    def verify(self, root) -> List[str]:
        """Paths whose current content no longer matches the recorded hash."""
        bad = []
        for rel, digest in self.output_hashes().items():
            p = Path(root) / rel
            if not p.exists() or sha256_file(p) != digest:
                bad.append(rel)
        return bad

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, root) -> Path:
        p = Path(root) / "manifest.json"
        p.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return p

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _threads() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer")
    import cv2

    cv2.setNumThreads(n)
    return n


def _cached_render(room: BoxRoom, height: int):
    """Synthetic panorama and depth, cached on disk when the cache variable is set."""
    cache = os.environ.get(CACHE_ENV)
    key = hashlib.sha256(repr((room.lo, room.hi, height, __version__)).encode()).hexdigest()[:16]
    if cache:
        f = Path(cache) / f"boxroom-{key}.npz"
        if f.exists():
            with np.load(f) as z:
                return PanoramaImage(z["pano"]), DepthMap(z["depth"])
    pano, depth = room.render_panorama((0.0, 0.0, 0.0), height, 2 * height)
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
        np.savez(Path(cache) / f"boxroom-{key}.npz", pano=pano.data, depth=depth.data)
    return pano, depth


def _require(*paths):
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"missing input {p}; run the earlier stages first")


def _front_window(cfg: PipelineConfig) -> ViewWindow:
    return ViewWindow(0.0, 0.0, math.radians(cfg.hfov_degrees), None, cfg.view_size_px, cfg.view_size_px)


def stage_project(cfg, out: Path, manifest: RunManifest) -> list:
    d = out / "project"
    if cfg.scene == "synthetic-box":
        pano, depth = _cached_render(BoxRoom(), cfg.pano_height_px)
    else:
        manifest.add_input(cfg.panorama_path)
        manifest.add_input(cfg.depth_path)
        pano = PanoramaImage(read_png(cfg.panorama_path)).checked()
        depth = DepthMap(read_pfm(cfg.depth_path))
    files = [d / "pano.png", d / "depth.pfm"]
    write_png(files[0], pano.data, bits=16)
    write_pfm(files[1], depth.data)
    views = split_panorama(pano, cfg.n_views, cfg.overlap_fraction, math.radians(cfg.hfov_degrees),
                           (cfg.view_size_px, cfg.view_size_px))
    meta = []
    for k, (img, win) in enumerate(views):
        f = d / "views" / f"view_{k:02d}.png"
        write_png(f, img.data, bits=16)
        files.append(f)
        meta.append({"yaw_degrees": math.degrees(win.yaw), "pitch_degrees": math.degrees(win.pitch),
                     "hfov_degrees": math.degrees(win.hfov), "vfov_degrees": math.degrees(win.vfov)})
    (d / "views.json").write_text(json.dumps(meta, indent=2))
    files.append(d / "views.json")
    return files


def _load_project(out: Path):
    d = out / "project"
    _require(d / "pano.png", d / "depth.pfm")
    return PanoramaImage(read_png(d / "pano.png")), DepthMap(read_pfm(d / "depth.pfm"))


def stage_keyframes(cfg, out: Path, manifest) -> list:
    pano, depth = _load_project(out)
    d = out / "keyframes"
    pair = build_walkin_pair(pano, depth, _front_window(cfg), cfg.walk_ratio, depth_mode=cfg.depth_mode)
    files = [d / "source.png", d / "target.png", d / "mask.png", d / "pair.json", d / "neighbors.json"]
    write_png(files[0], pair.source.data, bits=16)
    write_png(files[1], pair.target.data, bits=16)
    write_png(files[2], pair.target_inpaint_mask.astype(np.float64))
    write_poses(files[3], [pair.source_pose, pair.target_pose], pair.intrinsics)
    neigh = build_neighboring_pairs(pano, cfg.n_views, cfg.overlap_fraction, math.radians(cfg.hfov_degrees),
                                    (cfg.view_size_px, cfg.view_size_px))
    write_poses(files[4], [p for n in neigh for p in (n.source_pose, n.target_pose)], neigh[0].intrinsics)
    return files


def _load_pair(out: Path) -> KeyframePair:
    d = out / "keyframes"
    _require(d / "source.png", d / "target.png", d / "mask.png", d / "pair.json")
    poses, intr, _ = read_poses(d / "pair.json")
    mask = read_png(d / "mask.png")[..., 0] > 0.5
    return KeyframePair(PerspectiveImage(read_png(d / "source.png")), poses[0],
                        PerspectiveImage(read_png(d / "target.png")), poses[1], mask, WALK_IN, intr[0])


def _latent_intrinsics(cfg, intr: CameraIntrinsics) -> CameraIntrinsics:
    return intr.scaled(cfg.latent_size_px, cfg.latent_size_px)


def stage_trajectory(cfg, out: Path, manifest) -> list:
    _, depth = _load_project(out)
    pair = _load_pair(out)
    d = out / "trajectory"
    star = generate_star_trajectory(depth, (0.0, 0.0, 0.0), cfg.n_directions, cfg.safety_margin_meters)
    n = cfg.frames_per_pair
    frames = [slerp_pose(pair.source_pose, pair.target_pose, k / (n - 1)) for k in range(n)]
    lat = _latent_intrinsics(cfg, pair.intrinsics)
    files = [d / "star.json", d / "pair_frames.json"]
    write_trajectory(files[0], star)
    write_poses(files[1], frames, lat, [k / star.frame_rate for k in range(n)])
    if cfg.scene == "synthetic-box":
        room = BoxRoom()
        renders = [room.render_view(p, lat) for p in frames]
        np.save(d / "gt_frames.npy", np.stack([r[0] for r in renders]))
        np.save(d / "gt_depth.npy", np.stack([r[1].data for r in renders]))
        files += [d / "gt_frames.npy", d / "gt_depth.npy"]
    return files


def _load_frames(out: Path):
    f = out / "trajectory" / "pair_frames.json"
    _require(f)
    poses, intr, _ = read_poses(f)
    return poses, intr[0]


def stage_raymaps(cfg, out: Path, manifest) -> list:
    poses, lat = _load_frames(out)
    f = out / "raymaps" / "pair.plkr"
    f.parent.mkdir(parents=True, exist_ok=True)
    write_raymap_volume(f, stack_raymaps(poses, lat), lat)
    return [f, Path(str(f) + ".json")]


def _make_denoiser(cfg, target) -> DenoiserInterface:
    if cfg.denoiser == "oracle":
        if target is None:
            raise StageError("the oracle denoiser needs ground-truth frames (synthetic scene)")
        return OracleDenoiser(target, shift_aware=True)
    if cfg.denoiser == "stub":
        return StubDenoiser(cfg.seed)
    return SocketDenoiser(cfg.denoiser.split(":", 1)[1])


def stage_sample(cfg, out: Path, manifest) -> list:
    pair = _load_pair(out)
    poses, lat = _load_frames(out)
    _require(out / "raymaps" / "pair.plkr")
    raymaps = read_raymap_volume(out / "raymaps" / "pair.plkr")
    gt_path = out / "trajectory" / "gt_frames.npy"
    gt = np.load(gt_path) if gt_path.exists() else None
    sched = make_schedule(cfg.steps, cfg.beta_min, cfg.beta_max)
    size = (cfg.latent_size_px, cfg.latent_size_px)
    anchors = (gt[0], gt[-1]) if (cfg.denoiser == "oracle" and gt is not None) else None
    frames = spatial_diffusion_sample(
        pair, _make_denoiser(cfg, gt), sched, raymaps, poses, cfg.tau_t_meters, cfg.tau_q_radians,
        cfg.seed, latent_size=size, anchor_latents=anchors, weight_mode=cfg.weight_mode,
        sigma_scale=cfg.sigma_scale)
    d = out / "sample"
    vol = np.stack(frames)
    files = [d / "frames.npy"]
    d.mkdir(parents=True, exist_ok=True)
    np.save(files[0], vol)
    for k, fr in enumerate(frames):
        f = d / "frames" / f"frame_{k:03d}.png"
        write_png(f, fr, bits=16)
        files.append(f)

    # panorama outpainting from the front view's footprint
    pano, _ = _load_project(out)
    L = cfg.latent_size_px
    pano_lat = resize_latent(pano.data, (2 * L, L))
    _, cover = perspective_to_pano(pair.source, _front_window(cfg), (pano.height, pano.width))
    known = resize_latent(cover.astype(np.float64), (2 * L, L))[..., 0] > 0.999
    den = _make_denoiser(cfg, pano_lat if cfg.denoiser == "oracle" else None)
    interval = cfg.cycle_interval or max(1, cfg.steps // 4)
    filled = panorama_outpaint_sample(den, pano_lat, known, sched, interval, cfg.seed, cfg.sigma_scale)
    files.append(d / "pano_outpaint.png")
    write_png(files[-1], filled, bits=16)
    return files


def _eval_dirs(cfg, out: Path) -> list:
    refs = list_images(cfg.eval_reference_dir)
    cands = list_images(cfg.eval_candidate_dir)
    if [p.name for p in refs] != [p.name for p in cands]:
        raise StageError("reference and candidate directories hold different file names")
    rows = []
    for k, (a, b) in enumerate(zip(refs, cands)):
        ia, ib = read_png(a), read_png(b)
        row = {"sequence": a.name, "frames": k, "psnr": psnr(ia, ib)}
        if min(ia.shape[:2]) >= 11:
            row["ssim"] = ssim(ia, ib)
        rows.append(row)
    return rows


def evaluate_frames(frames, gt, poses, intr, gt_depth=None, window: int = 4) -> Tuple[list, dict]:
    """Per-frame PSNR/SSIM, consecutive-pair epipolar checks and a sequence FVD."""
    rows = []
    for k in range(len(frames)):
        row = {"sequence": "pair", "frames": k, "psnr": psnr(frames[k], gt[k]), "ssim": ssim(frames[k], gt[k])}
        if gt_depth is not None and k + 1 < len(frames):
            rel = poses[k].relative_to(poses[k + 1])
            if np.linalg.norm(rel.translation) > 1e-9:
                m = synthetic_correspondences(DepthMap(gt_depth[k]), intr, intr, rel, 50, seed=k)
                row["mtsed"] = float(mtsed_verdict(m, rel, intr, intr).passed)
        rows.append(row)
    seqs_gt = [[patch_statistics(f, 4) for f in gt[i:i + window]] for i in range(len(gt) - window + 1)]
    seqs_gen = [[patch_statistics(f, 4) for f in frames[i:i + window]] for i in range(len(frames) - window + 1)]
    summary = {"frames": len(frames)}
    if len(seqs_gt) >= 2:
        summary["fvd"] = frechet_distance(feature_distribution(video_feature_stack(seqs_gt)),
                                          feature_distribution(video_feature_stack(seqs_gen)))
    checks = [r["mtsed"] for r in rows if "mtsed" in r]
    if checks:
        summary["mtsed"] = float(np.mean(checks))
    summary["psnr"] = float(np.mean([r["psnr"] for r in rows]))
    summary["ssim"] = float(np.mean([r["ssim"] for r in rows]))
    return rows, summary


def stage_eval(cfg, out: Path, manifest) -> list:
    d = out / "eval"
    if cfg.eval_reference_dir and cfg.eval_candidate_dir:
        for p in list_images(cfg.eval_reference_dir) + list_images(cfg.eval_candidate_dir):
            manifest.add_input(p)
        rows = _eval_dirs(cfg, out)
        results = {"rows": rows}
    else:
        _require(out / "sample" / "frames.npy", out / "trajectory" / "gt_frames.npy")
        frames = np.load(out / "sample" / "frames.npy")
        gt = np.load(out / "trajectory" / "gt_frames.npy")
        gd = out / "trajectory" / "gt_depth.npy"
        poses, intr = _load_frames(out)
        rows, summary = evaluate_frames(frames, gt, poses, intr, np.load(gd) if gd.exists() else None)
        results = {"rows": rows, "summary": summary}
    files = [emit_report(results, "csv", d / "metrics.csv"), emit_report(results, "json", d / "metrics.json"),
             emit_report(results, "svg", d / "metrics.svg")]
    return files


STAGE_FUNCS = {
    "project": stage_project,
    "keyframes": stage_keyframes,
    "trajectory": stage_trajectory,
    "raymaps": stage_raymaps,
    "sample": stage_sample,
    "eval": stage_eval,
}


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Run the selected stages in order, writing ``manifest.json`` after each one.

    A failing stage marks the manifest ``failed`` (keeping the finished
    stages) and re-raises.
    """
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _threads()
    manifest = RunManifest(config.digest(), config.seed)
    save_config(config, out / "config.yaml")
    for name in STAGES:
        if name not in config.stages:
            continue
        t0 = time.perf_counter()
        try:
            files = STAGE_FUNCS[name](config, out, manifest)
        except Exception as exc:
            manifest.status = f"failed: {name}: {exc}"
            manifest.write(out)
            raise
        manifest.add_stage(name, files, time.perf_counter() - t0, out)
        manifest.write(out)
    manifest.status = "complete"
    manifest.write(out)
    return manifest


# ---------------------------------------------------------------------------
# temperature sweep
# ---------------------------------------------------------------------------

class AnchorBiasedOracle(DenoiserInterface):
    """Per-anchor clean predictions whose error grows with distance from the anchor.

    Anchor ``a`` predicts ``truth + bias * (|dT| + angle) * P_a + noise * N_a``
    with fixed random fields ``P_a`` and ``N_a``.  Blending the anchors trades
    locality (trust the near anchor) against averaging out ``N_a``, which
    gives the sweep an interior optimum.
    """

    prediction = "v"

    def __init__(self, truth, frame_poses, anchor_poses, bias=0.15, noise=0.1, seed=0):
        self.truth = np.asarray(truth, dtype=np.float64)
        rng = np.random.default_rng(seed)
        self.preds = []
        for a in anchor_poses:
            dist = np.array([np.linalg.norm(p.translation - a.translation)
                             + 2.0 * math.acos(min(1.0, abs(float(p.rotation @ a.rotation))))
                             for p in frame_poses])
            P = rng.standard_normal(self.truth.shape[1:])
            Nf = rng.standard_normal(self.truth.shape)
            self.preds.append(self.truth + bias * dist.reshape(-1, 1, 1, 1) * P + noise * Nf)

    def __call__(self, z, t, cond=None):
        return self.preds[int((cond or {}).get("anchor", 0))].copy()


def tau_sweep(tau_t_values, tau_q_values, seed: int = 0, frames: int = 8, size: int = 16,
              steps: int = 10, bias: float = 0.15, noise: float = 0.1) -> dict:
    """Score every (tau_t, tau_q) on a toy two-anchor scene.

    The score is the mean PSNR of the blended sampler output against the
    toy ground truth.  Returns ``{"tau_t", "tau_q", "scores", "rows", "best"}``
    with ``scores[i, j]`` for ``tau_q_values[i]`` and ``tau_t_values[j]``.
    """
    from .geometry import quat_from_axis_angle

    pa = CameraPose.identity()
    pb = CameraPose(quat_from_axis_angle([0, 0, 1], math.radians(60)), [3.0, 0.0, 0.0])
    poses = [slerp_pose(pa, pb, k / (frames - 1)) for k in range(frames)]
    intr = CameraIntrinsics.from_fov(size, size, math.pi / 2)
    rng = np.random.default_rng(seed)
    truth = np.clip(0.5 + 0.2 * rng.standard_normal((frames, size, size, 3)), 0, 1)
    img = PerspectiveImage(truth[0])
    pair = KeyframePair(img, pa, PerspectiveImage(truth[-1]), pb, np.zeros((size, size), bool), WALK_IN, intr)
    raymaps = stack_raymaps(poses, intr)
    oracle = AnchorBiasedOracle(truth, poses, [pa, pb], bias, noise, seed)
    sched = make_schedule(steps)
    scores = np.zeros((len(tau_q_values), len(tau_t_values)))
    rows = []
    for i, tq in enumerate(tau_q_values):
        for j, tt in enumerate(tau_t_values):
            z = spatial_diffusion_sample(pair, oracle, sched, raymaps, poses, tt, tq, seed,
                                         anchor_latents=(truth[0], truth[-1]), weight_mode="blend",
                                         sigma_scale=0.0, return_latent=True)
            s = float(np.mean([psnr(z[k], truth[k]) for k in range(1, frames - 1)]))
            scores[i, j] = s
            rows.append({"tau_t": float(tt), "tau_q": float(tq), "score": s})
    k = np.unravel_index(np.argmax(scores), scores.shape)
    best = {"tau_t": float(tau_t_values[k[1]]), "tau_q": float(tau_q_values[k[0]]), "score": float(scores[k])}
    return {"tau_t": [float(x) for x in tau_t_values], "tau_q": [float(x) for x in tau_q_values],
            "scores": scores.tolist(), "rows": rows, "best": best}


def weights_table(frame_poses, anchor_poses, tau_t, tau_q) -> list:
    w = compute_spatial_weights(frame_poses, anchor_poses, tau_t, tau_q)
    return [{"frame": j, **{f"gamma_{a}": float(w.gamma[j, a]) for a in range(w.gamma.shape[1])}}
            for j in range(w.gamma.shape[0])]
