"""Diffusion sampling: DDPM reverse steps, masked outpainting, panorama cycle
shifts and the pose-weighted video sampler.

Latents are float64 arrays with channels last.  A panorama latent is
(H, W, C); a video volume is (N, H, W, C).  Masks are boolean with ``True``
marking known content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import cv2
import numpy as np
from scipy.special import softmax

from .denoisers import DenoiserInterface, predict_clean
from .geometry import CameraPose
from .keyframes import KeyframePair
from .raymap import RaymapVolume


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by the run seed and a stream id (step, frame, ...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step quantities indexed by ``t = 1 .. T``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", 1.0 - b)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - b))
        object.__setattr__(self, "sigmas", np.sqrt(b))

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        return 0.0 if t == 1 else float(self.sigmas[t - 1])


def make_schedule(T: int = 50, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear variance schedule from ``beta_min`` to ``beta_max`` over T steps."""
    if int(T) != T or T < 1:
        raise ValueError("T must be a positive integer")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    return NoiseSchedule(np.linspace(beta_min, beta_max, int(T)))


def ddpm_step(z_t, eps, schedule: NoiseSchedule, t: int, rng: Optional[np.random.Generator] = None,
              noise: Optional[np.ndarray] = None, sigma_scale: float = 1.0) -> np.ndarray:
    """One reverse step ``z_{t-1} = (z_t - (1-a_t)/sqrt(1-abar_t) eps) / sqrt(a_t) + sigma_t u``.

    ``sigma_t`` is zero at t = 1.  The noise ``u`` comes from ``noise`` if
    given, else from ``rng``; with ``sigma_scale = 0`` none is drawn.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    z_t = np.asarray(z_t, dtype=np.float64)
    a = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    out = (z_t - (1.0 - a) / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
    sig = schedule.sigma(t) * sigma_scale
    if sig > 0:
        if noise is None:
            if rng is None:
                raise ValueError("stochastic step needs rng or noise")
            noise = rng.standard_normal(z_t.shape)
        out = out + sig * noise
    return out


def noise_from_clean(z_t, v_hat, schedule: NoiseSchedule, t: int, gain=1.0) -> np.ndarray:
    """Noise estimate ``(z_t - gain sqrt(abar_t) v_hat) / sqrt(1 - abar_t)``.

    ``gain`` broadcasts against the latent, e.g. a per-frame weight of shape (N, 1, 1, 1).
    """
    ab = schedule.alpha_bar(t)
    return (z_t - gain * math.sqrt(ab) * v_hat) / math.sqrt(1.0 - ab)


def forward_noise(x0, schedule: NoiseSchedule, t: int, noise) -> np.ndarray:
    """Sample of q(z_t | x0) for a given standard-normal ``noise``."""
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def outpaint_fuse(z_known, z_unknown, mask) -> np.ndarray:
    """``m * known + (1 - m) * unknown`` as an exact per-element select.

    ``mask`` may omit the trailing channel axis.
    """
    z_known = np.asarray(z_known)
    z_unknown = np.asarray(z_unknown)
    if z_known.shape != z_unknown.shape:
        raise ValueError("known and unknown paths differ in shape")
    m = np.asarray(mask).astype(bool)
    if m.shape != z_known.shape:
        if m.shape != z_known.shape[:-1]:
            raise ValueError(f"mask shape {m.shape} does not match latent {z_known.shape}")
        m = m[..., None]
    return np.where(m, z_known, z_unknown)


def cycle_shift(z, k: int = 1) -> np.ndarray:
    """Roll the panorama latent right by ``k`` quarter widths (columns wrap)."""
    z = np.asarray(z)
    axis = 1 if z.ndim >= 3 else z.ndim - 1
    W = z.shape[axis]
    if W % 4:
        raise ValueError(f"width {W} is not divisible by 4")
    return np.roll(z, (k % 4) * (W // 4), axis=axis)


def seam_energy(z) -> float:
    """Mean absolute difference between the last and first columns."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(np.abs(z[:, -1] - z[:, 0])))


def panorama_outpaint_sample(denoiser: DenoiserInterface, known_latent, known_mask,
                             schedule: NoiseSchedule, cycle_interval: Optional[int] = None,
                             seed: int = 0, sigma_scale: float = 1.0, z_init=None,
                             cond: Optional[dict] = None) -> np.ndarray:
    """Fill the unknown part of a panorama latent (H, W, C).

    Each reverse step fuses the denoised latent with the forward-noised known
    latent.  Every ``cycle_interval`` steps the latent, mask and known latent
    are rolled a quarter turn so every seam spends time in the interior; the
    result is rolled back at the end.  ``cond["column_shift"]`` tells the
    denoiser the current roll in columns.
    """
    x_known = np.asarray(known_latent, dtype=np.float64)
    if x_known.ndim != 3:
        raise ValueError("panorama latent must be (H, W, C)")
    mask = np.asarray(known_mask).astype(bool)
    if mask.shape != x_known.shape[:2]:
        raise ValueError("mask must match the latent's spatial size")
    W = x_known.shape[1]
    if cycle_interval is not None and (cycle_interval < 1 or W % 4):
        raise ValueError("cycle shifting needs interval >= 1 and width divisible by 4")
    T = schedule.T
    z = make_rng(seed, 0).standard_normal(x_known.shape) if z_init is None else np.array(z_init, dtype=np.float64)
    turns = 0
    cond = dict(cond or {})
    for t in range(T, 0, -1):
        cond["column_shift"] = (turns % 4) * (W // 4)
        v_hat = predict_clean(denoiser, z, t, schedule, cond)
        eps = noise_from_clean(z, v_hat, schedule, t)
        unknown = ddpm_step(z, eps, schedule, t, make_rng(seed, t, 1), sigma_scale=sigma_scale)
        known = forward_noise(x_known, schedule, t - 1, make_rng(seed, t, 2).standard_normal(x_known.shape))
        z = outpaint_fuse(known, unknown, mask)
        done = T - t + 1
        if cycle_interval is not None and t > 1 and done % cycle_interval == 0:
            z, mask, x_known = cycle_shift(z), cycle_shift(mask), cycle_shift(x_known)
            turns += 1
    return cycle_shift(z, -turns)


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Per-frame (rows) by per-anchor (columns) weights."""

    omega: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    tau_t: float
    tau_q: float


def compute_spatial_weights(frame_poses: Sequence[CameraPose], anchor_poses: Sequence[CameraPose],
                            tau_t: float, tau_q: float) -> SpatialWeights:
    """Position and orientation affinities of each frame to each anchor.

    ``omega = exp(-|dT| / tau_t)``, ``beta = exp(-2 acos|<q_i, q_j>| / tau_q)``
    and ``gamma`` is their product normalised over anchors.  The normalisation
    runs in log space, so rows sum to one even when every product underflows.
    Infinite temperatures give uniform weights.
    """
    if not (tau_t > 0 and tau_q > 0):
        raise ValueError("temperatures must be positive")
    if len(anchor_poses) == 0:
        raise ValueError("need at least one anchor")
    Tf = np.array([p.translation for p in frame_poses])
    Ta = np.array([p.translation for p in anchor_poses])
    Qf = np.array([p.rotation for p in frame_poses])
    Qa = np.array([p.rotation for p in anchor_poses])
    dist = np.linalg.norm(Tf[:, None, :] - Ta[None, :, :], axis=-1)
    ang = 2.0 * np.arccos(np.clip(np.abs(Qf @ Qa.T), -1.0, 1.0))
    log_w = -dist / tau_t
    log_b = -ang / tau_q
    gamma = softmax(log_w + log_b, axis=1)
    return SpatialWeights(np.exp(log_w), np.exp(log_b), gamma, float(tau_t), float(tau_q))


def resize_latent(image, size) -> np.ndarray:
    """Area-resample an (H, W, C) image to ``size`` = (width, height)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if (img.shape[1], img.shape[0]) == tuple(size):
        return img.copy()
    out = cv2.resize(img, tuple(int(s) for s in size), interpolation=cv2.INTER_AREA)
    return out.reshape(size[1], size[0], -1)


def resize_mask(mask, size) -> np.ndarray:
    """Down-sample a boolean mask; a latent cell is set if any covered pixel is set."""
    m = np.asarray(mask, dtype=np.float64)
    if (m.shape[1], m.shape[0]) == tuple(size):
        return m > 0.5
    return cv2.resize(m, tuple(int(s) for s in size), interpolation=cv2.INTER_AREA) > 0


WEIGHT_MODES = ("literal", "blend")


def spatial_diffusion_sample(pair: KeyframePair, denoiser: DenoiserInterface, schedule: NoiseSchedule,
                             raymaps: RaymapVolume, frame_poses: Sequence[CameraPose], tau_t: float,
                             tau_q: float, seed: int = 0, *, latent_size=None, anchor_latents=None,
                             features=None, weight_mode: str = "literal", anchors: str = "pair",
                             sigma_scale: float = 1.0,
                             encoder: Optional[Callable] = None, decoder: Optional[Callable] = None,
                             return_latent: bool = False):
    """Generate the frames between the two keyframes of ``pair``.

    Frame 0 is the source keyframe and frame N-1 the target.  Their latents
    are held fixed through the known-region fusion, except the source's
    walk-in border (``pair.target_inpaint_mask``) which is generated.

    ``weight_mode``:
      * ``"literal"``: one denoiser call per step; each frame's clean
        prediction is scaled by its weight toward the source anchor before
        the noise estimate.  With ``anchors="source"`` that weight is 1.
      * ``"blend"``: one denoiser call per anchor (``cond["anchor"]``); the
        predictions are mixed per frame with the normalised weights.

    Returns the decoded frames as a list (identity decoder by default).
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
    N = len(frame_poses)
    if N < 2:
        raise ValueError("need at least the two keyframe poses")
    if raymaps.frames != N:
        raise ValueError(f"raymap volume has {raymaps.frames} frames for {N} poses")
    if not frame_poses[0].allclose(pair.source_pose, 1e-6) or not frame_poses[-1].allclose(pair.target_pose, 1e-6):
        raise ValueError("first and last frame poses must be the keyframe poses")
    if anchors == "pair":
        anchor_poses = [pair.source_pose, pair.target_pose]
    elif anchors == "source":
        anchor_poses = [pair.source_pose]
    else:
        raise ValueError("anchors must be 'pair' or 'source'")

    if latent_size is None:
        latent_size = (pair.source.width, pair.source.height)
    enc = encoder or (lambda img: resize_latent(img, latent_size))
    if anchor_latents is None:
        anchor_latents = (enc(pair.source.data), enc(pair.target.data))
    src_lat = np.asarray(anchor_latents[0], dtype=np.float64)
    tgt_lat = np.asarray(anchor_latents[1], dtype=np.float64)
    if src_lat.shape != tgt_lat.shape or src_lat.ndim != 3:
        raise ValueError("anchor latents must share an (H, W, C) shape")
    Hl, Wl, C = src_lat.shape

    known = np.zeros((N, Hl, Wl, C))
    known[0], known[-1] = src_lat, tgt_lat
    mask = np.zeros((N, Hl, Wl), dtype=bool)
    mask[0] = ~resize_mask(pair.target_inpaint_mask, (Wl, Hl))
    mask[-1] = True

    w = compute_spatial_weights(frame_poses, anchor_poses, tau_t, tau_q)
    cond = {"raymaps": raymaps.data, "features": features, "tau_t": tau_t, "tau_q": tau_q}

    z = make_rng(seed, 0).standard_normal((N, Hl, Wl, C))
    for t in range(schedule.T, 0, -1):
        if weight_mode == "literal":
            v_hat = predict_clean(denoiser, z, t, schedule, cond)
            gain = w.gamma[:, 0].reshape(N, 1, 1, 1)
        else:
            v_hat = np.zeros_like(z)
            for a in range(len(anchor_poses)):
                v_a = predict_clean(denoiser, z, t, schedule, dict(cond, anchor=a))
                v_hat += w.gamma[:, a].reshape(N, 1, 1, 1) * v_a
            gain = 1.0
        eps = noise_from_clean(z, v_hat, schedule, t, gain)
        if sigma_scale > 0 and schedule.sigma(t) > 0:
            u = np.stack([make_rng(seed, t, 1, j).standard_normal((Hl, Wl, C)) for j in range(N)])
        else:
            u = None
        unknown = ddpm_step(z, eps, schedule, t, noise=u, sigma_scale=sigma_scale)
        kn = np.stack([make_rng(seed, t, 2, j).standard_normal((Hl, Wl, C)) for j in (0, N - 1)])
        known_t = np.zeros_like(z)
        known_t[[0, N - 1]] = forward_noise(known[[0, N - 1]], schedule, t - 1, kn)
        z = outpaint_fuse(known_t, unknown, mask)
    if return_latent:
        return z
    dec = decoder or (lambda lat: lat)
    return [dec(z[j]) for j in range(N)]
