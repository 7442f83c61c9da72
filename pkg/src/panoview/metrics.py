"""Image and video consistency metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, CameraPose

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, an 11x11 window at sigma 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

T_ERROR = 2.5
T_MATCH = 10


class DegenerateGeometryError(ValueError):
    pass


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_channel(x, y, L):
    f = lambda img: ndimage.gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")
    C1 = (SSIM_K1 * L) ** 2
    C2 = (SSIM_K2 * L) ** 2
    mx, my = f(x), f(y)
    vx = f(x * x) - mx * mx
    vy = f(y * y) - my * my
    cxy = f(x * y) - mx * my
    s = ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
    r = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    return float(s[r:-r, r:-r].mean())


def ssim(a, b, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM, averaged over channels.  Border of 5 px is excluded."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < 11:
        raise ValueError("images must be at least 11x11")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], data_range) for c in range(a.shape[2])]))


# ---------------------------------------------------------------------------
# epipolar consistency
# ---------------------------------------------------------------------------

def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_matrix(pose_rel: CameraPose, K_a: CameraIntrinsics, K_b: CameraIntrinsics) -> np.ndarray:
    """F with ``x_b^T F x_a = 0``; ``pose_rel`` maps camera-a points into camera b."""
    T = pose_rel.translation
    if np.linalg.norm(T) < 1e-12:
        raise DegenerateGeometryError("relative translation is zero; essential matrix undefined")
    E = skew(T) @ pose_rel.R
    return K_b.K_inv.T @ E @ K_a.K_inv


def epipolar_distance_terms(matches, pose_rel: CameraPose, K_a: CameraIntrinsics, K_b: CameraIntrinsics):
    """Point-to-epiline distances ``(d_b, d_a)`` in pixels for ``(xa, ya, xb, yb)`` rows."""
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    F = fundamental_matrix(pose_rel, K_a, K_b)
    xa = np.c_[m[:, :2], np.ones(len(m))]
    xb = np.c_[m[:, 2:], np.ones(len(m))]
    lb = xa @ F.T  # lines in image b
    la = xb @ F  # lines in image a
    r = np.einsum("ij,ij->i", xb, lb)
    d_b = np.abs(r) / np.hypot(lb[:, 0], lb[:, 1])
    d_a = np.abs(r) / np.hypot(la[:, 0], la[:, 1])
    return d_b, d_a


def symmetric_epipolar_distance(matches, pose_rel: CameraPose, K_a: CameraIntrinsics,
                                K_b: CameraIntrinsics) -> np.ndarray:
    d_b, d_a = epipolar_distance_terms(matches, pose_rel, K_a, K_b)
    return d_b + d_a


@dataclass
class MatchVerdict:
    passed: bool
    median_error: float
    count: int
    count_ok: bool
    error_ok: bool


def mtsed_verdict(matches, pose_rel, K_a, K_b, t_error: float = T_ERROR, t_match: int = T_MATCH) -> MatchVerdict:
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    d = symmetric_epipolar_distance(m, pose_rel, K_a, K_b) if len(m) else np.array([])
    med = float(np.median(d)) if len(d) else math.inf
    count_ok = len(m) > t_match
    error_ok = med < t_error
    return MatchVerdict(count_ok and error_ok, med, len(m), count_ok, error_ok)


def mtsed_pair(matches, pose_rel, K_a, K_b, t_error: float = T_ERROR, t_match: int = T_MATCH) -> bool:
    """A frame pair is consistent when more than ``t_match`` matches have median error below ``t_error``."""
    return mtsed_verdict(matches, pose_rel, K_a, K_b, t_error, t_match).passed


def mtsed_sequence(pairs: Sequence[tuple], t_error: float = T_ERROR, t_match: int = T_MATCH) -> float:
    """Fraction of ``(matches, pose_rel, K_a, K_b)`` consecutive-frame pairs that pass."""
    if not pairs:
        return 0.0
    return sum(mtsed_pair(*p, t_error=t_error, t_match=t_match) for p in pairs) / len(pairs)


# ---------------------------------------------------------------------------
# Fréchet distance between Gaussian feature statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureDistribution:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        S = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if S.shape != (mu.size, mu.size):
            raise ValueError("covariance does not match the mean's dimension")
        if not np.allclose(S, S.T, atol=1e-9, rtol=0):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", S)

    @property
    def dim(self) -> int:
        return self.mean.size


def feature_distribution(features) -> FeatureDistribution:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    mu = X.mean(axis=0)
    D = X - mu
    S = D.T @ D / (X.shape[0] - 1)
    return FeatureDistribution(mu, (S + S.T) / 2, X.shape[0])


def _psd_sqrt(S):
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def _trace_sqrt_product(Sp, Sq) -> float:
    """Tr sqrt(Sp Sq) via the symmetric form sqrt(Sp) Sq sqrt(Sp)."""
    for jitter in (0.0, 1e-8):
        try:
            I = np.eye(Sp.shape[0])
            r = _psd_sqrt(Sp + jitter * I)
            M = r @ (Sq + jitter * I) @ r
            w = np.linalg.eigvalsh((M + M.T) / 2)
            return float(np.sum(np.sqrt(np.clip(w, 0, None))))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("matrix square root failed after jitter")


def frechet_distance(p: FeatureDistribution, q: FeatureDistribution) -> float:
    """``|mu_p - mu_q|^2 + Tr(S_p + S_q - 2 sqrt(S_p S_q))``, clamped at 0 near zero."""
    if p.dim != q.dim:
        raise ValueError("distributions differ in dimension")
    dm = p.mean - q.mean
    val = float(dm @ dm) + float(np.trace(p.cov) + np.trace(q.cov)) - 2.0 * _trace_sqrt_product(p.cov, q.cov)
    if -1e-6 < val < 0:
        val = 0.0
    return val


def video_feature_stack(per_frame_features, return_norms: bool = False):
    """One vector per sequence: [mean over frames, mean adjacent difference].

    Each vector is unit-normalised and then multiplied back by its recorded
    norm.  The difference block uses the telescoped form ``(f_last - f_first) / (n - 1)``.
    """
    out, norms = [], []
    dim = None
    for seq in per_frame_features:
        F = np.asarray(seq, dtype=np.float64)
        if F.ndim != 2 or F.shape[0] == 0:
            raise ValueError("each sequence needs a (frames, dim) feature array")
        if dim is None:
            dim = F.shape[1]
        elif F.shape[1] != dim:
            raise ValueError("ragged feature dimensions")
        diff = (F[-1] - F[0]) / (F.shape[0] - 1) if F.shape[0] > 1 else np.zeros(dim)
        v = np.concatenate([F.mean(axis=0), diff])
        n = float(np.linalg.norm(v))
        unit = v / n if n > 0 else v
        out.append(unit * n)
        norms.append(n)
    arr = np.array(out)
    return (arr, np.array(norms)) if return_norms else arr


def fvd(real_sequences, generated_sequences) -> float:
    """Fréchet distance between stacked sequence features of two video sets."""
    return frechet_distance(feature_distribution(video_feature_stack(real_sequences)),
                            feature_distribution(video_feature_stack(generated_sequences)))
