"""Analytic scenes and data generators for closed-loop tests and demos."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, DepthMap, PanoramaImage
from .projection import equirect_directions, sphere_to_world


def band_limited_panorama(height: int = 256, width: int = 512, channels: int = 3, seed: int = 0,
                          n_terms: int = 4, max_freq: float = 2.0) -> PanoramaImage:
    """Smooth pattern defined on the sphere, so it is continuous across seam and poles."""
    rng = np.random.default_rng(seed)
    d = equirect_directions(width, height)
    out = np.full((height, width, channels), 0.5)
    for c in range(channels):
        for _ in range(n_terms):
            k = rng.normal(size=3)
            k *= rng.uniform(0.5, max_freq) / np.linalg.norm(k)
            out[..., c] += (0.35 / n_terms) * np.sin(d @ k + rng.uniform(0, 2 * np.pi))
    return PanoramaImage(np.clip(out, 0.0, 1.0))


def analytic_panorama(height: int = 256, width: int = 512) -> PanoramaImage:
    """Channel 0 encodes longitude, channel 1 latitude, channel 2 is zero."""
    lon, lat = equirect_lonlat(height, width)
    return PanoramaImage(np.stack([lon / (2 * np.pi) + 0.5, lat / np.pi + 0.5, np.zeros_like(lon)], -1))


def equirect_lonlat(height: int, width: int):
    lon = ((np.arange(width) + 0.5) / width - 0.5) * 2 * np.pi
    lat = -((np.arange(height) + 0.5) / height - 0.5) * np.pi
    return np.meshgrid(lon, lat)


def _texture(points: np.ndarray) -> np.ndarray:
    """Smooth colour field over 3-D points, values in [0.1, 0.9]."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    r = 0.5 + 0.2 * np.sin(1.7 * x + 0.3) + 0.2 * np.cos(2.3 * y - 0.5 * z)
    g = 0.5 + 0.2 * np.sin(2.1 * y + 1.1) + 0.2 * np.sin(1.3 * z + 0.7 * x)
    b = 0.5 + 0.2 * np.cos(1.9 * z - 0.4) + 0.2 * np.sin(1.1 * x - 1.5 * y)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


@dataclass(frozen=True)
class BoxRoom:
    """Axis-aligned box room in world coordinates (x forward, y left, z up)."""

    lo: tuple = (-3.0, -2.5, -1.4)
    hi: tuple = (4.0, 2.0, 1.3)

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance along ``dirs`` (not necessarily unit) from interior origins to the walls."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = (hi - origins) / dirs
            t_lo = (lo - origins) / dirs
        t = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
        return t.min(axis=-1)

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p > np.asarray(self.lo)) and np.all(p < np.asarray(self.hi)))

    def render_panorama(self, center=(0.0, 0.0, 0.0), height: int = 256, width: int = 512):
        """Equirect colour panorama and radial depth seen from ``center``."""
        c = np.asarray(center, dtype=np.float64)
        d = sphere_to_world(equirect_directions(width, height))
        t = self.raycast(c, d)
        pts = c + d * t[..., None]
        return PanoramaImage(_texture(pts)), DepthMap(t)

    def render_view(self, pose: CameraPose, intrinsics: CameraIntrinsics):
        """Colour image and z-depth seen by a pinhole camera."""
        rays = intrinsics.pixel_grid() @ intrinsics.K_inv.T
        dirs = rays @ pose.R.T
        t = self.raycast(pose.translation, dirs)
        pts = pose.translation + dirs * t[..., None]
        return _texture(pts), DepthMap(t)


def cylinder_room_depth(radius: float, height: int = 64, width: int = 128,
                        half_height: float = 10.0) -> DepthMap:
    """Radial panorama depth of a cylindrical room centred on the camera."""
    _, lat = equirect_lonlat(height, width)
    horiz = radius / np.maximum(np.cos(lat), 1e-12)
    vert = half_height / np.maximum(np.abs(np.sin(lat)), 1e-12)
    return DepthMap(np.minimum(horiz, vert))


def square_room_depth(half_side: float, height: int = 64, width: int = 128,
                      half_height: float = 10.0) -> DepthMap:
    """Radial panorama depth of a square room, walls at distance ``half_side``."""
    room = BoxRoom((-half_side, -half_side, -half_height), (half_side, half_side, half_height))
    return room.render_panorama((0.0, 0.0, 0.0), height, width)[1]


def fronto_parallel_plane(intrinsics: CameraIntrinsics, distance: float) -> DepthMap:
    return DepthMap(np.full((intrinsics.height, intrinsics.width), float(distance)))


def checker_texture(height: int, width: int, period: int = 8, channels: int = 3) -> np.ndarray:
    v, u = np.mgrid[0:height, 0:width]
    c = (((u // period) + (v // period)) % 2).astype(np.float64)
    base = 0.2 + 0.6 * c
    return np.repeat(base[..., None], channels, axis=-1)


def synthetic_correspondences(depth: DepthMap, K_a: CameraIntrinsics, K_b: CameraIntrinsics,
                              b_from_a: CameraPose, n: int, seed: int = 0):
    """Exact matches between two cameras from camera a's depth map.

    Returns an ``(m, 4)`` array of ``(xa, ya, xb, yb)`` continuous pixel
    coordinates, keeping only matches that land inside image b.
    """
    rng = np.random.default_rng(seed)
    picks = []
    tries = 0
    while sum(len(p) for p in picks) < n and tries < 50:
        tries += 1
        xa = rng.uniform(0, K_a.width, size=4 * n)
        ya = rng.uniform(0, K_a.height, size=4 * n)
        iz = depth.data[np.minimum(ya.astype(int), K_a.height - 1), np.minimum(xa.astype(int), K_a.width - 1)]
        pa = np.stack([(xa - K_a.cx) / K_a.fx, (ya - K_a.cy) / K_a.fy, np.ones_like(xa)], -1) * iz[:, None]
        pb = pa @ b_from_a.R.T + b_from_a.translation
        ok = pb[:, 2] > 1e-9
        xb = K_b.fx * pb[:, 0] / np.where(ok, pb[:, 2], 1) + K_b.cx
        yb = K_b.fy * pb[:, 1] / np.where(ok, pb[:, 2], 1) + K_b.cy
        ok &= (xb >= 0) & (xb < K_b.width) & (yb >= 0) & (yb < K_b.height)
        picks.append(np.stack([xa, ya, xb, yb], -1)[ok])
    allm = np.concatenate(picks, axis=0)
    return allm[:n]


def stub_clip_features(image: np.ndarray, dim: int = 64) -> np.ndarray:
    """Deterministic hash-seeded stand-in for an image embedding, unit norm."""
    digest = hashlib.sha256(np.ascontiguousarray(np.asarray(image, dtype=np.float32)).tobytes()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def patch_statistics(frame: np.ndarray, grid: int = 8) -> np.ndarray:
    """Grid of luminance means and variances, a ``2 * grid**2`` feature vector (128 for grid 8)."""
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f.mean(axis=2)
    H, W = f.shape
    ys = np.linspace(0, H, grid + 1).astype(int)
    xs = np.linspace(0, W, grid + 1).astype(int)
    means, vars_ = [], []
    for i in range(grid):
        for j in range(grid):
            cell = f[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            means.append(cell.mean())
            vars_.append(cell.var())
    return np.array(means + vars_)


def synthetic_video_features(videos: Sequence[Sequence[np.ndarray]], grid: int = 8) -> list:
    return [[patch_statistics(fr, grid) for fr in vid] for vid in videos]
