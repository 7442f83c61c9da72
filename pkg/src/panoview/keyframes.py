"""Keyframe pairs from a panorama: neighbouring rotations and simulated walk-in.

The walk-in target is the zoomed centre crop of the source view, with the
zoom ``s / f`` given by :func:`walk_in_scale`.  Its pose is translated along
the viewing axis by the distance that produces the same magnification on the
scene plane at the axis depth, so the crop and the rigid-motion model agree
on that plane.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .geometry import CameraIntrinsics, CameraPose, DepthMap, PanoramaImage, PerspectiveImage
from .projection import (
    ViewWindow,
    camera_directions,
    pano_to_perspective,
    plan_views,
    sample_image,
    sample_equirect,
    sphere_to_equirect,
    view_rotation,
    window_intrinsics,
    window_pose,
)

NEIGHBORING = "neighboring"
WALK_IN = "walk_in"


@dataclass(frozen=True, eq=False)
class WarpField:
    """Result of splatting source pixels into a target camera.

    ``coords`` holds continuous target coordinates (x, y) per source pixel, NaN
    where the point falls behind the target camera.  ``hits`` counts splats per
    target pixel; ``occupancy`` is the hit set after a 3x3 closing.
    """

    coords: np.ndarray
    source_depth_in_target: np.ndarray
    hits: np.ndarray
    occupancy: np.ndarray
    depth: np.ndarray

    @property
    def in_frame(self) -> np.ndarray:
        H, W = self.occupancy.shape
        x, y = self.coords[..., 0], self.coords[..., 1]
        with np.errstate(invalid="ignore"):
            return np.isfinite(x) & (x >= 0) & (x < W) & (y >= 0) & (y < H)


@dataclass(frozen=True, eq=False)
class KeyframePair:
    """Two keyframes plus the mask of content the warp between them cannot explain.

    For walk-in pairs ``target_inpaint_mask`` is the warped mask on the common
    frame grid: the peripheral band of the source frame that lies outside the
    walked-in target's field of view.  Neighbouring pairs have an empty mask.
    """

    source: PerspectiveImage
    source_pose: CameraPose
    target: PerspectiveImage
    target_pose: CameraPose
    target_inpaint_mask: np.ndarray
    relation: str
    intrinsics: CameraIntrinsics
    source_window: Optional[ViewWindow] = None
    target_window: Optional[ViewWindow] = None

    def __post_init__(self):
        shape = self.source.data.shape[:2]
        if self.target.data.shape[:2] != shape or self.target_inpaint_mask.shape != shape:
            raise ValueError("keyframe images and mask must share dimensions")
        if self.relation not in (NEIGHBORING, WALK_IN):
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.relation == NEIGHBORING and not np.array_equal(
                self.source_pose.translation, self.target_pose.translation):
            raise ValueError("neighbouring keyframes must share the camera centre")


def walk_in_scale(target_distance: float, depth_max: float, focal: float, hfov: float) -> float:
    """Zoomed focal length for a walk toward the scene.

    ``s = f / tan((1 - c) * hfov / 2)`` with ``c = target_distance / depth_max``.
    """
    if depth_max <= 0:
        raise ValueError("depth_max must be positive")
    if not 0.0 < hfov < math.pi:
        raise ValueError("hfov must lie in (0, pi)")
    c = target_distance / depth_max
    if c < 0:
        raise ValueError("target distance must be non-negative")
    if c >= 1.0:
        raise ValueError(f"singular walk-in configuration: c = {c:.6g} >= 1")
    return focal / math.tan((1.0 - c) * hfov / 2.0)


def walk_in_magnification(walk_ratio: float, hfov: float) -> float:
    """Image magnification of the walk-in crop relative to the source view."""
    return walk_in_scale(walk_ratio, 1.0, math.tan(hfov / 2.0), hfov)


def _close(mask: np.ndarray) -> np.ndarray:
    st = np.ones((3, 3), dtype=bool)
    dil = ndimage.binary_dilation(mask, structure=st)
    return ndimage.binary_erosion(dil, structure=st, border_value=1) | mask


def forward_warp(source: PerspectiveImage, depth: DepthMap, source_pose: CameraPose,
                 target_pose: CameraPose, intrinsics: CameraIntrinsics,
                 target_intrinsics: Optional[CameraIntrinsics] = None,
                 close_holes: bool = True):
    """Forward-warp a view into another camera using its z-depth.

    Nearest-pixel splatting with a z-buffer: the smaller target depth wins and
    exact ties go to the lower row-major source index.  A single 3x3 closing of
    the hit mask fills one-pixel resampling holes; the filled pixels take the
    mean of their splatted neighbours.

    Returns ``(warped PerspectiveImage, WarpField, inpaint_mask)``.
    """
    H, W = source.height, source.width
    if depth.data.shape != (H, W):
        raise ValueError("depth map does not match the source image")
    if (intrinsics.width, intrinsics.height) != (W, H):
        raise ValueError("intrinsics do not match the source image")
    tk = intrinsics if target_intrinsics is None else target_intrinsics
    Ht, Wt = tk.height, tk.width

    rays = intrinsics.pixel_grid() @ intrinsics.K_inv.T
    pts = rays * depth.data[..., None]
    rel = source_pose.relative_to(target_pose)
    pts_t = pts @ rel.R.T + rel.translation
    z = pts_t[..., 2]
    front = z > 1e-12
    zs = np.where(front, z, 1.0)
    px = tk.fx * pts_t[..., 0] / zs + tk.cx
    py = tk.fy * pts_t[..., 1] / zs + tk.cy
    coords = np.stack([np.where(front, px, np.nan), np.where(front, py, np.nan)], axis=-1)

    with np.errstate(invalid="ignore"):
        inside = front & (px >= 0) & (px < Wt) & (py >= 0) & (py < Ht)
    src_idx = np.flatnonzero(inside.ravel())
    tgt_idx = (np.floor(py).astype(np.int64) * Wt + np.floor(px).astype(np.int64)).ravel()[src_idx] \
        if src_idx.size else np.zeros(0, dtype=np.int64)
    zt = z.ravel()[src_idx]

    C = source.channels
    out = np.zeros((Ht * Wt, C))
    zbuf = np.full(Ht * Wt, np.inf)
    hits = np.bincount(tgt_idx, minlength=Ht * Wt).reshape(Ht, Wt)
    if src_idx.size:
        order = np.lexsort((src_idx, zt))
        first_tgt, first_pos = np.unique(tgt_idx[order], return_index=True)
        winners = src_idx[order][first_pos]
        out[first_tgt] = source.data.reshape(-1, C)[winners]
        zbuf[first_tgt] = zt[order][first_pos]
    else:
        warnings.warn("forward_warp: no source pixel lands inside the target view", RuntimeWarning)
    out = out.reshape(Ht, Wt, C)
    zbuf = zbuf.reshape(Ht, Wt)

    hit = hits > 0
    occ = _close(hit) if close_holes else hit
    filled = occ & ~hit
    if filled.any():
        k = np.ones((3, 3))
        wsum = ndimage.correlate(hit.astype(np.float64), k, mode="constant")
        den = np.maximum(wsum, 1.0)
        for c in range(C):
            s = ndimage.correlate(np.where(hit, out[..., c], 0.0), k, mode="constant")
            out[..., c] = np.where(filled, s / den, out[..., c])
        zfill = ndimage.correlate(np.where(hit, zbuf, 0.0), k, mode="constant") / den
        zbuf = np.where(filled, zfill, zbuf)

    field = WarpField(coords=coords, source_depth_in_target=np.where(front, z, np.nan),
                      hits=hits, occupancy=occ, depth=zbuf)
    warped = PerspectiveImage(np.where(occ[..., None], out, 0.0), occ)
    return warped, field, ~occ


def pano_depth_to_view(depth_pano: DepthMap, window: ViewWindow) -> DepthMap:
    """Resample a radial panorama depth map into z-depth for a view window."""
    cam = camera_directions(window)
    d = cam @ view_rotation(window.yaw, window.pitch).T
    u, v = sphere_to_equirect(d, depth_pano.width, depth_pano.height)
    r = sample_equirect(depth_pano.data, u, v)[..., 0]
    # cam x component is 1, so z-depth = r / |(1, y, z)|
    z = r / np.linalg.norm(cam, axis=-1)
    return DepthMap(z, max(depth_pano.max_depth, float(z.max())))


def build_neighboring_pairs(pano: PanoramaImage, n_views: int, overlap_fraction: float,
                            fov: Optional[float] = None, out_size: Tuple[int, int] = (256, 256),
                            center=(0.0, 0.0, 0.0)) -> list:
    """Pair consecutive views of a horizontal ring; the ring closes when it covers 360 degrees."""
    yaws, fov, covers = plan_views(n_views, overlap_fraction, fov)
    windows = [ViewWindow(y, 0.0, fov, None, out_size[0], out_size[1]) for y in yaws]
    views = [pano_to_perspective(pano, w)[0] for w in windows]
    poses = [window_pose(w, center) for w in windows]
    intr = window_intrinsics(windows[0])
    n = len(windows)
    links = [(k, k + 1) for k in range(n - 1)]
    if covers:
        links.append((n - 1, 0))
    empty = np.zeros((out_size[1], out_size[0]), dtype=bool)
    return [KeyframePair(views[a], poses[a], views[b], poses[b], empty.copy(), NEIGHBORING, intr,
                         windows[a], windows[b]) for a, b in links]


def axis_depth(depth: DepthMap, mode: str = "center") -> float:
    """Scene depth along the optical axis of a view depth map."""
    H, W = depth.data.shape
    if mode == "center":
        return float(depth.data[H // 2, W // 2])
    if mode == "p10":
        h0, h1 = int(H * 0.4), max(int(H * 0.6), int(H * 0.4) + 1)
        w0, w1 = int(W * 0.4), max(int(W * 0.6), int(W * 0.4) + 1)
        return float(np.percentile(depth.data[h0:h1, w0:w1], 10))
    raise ValueError(f"unknown depth mode {mode!r}")


def build_walkin_pair(pano: PanoramaImage, depth: DepthMap, window: ViewWindow, walk_ratio: float,
                      intrinsics: Optional[CameraIntrinsics] = None, depth_mode: str = "center",
                      center=(0.0, 0.0, 0.0), composite_warp: bool = False) -> KeyframePair:
    """Source view plus a simulated walk-in target along the same direction.

    ``depth`` is either the z-depth of the source view or a radial panorama
    depth map.  The target is the centre crop of the view magnified per
    :func:`walk_in_scale`.  The inpaint mask is the complement of the target's
    footprint after warping it back into the source camera, a frame-shaped
    border for a walk toward a wall.  With ``composite_warp`` the forward warp
    of the source overrides the crop wherever it lands.
    """
    if not 0.0 <= walk_ratio < 1.0:
        raise ValueError("walk ratio must be in [0, 1)")
    W, H = window.out_width, window.out_height
    intr = window_intrinsics(window) if intrinsics is None else intrinsics
    if (intr.width, intr.height) != (W, H):
        raise ValueError("intrinsics do not match the window size")
    source, _ = pano_to_perspective(pano, window)
    src_pose = window_pose(window, center)
    pano_depth = depth.data.shape != (H, W)
    view_depth = pano_depth_to_view(depth, window) if pano_depth else depth

    empty = np.zeros((H, W), dtype=bool)
    if walk_ratio == 0.0:
        return KeyframePair(source, src_pose, source, src_pose, empty, WALK_IN, intr, window, window)

    dmax = depth.max_depth
    s = walk_in_scale(walk_ratio * dmax, dmax, W / 2.0, window.hfov)
    mag = s / intr.fx
    D = axis_depth(view_depth, depth_mode)
    walk = D * (1.0 - 1.0 / mag)
    forward = src_pose.R[:, 2]
    tgt_pose = CameraPose(src_pose.rotation, src_pose.translation + walk * forward)

    zoom = ViewWindow(window.yaw, window.pitch,
                      2.0 * math.atan(math.tan(window.hfov / 2.0) / mag),
                      2.0 * math.atan(math.tan(window.vfov / 2.0) / mag), W, H)
    target, _ = pano_to_perspective(pano, zoom)
    if pano_depth:
        zoom_depth = pano_depth_to_view(depth, zoom).data
    else:
        # the zoom window's rays are source rays scaled about the principal point
        grid = intr.pixel_grid()
        u = (grid[..., 0] - intr.cx) / mag + intr.cx
        v = (grid[..., 1] - intr.cy) / mag + intr.cy
        zoom_depth = sample_image(view_depth.data, u, v)[0][..., 0]
    tgt_depth = np.maximum(zoom_depth - walk, 1e-6)

    if composite_warp:
        warped, _, hole = forward_warp(source, view_depth, src_pose, tgt_pose, intr)
        target = PerspectiveImage(np.where(hole[..., None], target.data, warped.data))

    back = DepthMap(tgt_depth, max(dmax, float(tgt_depth.max())))
    _, _, inpaint = forward_warp(target, back, tgt_pose, src_pose, intr)
    return KeyframePair(source, src_pose, target, tgt_pose, inpaint, WALK_IN, intr, window, zoom)
