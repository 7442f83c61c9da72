"""Equirectangular <-> perspective resampling.

Internally the view sphere is parameterised in the frame used by the
equirectangular lookup: x forward (panorama centre column), y right
(increasing column), z up (decreasing row).  Longitude is ``atan2(y, x)`` and
latitude ``asin(z)``.  A camera looking along yaw ``theta`` and pitch ``phi``
is rotated by ``Rz(theta) @ Ry(-phi)``, which sends its forward axis to
``(cos theta cos phi, sin theta cos phi, sin phi)``.

The right-handed world frame of :mod:`panoview.geometry` differs from the
sphere frame only by the sign of y; :func:`window_pose` produces the matching
world-from-camera pose for a pinhole camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, PanoramaImage, PerspectiveImage

TWO_PI = 2.0 * math.pi

# OpenCV camera axes (right, down, forward) expressed in sphere-camera axes (fwd, right, up)
_CV_TO_SPHERE = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
_FLIP_Y = np.diag([1.0, -1.0, 1.0])


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    w = math.fmod(a + math.pi, TWO_PI)
    if w < 0:
        w += TWO_PI
    return w - math.pi


@dataclass(frozen=True)
class ViewWindow:
    """A perspective crop of the view sphere. Angles are radians.

    ``vfov`` defaults to the value implied by ``hfov`` and the output aspect ratio.
    """

    yaw: float
    pitch: float
    hfov: float
    vfov: Optional[float] = None
    out_width: int = 256
    out_height: int = 256

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        vfov = self.vfov
        if vfov is None:
            vfov = 2.0 * math.atan(math.tan(self.hfov / 2.0) * self.out_height / self.out_width)
        object.__setattr__(self, "vfov", float(vfov))
        if not -math.pi / 2 - 1e-12 <= self.pitch <= math.pi / 2 + 1e-12:
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        for name in ("hfov", "vfov"):
            v = getattr(self, name)
            if not 0.0 < v < math.pi:
                raise ValueError(f"{name} {v} outside (0, pi)")
        if self.out_width <= 0 or self.out_height <= 0:
            raise ValueError("output size must be positive")

    @classmethod
    def from_degrees(cls, yaw, pitch, hfov, vfov=None, out_width=256, out_height=256):
        return cls(math.radians(yaw), math.radians(pitch), math.radians(hfov),
                   None if vfov is None else math.radians(vfov), out_width, out_height)

    @property
    def lens_half_width(self) -> float:
        return math.tan(self.hfov / 2.0)

    @property
    def lens_half_height(self) -> float:
        return math.tan(self.vfov / 2.0)


def yaw_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pitch_matrix(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def view_rotation(yaw: float, pitch: float) -> np.ndarray:
    """Sphere-frame rotation of a camera at (yaw, pitch); positive pitch looks up."""
    return yaw_matrix(yaw) @ pitch_matrix(-pitch)


def window_intrinsics(window: ViewWindow) -> CameraIntrinsics:
    return CameraIntrinsics.from_fov(window.out_width, window.out_height, window.hfov, window.vfov)


def window_pose(window: ViewWindow, center=(0.0, 0.0, 0.0)) -> CameraPose:
    """World-from-camera pose (OpenCV camera axes) of a view window."""
    R = _FLIP_Y @ view_rotation(window.yaw, window.pitch) @ _CV_TO_SPHERE
    return CameraPose.from_matrix(R, center)


def world_to_sphere(dirs: np.ndarray) -> np.ndarray:
    return np.asarray(dirs, dtype=np.float64) * np.array([1.0, -1.0, 1.0])


sphere_to_world = world_to_sphere


def camera_directions(window: ViewWindow) -> np.ndarray:
    """Unrotated sphere-frame ray directions (1, y, z) for every output pixel, (H, W, 3)."""
    W, H = window.out_width, window.out_height
    u = (np.arange(W, dtype=np.float64) + 0.5) / W
    v = (np.arange(H, dtype=np.float64) + 0.5) / H
    y = (2.0 * u - 1.0) * window.lens_half_width
    z = -(2.0 * v - 1.0) * window.lens_half_height
    yy, zz = np.meshgrid(y, z)
    return np.stack([np.ones_like(yy), yy, zz], axis=-1)


def sphere_to_equirect(dirs: np.ndarray, width: int, height: int):
    """Continuous equirect coordinates (u_P, v_P) of sphere-frame directions."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n = np.linalg.norm(dirs, axis=-1)
    z = np.clip(dirs[..., 2] / n, -1.0, 1.0)
    lat = np.arcsin(z)
    lon = np.arctan2(dirs[..., 1], dirs[..., 0])
    u = (lon / TWO_PI + 0.5) * width
    v = (-lat / math.pi + 0.5) * height
    return u, v


def equirect_directions(width: int, height: int) -> np.ndarray:
    """Unit sphere-frame directions through every equirect pixel centre, (H, W, 3)."""
    lon = ((np.arange(width, dtype=np.float64) + 0.5) / width - 0.5) * TWO_PI
    lat = -((np.arange(height, dtype=np.float64) + 0.5) / height - 0.5) * math.pi
    lo, la = np.meshgrid(lon, lat)
    cl = np.cos(la)
    return np.stack([cl * np.cos(lo), cl * np.sin(lo), np.sin(la)], axis=-1)


def sample_equirect(data: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous coordinates; longitude wraps, latitude clamps."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    H, W = data.shape[:2]
    x = np.asarray(u, dtype=np.float64) - 0.5
    y = np.clip(np.asarray(v, dtype=np.float64) - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64) % W
    x1 = (x0 + 1) % W
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    src = data.astype(np.float64, copy=False)
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_image(data: np.ndarray, u: np.ndarray, v: np.ndarray, valid: Optional[np.ndarray] = None):
    """Bilinear lookup in a perspective raster with edge clamping.

    Invalid source pixels get zero weight; returns ``(values, weight_sum)``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[..., None]
    H, W = data.shape[:2]
    x = np.clip(np.asarray(u, dtype=np.float64) - 0.5, 0.0, W - 1.0)
    y = np.clip(np.asarray(v, dtype=np.float64) - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    vm = np.ones((H, W)) if valid is None else np.asarray(valid, dtype=np.float64)
    acc = np.zeros(np.shape(x) + (data.shape[2],))
    wsum = np.zeros(np.shape(x))
    for yy, xx, w in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)),
                      (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy)):
        w = w * vm[yy, xx]
        acc += data[yy, xx] * w[..., None]
        wsum += w
    out = np.where(wsum[..., None] > 0, acc / np.maximum(wsum, 1e-300)[..., None], 0.0)
    return out, wsum


def pano_to_perspective(pano: PanoramaImage, window: ViewWindow) -> Tuple[PerspectiveImage, np.ndarray]:
    """Render a perspective view of an equirectangular panorama.

    Returns the view and its visibility mask.  Every output pixel of a valid
    window lies strictly inside the lens footprint, so the mask is all true.
    """
    d = camera_directions(window) @ view_rotation(window.yaw, window.pitch).T
    u, v = sphere_to_equirect(d, pano.width, pano.height)
    out = sample_equirect(pano.data, u, v)
    mask = visibility_mask(window, camera_directions(window))
    out = np.where(mask[..., None], out, 0.0)
    return PerspectiveImage(out, mask), mask


def visibility_mask(window: ViewWindow, cam_dirs: np.ndarray) -> np.ndarray:
    """Lens-footprint test on sphere-camera-frame directions (x forward, y right, z up)."""
    x, y, z = cam_dirs[..., 0], cam_dirs[..., 1], cam_dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (x > 0) & (np.abs(y) < window.lens_half_width * x) & (np.abs(z) < window.lens_half_height * x)
    return ok


def perspective_to_pano(persp: PerspectiveImage, window: ViewWindow,
                        canvas: Union[PanoramaImage, Tuple[int, int]]):
    """Paste a perspective view into an equirectangular canvas.

    ``canvas`` is either an existing panorama (pixels outside the footprint are
    kept) or an ``(height, width)`` shape for a zero canvas.  Each panorama pixel
    inside the lens footprint gathers a bilinear sample of the view.
    Returns ``(panorama, coverage_mask)``.
    """
    if isinstance(canvas, PanoramaImage):
        H, W = canvas.height, canvas.width
        base = np.array(canvas.data, dtype=np.float64)
    else:
        H, W = int(canvas[0]), int(canvas[1])
        base = np.zeros((H, W, persp.channels))
    if persp.width != window.out_width or persp.height != window.out_height:
        raise ValueError("perspective image size does not match the window")
    if base.shape[2] != persp.channels:
        raise ValueError("channel count mismatch between canvas and view")
    cam = equirect_directions(W, H) @ view_rotation(window.yaw, window.pitch)
    mask = visibility_mask(window, cam)
    x = np.where(mask, cam[..., 0], 1.0)
    uk = window.out_width * cam[..., 1] / (2.0 * window.lens_half_width * x) + window.out_width / 2.0
    vk = -window.out_height * cam[..., 2] / (2.0 * window.lens_half_height * x) + window.out_height / 2.0
    uk = np.where(mask, uk, 0.0)
    vk = np.where(mask, vk, 0.0)
    iu = np.clip(np.floor(uk).astype(np.int64), 0, window.out_width - 1)
    iv = np.clip(np.floor(vk).astype(np.int64), 0, window.out_height - 1)
    coverage = mask & persp.mask[iv, iu]
    vals, _ = sample_image(persp.data, uk, vk, persp.valid)
    base[coverage] = vals[coverage]
    return PanoramaImage(base), coverage


def pixel_solid_angles(height: int, width: int) -> np.ndarray:
    """Solid angle (sr) of every equirect pixel, shape (H, W)."""
    edges = math.pi / 2 - np.arange(height + 1) * math.pi / height
    band = (np.sin(edges[:-1]) - np.sin(edges[1:])) * (TWO_PI / width)
    return np.repeat(band[:, None], width, axis=1)


def plan_views(n_views: int, overlap_fraction: float, fov: Optional[float] = None):
    """Yaw centres for a horizontal ring of views.

    Adjacent views are ``fov * (1 - overlap_fraction)`` apart so neighbouring
    footprints share ``overlap_fraction * fov`` of yaw.  When ``fov`` is omitted
    it is chosen so the ring closes exactly.  Returns ``(yaws, fov, covers_full)``.
    """
    if not 3 <= n_views <= 12:
        raise ValueError("n_views must be in [3, 12]")
    if not 0.0 <= overlap_fraction <= 2.0 / 3.0 + 1e-12:
        raise ValueError("overlap_fraction must be in [0, 2/3]")
    if fov is None:
        fov = TWO_PI / (n_views * (1.0 - overlap_fraction))
    if not 0.0 < fov < math.pi:
        raise ValueError(f"fov {fov} outside (0, pi)")
    step = fov * (1.0 - overlap_fraction)
    covers = n_views * step >= TWO_PI * (1.0 - 1e-9)
    yaws = [wrap_angle(k * step) for k in range(n_views)]
    return yaws, fov, covers


def split_panorama(pano: PanoramaImage, n_views: int, overlap_fraction: float,
                   fov: Optional[float] = None, out_size: Tuple[int, int] = (256, 256),
                   pitch: float = 0.0) -> list:
    """Cut a panorama into a horizontal ring of overlapping perspective views.

    Returns a list of ``(PerspectiveImage, ViewWindow)``; see :func:`plan_views`
    for the spacing rule and the full-coverage flag.
    """
    yaws, fov, _ = plan_views(n_views, overlap_fraction, fov)
    out = []
    for yaw in yaws:
        win = ViewWindow(yaw, pitch, fov, None, out_size[0], out_size[1])
        img, _ = pano_to_perspective(pano, win)
        out.append((img, win))
    return out


CUBE_FACES = {
    "front": (0.0, 0.0),
    "right": (90.0, 0.0),
    "back": (180.0, 0.0),
    "left": (270.0, 0.0),
    "top": (0.0, 90.0),
    "bottom": (0.0, -90.0),
}


def cube_windows(pad_degrees: float = 0.0, size: int = 256) -> dict:
    """The six canonical cube-face windows, each ``90 + pad`` degrees wide."""
    fov = 90.0 + pad_degrees
    return {name: ViewWindow.from_degrees(y, p, fov, fov, size, size)
            for name, (y, p) in CUBE_FACES.items()}


def coverage_union(windows: Sequence[ViewWindow], height: int, width: int) -> np.ndarray:
    """Union of lens footprints of ``windows`` over an equirect grid."""
    dirs = equirect_directions(width, height)
    cov = np.zeros((height, width), dtype=bool)
    for win in windows:
        cov |= visibility_mask(win, dirs @ view_rotation(win.yaw, win.pitch))
    return cov
