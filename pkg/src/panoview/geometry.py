"""Core domain types: rasters, depth maps, intrinsics, poses and quaternion helpers.

Conventions used throughout the package:

* scalars are float64 on every geometry path;
* poses are world-from-camera, column-vector points: ``x_world = R @ x_cam + t``;
* pinhole cameras use the OpenCV frame (x right, y down, z forward);
* the world frame is right-handed with x forward, y left, z up, so the
  panorama's centre column looks along +x and its top row looks along +z;
* pixel ``(u, v)`` samples the continuous coordinate ``(u + 0.5, v + 0.5)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

QUAT_TOL = 1e-9


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# quaternions, (w, x, y, z) order
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalise quaternion {q!r}")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Pick the double-cover representative with w >= 0.

    When w == 0 the first nonzero component is made positive.
    """
    q = np.array(q, dtype=np.float64)
    for c in q:
        if c != 0.0:
            return q if c > 0 else -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) ``v`` (..., 3) by the sandwich product q v q*."""
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(-1, 3)
    qc = quat_conj(q)
    out = np.empty_like(flat)
    for i, p in enumerate(flat):
        out[i] = quat_mul(quat_mul(q, np.r_[0.0, p]), qc)[1:]
    return out.reshape(v.shape)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; returns the canonical unit quaternion."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(q))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.r_[math.cos(angle / 2.0), math.sin(angle / 2.0) * axis]


def quat_angle(a, b) -> float:
    """Geodesic rotation angle between two unit quaternions, in [0, pi].

    Uses atan2 on the relative quaternion so small angles keep full precision.
    """
    rel = quat_mul(quat_conj(a), b)
    return 2.0 * math.atan2(float(np.linalg.norm(rel[1:])), abs(float(rel[0])))


# ---------------------------------------------------------------------------
# camera model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov: float, vfov: Optional[float] = None):
        """Centred pinhole with the given horizontal (and optional vertical) FOV in radians."""
        fx = (width / 2.0) / math.tan(hfov / 2.0)
        fy = fx if vfov is None else (height / 2.0) / math.tan(vfov / 2.0)
        return cls(fx, fy, width / 2.0, height / 2.0, int(width), int(height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def pixel_grid(self) -> np.ndarray:
        """Homogeneous pixel-centre coordinates, shape (H, W, 3)."""
        u = np.arange(self.width, dtype=np.float64) + 0.5
        v = np.arange(self.height, dtype=np.float64) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "w": self.width, "h": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["w"]), int(d["h"]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-from-camera rigid pose: a unit quaternion plus a translation in meters.

    The quaternion is normalised and canonicalised (w >= 0) on construction.
    ``translation`` is the camera centre in world coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    renormalized: bool = field(default=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(t)):
            raise ValueError("pose contains non-finite values")
        n = np.linalg.norm(q)
        renorm = abs(n - 1.0) > QUAT_TOL
        if renorm:
            warnings.warn(f"non-unit quaternion (norm {n:.6g}) normalised", RuntimeWarning, stacklevel=3)
        q = quat_canonical(quat_normalize(q))
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "renormalized", bool(renorm or self.renormalized))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "CameraPose":
        return cls(matrix_to_quat(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_camera_from_world(cls, R_cw, T_cw) -> "CameraPose":
        """Build from the extrinsic form ``x_cam = R_cw x_world + T_cw``."""
        R_cw = np.asarray(R_cw, dtype=np.float64)
        return cls.from_matrix(R_cw.T, -R_cw.T @ np.asarray(T_cw, dtype=np.float64))

    @property
    def R(self) -> np.ndarray:
        return rotation_matrix(self)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def inverse(self) -> "CameraPose":
        R = self.R
        return CameraPose.from_matrix(R.T, -R.T @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """self ∘ other, i.e. apply ``other`` first."""
        return CameraPose(quat_mul(self.rotation, other.rotation),
                          self.R @ other.translation + self.translation)

    def relative_to(self, other: "CameraPose") -> "CameraPose":
        """Transform taking points in this camera's frame into ``other``'s frame.

        The translation is ``R_other^T (t_self - t_other)``, exactly zero for a shared centre.
        """
        q = quat_mul(quat_conj(other.rotation), self.rotation)
        return CameraPose(q, other.R.T @ (self.translation - other.translation))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.translation
        return M

    def allclose(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return (quat_angle(self.rotation, other.rotation) <= atol
                and bool(np.allclose(self.translation, other.translation, atol=atol, rtol=0)))

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        q = ", ".join(f"{c:.6g}" for c in self.rotation)
        t = ", ".join(f"{c:.6g}" for c in self.translation)
        return f"CameraPose(q=[{q}], t=[{t}])"


def rotation_matrix(pose) -> np.ndarray:
    """3x3 world-from-camera rotation matrix of ``pose``.

    Also accepts a bare (w, x, y, z) quaternion; one that is off unit norm by
    more than 1e-9 is normalised with a ``RuntimeWarning``.
    """
    if isinstance(pose, CameraPose):
        return quat_to_matrix(pose.rotation)
    q = np.asarray(pose, dtype=np.float64)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > QUAT_TOL:
        warnings.warn(f"non-unit quaternion (norm {n:.6g}) normalised", RuntimeWarning, stacklevel=2)
    return quat_to_matrix(quat_normalize(q))


# ---------------------------------------------------------------------------
# rasters
# ---------------------------------------------------------------------------

def _as_raster(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"raster must be HxW or HxWxC, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PanoramaImage:
    """Equirectangular raster, columns wrap in longitude.

    Construction does not enforce the invariants so that malformed inputs can be
    reported by :func:`validate_panorama`; call :meth:`checked` to raise instead.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = _as_raster(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        object.__setattr__(self, "data", _frozen(arr, arr.dtype))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def sample(self, row: int, col: int) -> np.ndarray:
        return np.asarray(self.data[row, col % self.width], dtype=np.float64)

    def checked(self) -> "PanoramaImage":
        problems = validate_panorama(self)
        if problems:
            raise ValueError("invalid panorama: " + "; ".join(problems))
        return self


@dataclass(frozen=True, eq=False)
class PerspectiveImage:
    data: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        arr = _as_raster(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        object.__setattr__(self, "data", _frozen(arr, arr.dtype))
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != arr.shape[:2]:
                raise ValueError("validity mask shape does not match the raster")
            object.__setattr__(self, "valid", _frozen(valid, bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.data.shape[:2], dtype=bool)
        return self.valid


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth raster.

    Perspective depth maps hold z-depth along the optical axis; panorama depth
    maps hold radial distance from the panorama centre.
    """

    data: np.ndarray
    max_depth: Optional[float] = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[..., 0]
        if arr.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("depth values must be finite and positive")
        dmax = float(arr.max()) if self.max_depth is None else float(self.max_depth)
        if arr.max() > dmax * (1 + 1e-12):
            raise ValueError("depth exceeds max_depth")
        object.__setattr__(self, "data", _frozen(arr))
        object.__setattr__(self, "max_depth", dmax)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def validate_panorama(image: PanoramaImage) -> list[str]:
    """Return a list of violated panorama invariants (empty when valid)."""
    problems = []
    h, w = image.data.shape[:2]
    if w != 2 * h:
        problems.append(f"aspect: width {w} != 2 * height {h}")
    finite = np.isfinite(image.data)
    if not finite.all():
        problems.append(f"finiteness: {int((~finite).sum())} non-finite samples")
    vals = image.data[finite]
    if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
        problems.append(f"range: samples outside [0, 1] (min {vals.min():.4g}, max {vals.max():.4g})")
    return problems


def poses_from_records(records: Sequence[dict]):
    """Parse pose-file records into ``(pose, intrinsics-or-None)`` pairs."""
    out = []
    for rec in records:
        pose = CameraPose(np.asarray(rec["q"], dtype=np.float64), np.asarray(rec["t"], dtype=np.float64))
        intr = CameraIntrinsics.from_dict(rec["intrinsics"]) if rec.get("intrinsics") else None
        out.append((pose, intr))
    return out


def pose_record(pose: CameraPose, intrinsics: Optional[CameraIntrinsics] = None, **extra) -> dict:
    rec = {"q": [float(c) for c in pose.rotation], "t": [float(c) for c in pose.translation]}
    if intrinsics is not None:
        rec["intrinsics"] = intrinsics.to_dict()
    rec.update(extra)
    return rec
