"""Plücker ray embeddings of camera poses.

For a world-from-camera pose (R, c) each pixel centre ``u`` gives the world
direction ``d = R K^-1 u`` and the moment ``m = c x d``.  Written in the
camera-from-world extrinsics (R', T') this is the familiar
``d = R'^T K^-1 u``, ``m = (-R'^T T') x d``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, pose_record

MAGIC = b"PLKR"


@dataclass(frozen=True, eq=False)
class Raymap:
    """Per-pixel (moment, direction) field, ``data`` of shape (H, W, 6)."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 6:
            raise ValueError("raymap data must be (H, W, 6)")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def moment(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def direction(self) -> np.ndarray:
        return self.data[..., 3:]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def plucker_residual(self) -> np.ndarray:
        return np.einsum("hwc,hwc->hw", self.moment, self.direction)

    def normalize(self) -> "Raymap":
        n = np.linalg.norm(self.direction, axis=-1, keepdims=True)
        return Raymap(self.data / n, normalized=True)


@dataclass(frozen=True, eq=False)
class RaymapVolume:
    """N raymaps concatenated channel-wise: ``data`` is (H, W, 6 N)."""

    data: np.ndarray
    poses: Tuple[CameraPose, ...] = field(default=())
    normalized: bool = False

    @property
    def frames(self) -> int:
        return self.data.shape[2] // 6

    def frame(self, k: int) -> Raymap:
        return Raymap(self.data[..., 6 * k:6 * k + 6], self.normalized)


def pose_to_raymap(pose: CameraPose, intrinsics: CameraIntrinsics,
                   out_size: Optional[Tuple[int, int]] = None, normalize: bool = False) -> Raymap:
    """Plücker raymap of one camera.

    ``out_size`` (width, height) rescales the intrinsics first, e.g. to a
    latent resolution.  Directions are left unnormalised unless ``normalize``.
    """
    K = intrinsics if out_size is None else intrinsics.scaled(*out_size)
    d = K.pixel_grid() @ K.K_inv.T @ pose.R.T
    m = np.cross(np.broadcast_to(pose.translation, d.shape), d)
    rm = Raymap(np.concatenate([m, d], axis=-1))
    return rm.normalize() if normalize else rm


def pose_to_ray_quaternions(pose: CameraPose, intrinsics: CameraIntrinsics,
                            out_size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Alternate 4-channel encoding ``[0, dx, dy, dz]`` per pixel, as constructed (not unit)."""
    d = pose_to_raymap(pose, intrinsics, out_size).direction
    return np.concatenate([np.zeros(d.shape[:2] + (1,)), d], axis=-1)


def raymap_equivalence_check(a: Raymap, b: Raymap, tol: float = 1e-6) -> bool:
    """True when every pixel's (m, d) pair agrees up to a positive scale."""
    if a.data.shape != b.data.shape:
        raise ValueError("raymaps differ in size")
    A = a.data.reshape(-1, 6)
    B = b.data.reshape(-1, 6)
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        return bool(np.array_equal(na == 0, nb == 0)) and _equiv_rows(A[na > 0], B[nb > 0], tol)
    return _equiv_rows(A, B, tol)


def _equiv_rows(A, B, tol):
    ua = A / np.linalg.norm(A, axis=1, keepdims=True)
    ub = B / np.linalg.norm(B, axis=1, keepdims=True)
    return bool(np.all(np.abs(ua - ub) <= tol))


def stack_raymaps(poses: Sequence[CameraPose], intrinsics: CameraIntrinsics,
                  out_size: Optional[Tuple[int, int]] = None, normalize: bool = False) -> RaymapVolume:
    if len(poses) == 0:
        raise ValueError("need at least one pose")
    maps = [pose_to_raymap(p, intrinsics, out_size, normalize).data for p in poses]
    return RaymapVolume(np.concatenate(maps, axis=-1), tuple(poses), normalize)


def write_raymap_volume(path, volume: RaymapVolume, intrinsics: Optional[CameraIntrinsics] = None) -> None:
    """Binary ``PLKR`` file plus a ``.json`` sidecar listing the poses."""
    path = Path(path)
    H, W, C = volume.data.shape
    n = C // 6
    body = volume.data.reshape(H, W, n, 6).transpose(2, 0, 1, 3).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", W, H, n))
        fh.write(body.tobytes())
    side = {
        "width": W, "height": H, "frames": n, "normalized": volume.normalized,
        "layout": "frame-major, row-major pixels, channel-minor (m_x m_y m_z d_x d_y d_z)",
        "poses": [pose_record(p, intrinsics) for p in volume.poses],
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def read_raymap_volume(path) -> RaymapVolume:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a PLKR raymap file")
    W, H, n = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    if data.size != W * H * n * 6:
        raise ValueError("truncated raymap file")
    vol = data.reshape(n, H, W, 6).transpose(1, 2, 0, 3).reshape(H, W, 6 * n).astype(np.float64)
    poses = ()
    normalized = False
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        normalized = bool(meta.get("normalized", False))
        poses = tuple(CameraPose(np.asarray(r["q"]), np.asarray(r["t"])) for r in meta.get("poses", []))
    return RaymapVolume(vol, poses, normalized)
