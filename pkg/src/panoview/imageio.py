"""File formats: PNG rasters, PFM depth, pose/trajectory JSON, feature binaries, matches."""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path
from typing import List, Optional, Sequence

import cv2
import numpy as np

from .geometry import CameraIntrinsics, CameraPose, pose_record, poses_from_records

FEAT_MAGIC = b"FEAT"


def write_png(path, data, bits: int = 8) -> None:
    """Write an (H, W) or (H, W, C) raster in [0, 1] as 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    peak = 255 if bits == 8 else 65535
    q = np.rint(arr * peak).astype(np.uint8 if bits == 8 else np.uint16)
    if q.ndim == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR if q.shape[2] == 3 else cv2.COLOR_RGBA2BGRA)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")


def read_png(path) -> np.ndarray:
    """Read a PNG as float64 RGB(A) or grey in [0, 1]; always returns (H, W, C)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB if raw.shape[2] == 3 else cv2.COLOR_BGRA2RGBA)
    else:
        raw = raw[..., None]
    return raw.astype(np.float64) / peak


def list_images(directory) -> List[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")


def write_pfm(path, data) -> None:
    """Little-endian PFM (scale -1.0); rows are stored bottom to top."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        kind = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        kind = b"PF"
    else:
        raise ValueError("PFM holds 1 or 3 channels")
    H, W = arr.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(kind + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", raw)
    if not m:
        raise ValueError(f"{path} is not a PFM file")
    kind, W, H, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    ch = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, offset=m.end(), count=W * H * ch)
    shape = (H, W, 3) if ch == 3 else (H, W)
    return data.reshape(shape)[::-1].astype(np.float64)


def write_poses(path, poses: Sequence[CameraPose], intrinsics: Optional[CameraIntrinsics] = None,
                timestamps: Optional[Sequence[float]] = None) -> None:
    recs = []
    for i, p in enumerate(poses):
        extra = {} if timestamps is None else {"timestamp": float(timestamps[i])}
        recs.append(pose_record(p, intrinsics, **extra))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(recs, indent=2))


def read_poses(path):
    """Returns ``(poses, intrinsics_list, timestamps_or_None)``."""
    recs = json.loads(Path(path).read_text())
    if not isinstance(recs, list):
        raise ValueError("pose file must hold a JSON array")
    pairs = poses_from_records(recs)
    ts = [r["timestamp"] for r in recs] if recs and all("timestamp" in r for r in recs) else None
    return [p for p, _ in pairs], [k for _, k in pairs], ts


def write_trajectory(path, spec, intrinsics: Optional[CameraIntrinsics] = None) -> None:
    write_poses(path, spec.poses, intrinsics, list(spec.timestamps))


def read_trajectory(path, frame_rate: Optional[float] = None):
    from .trajectory import DEFAULT_FPS, TrajectorySpec

    poses, _, ts = read_poses(path)
    fps = frame_rate or DEFAULT_FPS
    if ts is None:
        return TrajectorySpec.from_poses(poses, fps)
    closed = len(poses) > 1 and poses[0].allclose(poses[-1], 1e-6)
    return TrajectorySpec(tuple(zip(ts, poses)), fps, closed)


def write_features(path, features) -> None:
    """``FEAT`` | u32 dim | u32 count | float32 rows."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    count, dim = X.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", dim, count))
        fh.write(X.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEAT_MAGIC:
        raise ValueError(f"{path} is not a FEAT file")
    dim, count = struct.unpack("<II", raw[4:12])
    X = np.frombuffer(raw, dtype="<f4", offset=12)
    if X.size != dim * count:
        raise ValueError("truncated feature file")
    return X.reshape(count, dim).astype(np.float64)


def write_matches(path, matches, pose_rel: CameraPose, K_a: CameraIntrinsics, K_b: CameraIntrinsics) -> None:
    doc = {
        "matches": np.asarray(matches, dtype=np.float64).reshape(-1, 4).tolist(),
        "pose_rel": pose_record(pose_rel),
        "K_a": K_a.to_dict(),
        "K_b": K_b.to_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2))


def read_matches(path):
    """Correspondence document: a single pair, or ``{"pairs": [...]}`` for a sequence."""
    doc = json.loads(Path(path).read_text())
    docs = doc["pairs"] if "pairs" in doc else [doc]
    out = []
    for d in docs:
        rel = CameraPose(np.asarray(d["pose_rel"]["q"]), np.asarray(d["pose_rel"]["t"]))
        out.append((np.asarray(d["matches"], dtype=np.float64).reshape(-1, 4), rel,
                    CameraIntrinsics.from_dict(d["K_a"]), CameraIntrinsics.from_dict(d["K_b"])))
    return out
