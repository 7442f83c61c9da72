"""Camera trajectories: quaternion interpolation, upsampling and star-shaped tours."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import CameraPose, DepthMap, quat_angle, quat_canonical, quat_normalize

DEFAULT_FPS = 12.0
LERP_MIN_DOT = 0.05
LERP_WARN_ANGLE = math.radians(5.0)


@dataclass(frozen=True, eq=False)
class TrajectorySpec:
    """Timestamped key poses.  Timestamps are seconds and strictly increasing."""

    keyposes: Tuple[Tuple[float, CameraPose], ...]
    frame_rate: float = DEFAULT_FPS
    loop_closed: bool = False

    def __post_init__(self):
        kp = tuple((float(t), p) for t, p in self.keyposes)
        object.__setattr__(self, "keyposes", kp)
        if not kp:
            raise ValueError("trajectory needs at least one pose")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        ts = np.array([t for t, _ in kp])
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.loop_closed and not kp[0][1].allclose(kp[-1][1], atol=1e-6):
            raise ValueError("loop_closed trajectory must end where it starts")

    @classmethod
    def from_poses(cls, poses: Sequence[CameraPose], frame_rate: float = DEFAULT_FPS,
                   loop_closed: bool = False) -> "TrajectorySpec":
        """Uniformly spaced timestamps at ``frame_rate``."""
        return cls(tuple((i / frame_rate, p) for i, p in enumerate(poses)), frame_rate, loop_closed)

    @property
    def poses(self) -> List[CameraPose]:
        return [p for _, p in self.keyposes]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.keyposes])

    def __len__(self):
        return len(self.keyposes)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def slerp(q_a, q_b, lam):
    """Spherical linear interpolation along the shorter arc.

    ``lam`` may be a scalar or an array; the result has shape ``lam.shape + (4,)``.
    Below a half-angle of 1e-6 the endpoints are linearly blended and renormalised.
    """
    qa = quat_normalize(q_a)
    qb = quat_normalize(q_b)
    if np.dot(qa, qb) < 0:
        qb = -qb
    lam_arr = np.asarray(lam, dtype=np.float64)
    lv = lam_arr.reshape(-1, 1)
    # half-angle between the two unit quaternions, stable for small arcs
    theta = 2.0 * math.atan2(np.linalg.norm(qb - qa), np.linalg.norm(qb + qa))
    if theta < 1e-6:
        out = (1.0 - lv) * qa + lv * qb
    else:
        s = math.sin(theta)
        out = (np.sin((1.0 - lv) * theta) / s) * qa + (np.sin(lv * theta) / s) * qb
    out = out / np.linalg.norm(out, axis=1, keepdims=True)
    out = np.array([quat_canonical(q) for q in out])
    return out[0] if lam_arr.ndim == 0 else out.reshape(lam_arr.shape + (4,))


def lerp_quat(q_a, q_b, lam) -> np.ndarray:
    qa = quat_normalize(q_a)
    qb = quat_normalize(q_b)
    if np.dot(qa, qb) < 0:
        qb = -qb
    return quat_canonical(quat_normalize((1.0 - lam) * qa + lam * qb))


def lerp_pose(pose_a: CameraPose, pose_b: CameraPose, lam: float) -> CameraPose:
    """Normalised quaternion LERP plus linear translation.

    Intended for small rotations.  Refuses near-antipodal rotations and warns
    above 5 degrees of separation.
    """
    if lam == 0:
        return pose_a
    if lam == 1:
        return pose_b
    dot = abs(float(np.dot(pose_a.rotation, pose_b.rotation)))
    if dot < LERP_MIN_DOT:
        raise ValueError("rotations are nearly antipodal; use slerp")
    if quat_angle(pose_a.rotation, pose_b.rotation) > LERP_WARN_ANGLE:
        warnings.warn("LERP over more than 5 degrees; slerp is more accurate", RuntimeWarning, stacklevel=2)
    t = (1.0 - lam) * pose_a.translation + lam * pose_b.translation
    return CameraPose(lerp_quat(pose_a.rotation, pose_b.rotation, lam), t)


def slerp_pose(pose_a: CameraPose, pose_b: CameraPose, lam: float) -> CameraPose:
    if lam == 0:
        return pose_a
    if lam == 1:
        return pose_b
    t = (1.0 - lam) * pose_a.translation + lam * pose_b.translation
    return CameraPose(slerp(pose_a.rotation, pose_b.rotation, lam), t)


def _segments_needed(pa: CameraPose, pb: CameraPose, max_rot: float, max_trans: float) -> int:
    ang = quat_angle(pa.rotation, pb.rotation)
    dist = float(np.linalg.norm(pb.translation - pa.translation))
    # the small slack keeps an already-satisfied pair from being split again
    n_rot = math.ceil(ang / max_rot - 1e-9)
    n_trans = math.ceil(dist / max_trans - 1e-9)
    return max(1, n_rot, n_trans)


def upsample_trajectory(spec: TrajectorySpec, max_rot_step: float, max_trans_step: float) -> TrajectorySpec:
    """Insert interpolated poses until every adjacent pair is within both step bounds.

    Original key poses are kept as the same objects.  Inserted poses sit at
    evenly spaced interpolation parameters with matching timestamps.
    """
    if not (max_rot_step > 0 and max_trans_step > 0):
        raise ValueError("step bounds must be positive")
    out = [spec.keyposes[0]]
    for (ta, pa), (tb, pb) in zip(spec.keyposes[:-1], spec.keyposes[1:]):
        n = _segments_needed(pa, pb, max_rot_step, max_trans_step)
        for i in range(1, n):
            lam = i / n
            out.append((ta + lam * (tb - ta), slerp_pose(pa, pb, lam)))
        out.append((tb, pb))
    if len(out) == len(spec.keyposes):
        return spec
    return TrajectorySpec(tuple(out), spec.frame_rate, spec.loop_closed)


def resample_trajectory(spec: TrajectorySpec, frame_rate: Optional[float] = None) -> List[CameraPose]:
    """Poses at uniform time steps over the trajectory span."""
    fps = frame_rate or spec.frame_rate
    ts = spec.timestamps
    times = np.arange(ts[0], ts[-1] + 1e-12, 1.0 / fps)
    poses = spec.poses
    out = []
    for t in times:
        k = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 1))
        if k == len(ts) - 1:
            out.append(poses[-1])
            continue
        lam = (t - ts[k]) / (ts[k + 1] - ts[k])
        out.append(slerp_pose(poses[k], poses[k + 1], lam))
    return out


# ---------------------------------------------------------------------------
# star-shaped tours
# ---------------------------------------------------------------------------

def heading_pose(azimuth: float, position, pitch: float = 0.0) -> CameraPose:
    """Camera at ``position`` looking along world azimuth (counter-clockwise from +x)."""
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    cp, sp = math.cos(pitch), math.sin(pitch)
    fwd = np.array([ca * cp, sa * cp, sp])
    right = np.array([sa, -ca, 0.0])
    down = np.cross(fwd, right)
    return CameraPose.from_matrix(np.stack([right, down, fwd], axis=1), position)


def horizon_profile(depth_pano: DepthMap) -> Tuple[np.ndarray, np.ndarray]:
    """Horizontal boundary distance per panorama column.

    Returns ``(azimuths, distances)``; azimuths are world angles sorted
    ascending in [-pi, pi).  The two rows straddling the horizon are averaged
    after projecting their radial depth onto the ground plane.
    """
    d = np.asarray(depth_pano.data, dtype=np.float64)
    if d.ndim == 3:
        d = d[..., 0]
    H, W = d.shape
    rows = [H // 2 - 1, H // 2] if H % 2 == 0 else [H // 2]
    lat = -((np.array(rows) + 0.5) / H - 0.5) * math.pi
    horiz = (d[rows] * np.cos(lat)[:, None]).mean(axis=0)
    lon = ((np.arange(W) + 0.5) / W - 0.5) * 2 * math.pi
    az = np.mod(-lon + math.pi, 2 * math.pi) - math.pi
    order = np.argsort(az)
    return az[order], horiz[order]


def boundary_polygon(depth_pano: DepthMap, center) -> np.ndarray:
    """Closed horizontal boundary polygon (M, 2) in world x/y around ``center``."""
    az, r = horizon_profile(depth_pano)
    c = np.asarray(center, dtype=np.float64)[:2]
    return c + np.stack([r * np.cos(az), r * np.sin(az)], -1)


def boundary_distance(polygon: np.ndarray, center, azimuth) -> np.ndarray:
    """Distance from ``center`` to the polygon along each azimuth (ray cast)."""
    c = np.asarray(center, dtype=np.float64)[:2]
    az = np.atleast_1d(np.asarray(azimuth, dtype=np.float64))
    a = polygon - c
    b = np.roll(polygon, -1, axis=0) - c
    e = b - a
    dirs = np.stack([np.cos(az), np.sin(az)], -1)
    # solve c + s dir = a + u e for each ray/edge pair
    den = dirs[:, None, 0] * e[None, :, 1] - dirs[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (a[None, :, 0] * e[None, :, 1] - a[None, :, 1] * e[None, :, 0]) / den
        u = (a[None, :, 0] * dirs[:, None, 1] - a[None, :, 1] * dirs[:, None, 0]) / den
    ok = (np.abs(den) > 1e-15) & (u >= -1e-12) & (u <= 1 + 1e-12) & (s > 0)
    s = np.where(ok, s, np.inf)
    return s.min(axis=1)


def clearance(polygon: np.ndarray, points) -> np.ndarray:
    """Euclidean distance from 2-D or 3-D points (x/y used) to the polygon edges."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    a = polygon
    e = np.roll(polygon, -1, axis=0) - a
    ee = np.maximum(np.einsum("ij,ij->i", e, e), 1e-300)
    rel = p[:, None, :] - a[None]
    u = np.clip(np.einsum("pij,ij->pi", rel, e) / ee, 0.0, 1.0)
    closest = a[None] + u[..., None] * e[None]
    return np.linalg.norm(p[:, None, :] - closest, axis=-1).min(axis=1)


@dataclass
class ProbeResult:
    azimuth: float
    frustum_depth: float
    corner_distance: float
    reach: float
    accepted: bool


@dataclass
class StarPlan:
    corners: np.ndarray
    probes: List[ProbeResult] = field(default_factory=list)


def corner_points(polygon: np.ndarray, center, count: int = 8) -> np.ndarray:
    """Boundary points at ``2 pi / count`` azimuth steps, starting at azimuth 0."""
    az = 2 * math.pi * np.arange(count) / count
    r = boundary_distance(polygon, center, az)
    c = np.asarray(center, dtype=np.float64)
    return np.stack([c[0] + r * np.cos(az), c[1] + r * np.sin(az), np.full(count, c[2])], -1)


def plan_star_probes(depth_pano: DepthMap, center, n_directions: int, safety_margin: float,
                     frustum_hfov: float = math.radians(60.0), frustum_rays: int = 9,
                     min_travel: Optional[float] = None) -> StarPlan:
    """Decide, per probe direction, whether and how far the camera can walk.

    A probe's usable reach is the smaller of its mean frustum depth and the
    distance to the corner point nearest in azimuth, minus the margin.  The
    reach is then shrunk until the end point clears the boundary polygon by
    ``safety_margin``.
    """
    if n_directions < 3:
        raise ValueError("n_directions must be >= 3")
    if safety_margin < 0:
        raise ValueError("safety_margin must be non-negative")
    min_travel = safety_margin if min_travel is None else min_travel
    c = np.asarray(center, dtype=np.float64)
    poly = boundary_polygon(depth_pano, c)
    corners = corner_points(poly, c)
    corner_az = 2 * math.pi * np.arange(len(corners)) / len(corners)
    corner_d = np.linalg.norm(corners[:, :2] - c[:2], axis=1)
    plan = StarPlan(corners)
    for j in range(n_directions):
        az = 2 * math.pi * j / n_directions
        fan = az + np.linspace(-frustum_hfov / 2, frustum_hfov / 2, frustum_rays)
        fdepth = float(np.mean(boundary_distance(poly, c, fan)))
        gap = np.abs((corner_az - az + math.pi) % (2 * math.pi) - math.pi)
        cdist = float(corner_d[int(np.argmin(gap))])
        reach = min(fdepth, cdist) - safety_margin
        u = np.array([math.cos(az), math.sin(az), 0.0])
        for _ in range(60):
            if reach <= 0:
                break
            slack = float(clearance(poly, c + reach * u)[0]) - safety_margin
            if slack >= 0:
                break
            reach += slack - 1e-12
        accepted = reach >= min_travel and reach > 0
        plan.probes.append(ProbeResult(az, fdepth, cdist, max(reach, 0.0), accepted))
    return plan


def _arc(center, radius, a0, a1, steps):
    out = []
    for a in np.linspace(a0, a1, steps):
        out.append(center + radius * np.array([math.cos(a), math.sin(a), 0.0]))
    return out


def generate_star_trajectory(depth_pano: DepthMap, center, n_directions: int = 8,
                             safety_margin: float = 0.3, frame_rate: float = DEFAULT_FPS,
                             scan_angle: float = math.radians(30.0), turn_radius: float = 0.0,
                             frustum_hfov: float = math.radians(60.0)) -> TrajectorySpec:
    """Out-and-back tour from ``center`` along every probe direction with enough room.

    Each accepted probe walks straight out, sweeps the view by ``scan_angle``
    to either side, turns around (in place, or along a half circle of
    ``turn_radius``) and walks back; the camera then rotates to the next
    probe.  With no usable probe the result is an in-place rotation.
    """
    c = np.asarray(center, dtype=np.float64)
    plan = plan_star_probes(depth_pano, c, n_directions, safety_margin, frustum_hfov)
    poly = boundary_polygon(depth_pano, c)
    poses: List[CameraPose] = []

    def add(az, pos):
        poses.append(heading_pose(az, pos))

    accepted = [p for p in plan.probes if p.accepted]
    if not accepted:
        for j in range(n_directions + 1):
            add(2 * math.pi * j / n_directions, c)
        return TrajectorySpec.from_poses(poses, frame_rate, loop_closed=True)

    for p in accepted:
        az = p.azimuth
        u = np.array([math.cos(az), math.sin(az), 0.0])
        n = np.array([-u[1], u[0], 0.0])
        add(az, c)
        rho = min(turn_radius, p.reach / 2)
        hub = c + (p.reach - rho) * u
        arc = _arc(hub, rho, az + math.pi / 2, az - math.pi / 2, 7)
        if rho > 0 and float(clearance(poly, np.array(arc)).min()) >= safety_margin:
            add(az, arc[0])
            add(az + scan_angle, arc[0])
            add(az, arc[0])
            # half circle through the far point, heading follows the tangent
            for q in arc[1:]:
                rel = q - hub
                add(math.atan2(rel[1], rel[0]) - math.pi / 2, q)
        else:
            end = c + p.reach * u
            add(az, end)
            add(az + scan_angle, end)
            add(az - scan_angle, end)
            add(az + math.pi / 2, end)
            add(az + math.pi, end)
        add(az + math.pi, c)
        add(az + 3 * math.pi / 2, c)
    add(accepted[0].azimuth, c)
    return TrajectorySpec.from_poses(poses, frame_rate, loop_closed=True)


def trajectory_clearance(spec: TrajectorySpec, depth_pano: DepthMap, center) -> float:
    """Smallest waypoint distance to the horizontal depth boundary."""
    poly = boundary_polygon(depth_pano, center)
    return float(clearance(poly, np.array([p.translation for p in spec.poses])).min())
