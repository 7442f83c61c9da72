"""Panorama-driven view synthesis toolkit: projection, keyframes, raymaps,
trajectories, diffusion samplers and consistency metrics."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PanoramaImage,
    PerspectiveImage,
    rotation_matrix,
    validate_panorama,
)
from .projection import ViewWindow, pano_to_perspective, perspective_to_pano, split_panorama  # noqa: E402
from .raymap import Raymap, RaymapVolume, pose_to_raymap, stack_raymaps  # noqa: E402
from .trajectory import TrajectorySpec, slerp, lerp_pose, upsample_trajectory, generate_star_trajectory  # noqa: E402

__all__ = [
    "CameraIntrinsics", "CameraPose", "DepthMap", "PanoramaImage", "PerspectiveImage",
    "rotation_matrix", "validate_panorama", "ViewWindow", "pano_to_perspective",
    "perspective_to_pano", "split_panorama", "Raymap", "RaymapVolume", "pose_to_raymap",
    "stack_raymaps", "TrajectorySpec", "slerp", "lerp_pose", "upsample_trajectory",
    "generate_star_trajectory",
]
