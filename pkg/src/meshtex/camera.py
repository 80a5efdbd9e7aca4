"""Camera schedule and perspective projection.

The eight-view schedule covers the object with interleaved elevations plus
one low and one high pose. Cameras sit on a sphere around the origin
(azimuth 0, elevation 0 looks at the mesh front along -Z from +Z), world +Y
up, right-handed eye space looking down -Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCameraError

# Default framing for a mesh normalized to a unit bounding sphere.
DEFAULT_DISTANCE = 1.8
DEFAULT_FOV_Y = 45.0
DEFAULT_IMAGE_SIZE = 512

# (azimuth, elevation) pairs of the stock 8-view schedule, in degrees.
STOCK_VIEW_ANGLES = (
    (-180.0, 15.0),
    (-120.0, -15.0),
    (-60.0, 15.0),
    (0.0, -15.0),
    (60.0, 15.0),
    (120.0, -15.0),
    (-180.0, -45.0),
    (0.0, 45.0),
)


def normalize_azimuth(azimuth: float) -> float:
    """Map any azimuth in degrees into (-180, 180]."""
    a = math.fmod(float(azimuth), 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


@dataclass(frozen=True)
class CameraPose:
    """Spherical camera looking at the origin."""

    azimuth: float
    elevation: float
    distance: float
    fov_y: float = DEFAULT_FOV_Y
    image_size: int = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "azimuth", normalize_azimuth(self.azimuth))
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if self.distance <= 0.0:
            raise ValueError("camera distance must be positive")
        if not 0.0 < self.fov_y < 180.0:
            raise ValueError(f"fov_y {self.fov_y} outside (0, 180)")

    @property
    def near(self) -> float:
        return self.distance / 100.0

    def position(self) -> np.ndarray:
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        return self.distance * np.array(
            [math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
        )


@dataclass(frozen=True)
class ViewSchedule:
    """Ordered, pairwise-distinct camera poses."""

    poses: tuple[CameraPose, ...]

    def __post_init__(self):
        if len(self.poses) == 0:
            raise ValueError("view schedule is empty")
        seen = set()
        for pose in self.poses:
            key = (pose.azimuth, pose.elevation, pose.distance, pose.fov_y)
            if key in seen:
                raise ValueError(f"duplicate pose {key} in schedule")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i: int) -> CameraPose:
        return self.poses[i]


def stock_schedule(
    distance: float = DEFAULT_DISTANCE,
    fov_y: float = DEFAULT_FOV_Y,
    image_size: int = DEFAULT_IMAGE_SIZE,
    angles: tuple[tuple[float, float], ...] = STOCK_VIEW_ANGLES,
) -> ViewSchedule:
    """Build the 8-view schedule (or any (azimuth, elevation) list).

    Azimuths are normalized into (-180, 180], so a listed -180 becomes 180
    (same direction).
    """
    poses = tuple(
        CameraPose(az, el, distance, fov_y, image_size) for az, el in angles
    )
    return ViewSchedule(poses)


def _camera_basis(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Rotation (world->eye, rows right/up/backward) and eye position."""
    eye = pose.position()
    backward = eye / np.linalg.norm(eye)
    up = np.array([1.0, 0.0, 0.0]) if abs(pose.elevation) == 90.0 else np.array([0.0, 1.0, 0.0])
    right = np.cross(up, backward)
    right = right / np.linalg.norm(right)
    true_up = np.cross(backward, right)
    rot = np.stack([right, true_up, backward])
    return rot, eye


def view_matrix(pose: CameraPose) -> np.ndarray:
    """4x4 world-to-eye transform; the camera looks down -Z in eye space."""
    rot, eye = _camera_basis(pose)
    mat = np.eye(4)
    mat[:3, :3] = rot
    mat[:3, 3] = -rot @ eye
    return mat


def eye_transform(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Transform (N, 3) world points into eye space."""
    rot, eye = _camera_basis(pose)
    return (np.asarray(points, dtype=np.float64) - eye) @ rot.T


def project_points(points: np.ndarray, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized perspective projection.

    Returns (ndc, depth): ndc is (N, 2) in [-1, 1]^2 for visible points,
    depth is the (N,) eye-space distance along the forward axis (positive in
    front of the camera). No visibility filtering is done here; callers
    check ``depth > pose.near`` themselves.
    """
    pe = eye_transform(points, pose)
    depth = -pe[:, 2]
    tan_half = math.tan(math.radians(pose.fov_y) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc = pe[:, :2] / (depth[:, None] * tan_half)
    return ndc, depth


def project(point: np.ndarray, pose: CameraPose) -> tuple[np.ndarray, float]:
    """Project a single world point; raises BehindCameraError past the near plane."""
    ndc, depth = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), pose)
    if depth[0] < pose.near:
        raise BehindCameraError(
            f"point at depth {depth[0]:.6g} is behind the near plane ({pose.near:.6g})"
        )
    return ndc[0], float(depth[0])


def unproject(ndc: np.ndarray, depth: float | np.ndarray, pose: CameraPose) -> np.ndarray:
    """Inverse of ``project``: (N, 2) ndc + (N,) depth -> (N, 3) world points."""
    ndc = np.atleast_2d(np.asarray(ndc, dtype=np.float64))
    depth = np.broadcast_to(np.asarray(depth, dtype=np.float64), ndc.shape[:1])
    tan_half = math.tan(math.radians(pose.fov_y) / 2.0)
    pe = np.empty((ndc.shape[0], 3))
    pe[:, 0] = ndc[:, 0] * depth * tan_half
    pe[:, 1] = ndc[:, 1] * depth * tan_half
    pe[:, 2] = -depth
    rot, eye = _camera_basis(pose)
    world = pe @ rot + eye
    return world if world.shape[0] > 1 else world[0]
