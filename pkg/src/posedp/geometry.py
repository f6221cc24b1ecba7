"""Rigid poses (translation + unit quaternion), quaternion metrics, and the
observation encoding fed to policies.

Quaternions are (w, x, y, z), canonicalized to w >= 0 so each rotation has one
representative. The null pose (all fields zero, valid=False) is the
placeholder for objects that have not been seen yet; it encodes as eight
zeros. Geometry is kept in float64; encodings are float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Array = np.ndarray

POSE_ENC_WIDTH = 8
UNIT_NORM_TOL = 1e-6


def quat_normalize(q) -> Array:
    """Unit-normalize and canonicalize to w >= 0."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have shape (4,), got {q.shape}")
    n = float(np.linalg.norm(q))
    if n <= 1e-9:
        raise ValueError("cannot normalize a near-zero quaternion")
    q = q / n
    return -q if q[0] < 0 else q


def quat_multiply(a, b) -> Array:
    """Hamilton product a * b (apply b in the frame of a)."""
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle: float) -> Array:
    axis = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(axis))
    if n <= 1e-12:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * float(angle)
    q = np.empty(4)
    q[0] = math.cos(half)
    q[1:] = (math.sin(half) / n) * axis
    return quat_normalize(q)


def quat_angular_distance(a, b) -> float:
    """Angle in radians between two unit quaternions, on the quotient q ~ -q.

    Range [0, pi]. Inputs must be unit to within a small tolerance.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (4,) or b.shape != (4,):
        raise ValueError(f"quaternions must have shape (4,), got {a.shape} and {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if abs(na - 1.0) > UNIT_NORM_TOL or abs(nb - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"angular distance requires unit quaternions (norms {na:.8f}, {nb:.8f})")
    dot = abs(float(np.dot(a / na, b / nb)))
    return 2.0 * math.acos(min(dot, 1.0))


@dataclass
class Pose:
    """Translation plus unit quaternion, or the all-zero null placeholder."""

    translation: Array = field(default_factory=lambda: np.zeros(3))
    rotation: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    valid: bool = True

    def __post_init__(self):
        self.translation = np.array(self.translation, dtype=np.float64)
        self.rotation = np.array(self.rotation, dtype=np.float64)
        if self.translation.shape != (3,):
            raise ValueError(f"translation must have shape (3,), got {self.translation.shape}")
        if self.rotation.shape != (4,):
            raise ValueError(f"rotation must have shape (4,), got {self.rotation.shape}")
        if self.valid:
            n = float(np.linalg.norm(self.rotation))
            if abs(n - 1.0) > UNIT_NORM_TOL:
                raise ValueError(f"valid pose requires a unit quaternion, norm is {n:.8f}")
        else:
            if np.any(self.translation != 0.0) or np.any(self.rotation != 0.0):
                raise ValueError("null pose must be all zeros")

    @staticmethod
    def null() -> "Pose":
        return Pose(np.zeros(3), np.zeros(4), valid=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_xy_yaw(x: float, y: float, yaw: float = 0.0) -> "Pose":
        """Planar pose: z = 0, rotation about +z by yaw."""
        half = 0.5 * yaw
        q = quat_normalize(np.array([math.cos(half), 0.0, 0.0, math.sin(half)]))
        return Pose(np.array([x, y, 0.0]), q)

    @property
    def xy(self) -> Array:
        return self.translation[:2]

    def copy(self) -> "Pose":
        return Pose(self.translation.copy(), self.rotation.copy(), self.valid)


def encode_pose(pose: Pose) -> Array:
    """Eight floats: tx, ty, tz, qw, qx, qy, qz, validity in {0, 1}."""
    out = np.empty(POSE_ENC_WIDTH, dtype=np.float32)
    out[:3] = pose.translation
    out[3:7] = pose.rotation
    out[7] = 1.0 if pose.valid else 0.0
    return out


def decode_pose(vec) -> Pose:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (POSE_ENC_WIDTH,):
        raise ValueError(f"pose encoding must have shape ({POSE_ENC_WIDTH},), got {vec.shape}")
    if vec[7] > 0.5:
        return Pose(vec[:3], vec[3:7])
    if np.any(vec != 0.0):
        raise ValueError("invalid pose encoding must be all zeros")
    return Pose.null()


@dataclass
class ObservationFrame:
    """One timestep of policy input: proprioception plus per-object poses."""

    robot_state: Array
    poses: list[Pose]

    def __post_init__(self):
        self.robot_state = np.asarray(self.robot_state, dtype=np.float64)
        if self.robot_state.ndim != 1:
            raise ValueError("robot_state must be a flat vector")

    @property
    def width(self) -> int:
        return frame_width(len(self.robot_state), len(self.poses))


def frame_width(robot_dim: int, n_objects: int) -> int:
    return robot_dim + POSE_ENC_WIDTH * n_objects


def encode_frame(frame: ObservationFrame) -> Array:
    parts = [np.asarray(frame.robot_state, dtype=np.float32)]
    parts += [encode_pose(p) for p in frame.poses]
    return np.concatenate(parts)


def assemble_condition(frames: Sequence[ObservationFrame], obs_horizon: int) -> Array:
    """Flatten the last `obs_horizon` frames, oldest first.

    When fewer frames exist (episode start), the earliest available frame is
    repeated at the front so the output width is always constant.
    """
    if obs_horizon < 1:
        raise ValueError(f"obs_horizon must be >= 1, got {obs_horizon}")
    if not frames:
        raise ValueError("assemble_condition needs at least one frame")
    window = list(frames[-obs_horizon:])
    while len(window) < obs_horizon:
        window.insert(0, window[0])
    rows = [encode_frame(f) for f in window]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"frames have inconsistent encoded widths: {sorted(widths)}")
    return np.concatenate(rows)
