"""Rigid transforms and the unicycle correction model.

Poses are stored as a rotation matrix plus a translation vector. A pose
``T`` maps body-frame points into the odometry frame, ``T·s = R s + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

# Below this heading change the arc ratios use their Taylor expansions.
SMALL_ANGLE = 1e-8

_SELECTOR = np.zeros((6, 2))
_SELECTOR[0, 0] = 1.0
_SELECTOR[5, 1] = 1.0
_SELECTOR.setflags(write=False)


def skew(v: np.ndarray) -> np.ndarray:
    """Return the 3x3 matrix ``[v]x`` with ``[v]x @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3). Arrays are copied and frozen on construction."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, translation) -> Pose:
        return cls(np.eye(3), translation)

    @classmethod
    def from_planar(cls, x: float, y: float, yaw: float) -> Pose:
        return cls(rotz(yaw), (x, y, 0.0))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> Pose:
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> Pose:
        """Build from a Hamilton quaternion in scalar-last order."""
        return cls(Rotation.from_quat(quat_xyzw).as_matrix(), translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        if q[3] < 0.0:
            q = -q
        return q / np.linalg.norm(q)

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def roll_pitch_yaw(self) -> tuple[float, float, float]:
        """Intrinsic Z-Y-X angles, ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
        r = self.rotation
        pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
        roll = math.atan2(r[2, 1], r[2, 2])
        return roll, pitch, math.atan2(r[1, 0], r[0, 0])

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        if not isinstance(other, Pose):
            return NotImplemented
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the pose to a single point ``(3,)`` or a batch ``(N, 3)``."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        t = np.array2string(self.translation, precision=4)
        r = np.array2string(self.rotvec(), precision=4)
        return f"Pose(t={t}, rotvec={r})"


class UnicycleCorrection(NamedTuple):
    """Integrated control correction: arc length and heading change."""

    linear: float
    angular: float


def compose(a: Pose, b: Pose) -> Pose:
    return a @ b


def inverse(a: Pose) -> Pose:
    return a.inverse()


def transform_point(a: Pose, p) -> np.ndarray:
    return a.transform(p)


def interpolate(a: Pose, b: Pose, alpha: float) -> Pose:
    """Pose a fraction ``alpha`` of the way from ``a`` to ``b``.

    The relative rotation is scaled in axis-angle form; translations blend
    linearly. ``alpha`` of 0 and 1 reproduce ``a`` and ``b`` exactly.
    """
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    rel_rot = a.rotation.T @ b.rotation
    rot = a.rotation @ Rotation.from_rotvec(
        alpha * Rotation.from_matrix(rel_rot).as_rotvec()
    ).as_matrix()
    trans = (1.0 - alpha) * a.translation + alpha * b.translation
    return Pose(rot, trans)


def integrate_unicycle(correction) -> np.ndarray:
    """Twist-shaped displacement ``[x, y, z, roll, pitch, yaw]`` of a unicycle arc.

    Driving an arc of length ``dx`` while turning by ``dtheta`` ends at the
    chord ``dx * (sin(dtheta)/dtheta, (1 - cos(dtheta))/dtheta)``.
    """
    dx, dtheta = float(correction[0]), float(correction[1])
    if abs(dtheta) < SMALL_ANGLE:
        sinc = 1.0 - dtheta * dtheta / 6.0
        cosc = 0.5 * dtheta
    else:
        sinc = math.sin(dtheta) / dtheta
        cosc = (1.0 - math.cos(dtheta)) / dtheta
    return np.array([dx * sinc, dx * cosc, 0.0, 0.0, 0.0, dtheta])


def correction_pose(correction) -> Pose:
    """Planar pose reached by driving the correction arc from the identity."""
    twist = integrate_unicycle(correction)
    return Pose(rotz(twist[5]), twist[:3])


def apply_correction(pose: Pose, correction) -> Pose:
    """Right-multiply ``pose`` by the unicycle arc of ``correction``."""
    return pose @ correction_pose(correction)


def kinematic_jacobian(correction_at_zero=(0.0, 0.0)) -> np.ndarray:
    """Derivative of :func:`integrate_unicycle` at the origin (6x2 selector)."""
    if any(float(c) != 0.0 for c in correction_at_zero):
        raise ValueError("the kinematic Jacobian is only provided at zero correction")
    return _SELECTOR.copy()


def icp_jacobian(pose: Pose, point) -> np.ndarray:
    """d(pose ⊞ du · s)/d(du) at ``du = 0`` for body point ``s`` (3x2)."""
    s = np.asarray(point, dtype=float)
    local = np.hstack([np.eye(3), -skew(s)])
    return pose.rotation @ local @ _SELECTOR


def icp_jacobians(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Batched :func:`icp_jacobian` for ``(N, 3)`` points, shape ``(N, 3, 2)``.

    Column one is ``R e1``; column two is ``R (-s_y, s_x, 0)``.
    """
    points = np.asarray(points, dtype=float)
    jac = np.empty((len(points), 3, 2))
    jac[:, :, 0] = pose.rotation[:, 0]
    jac[:, :, 1] = (
        -points[:, 1, None] * pose.rotation[:, 0] + points[:, 0, None] * pose.rotation[:, 1]
    )
    return jac


def translation_log(deviation: Pose) -> np.ndarray:
    """Translation part of a deviation pose."""
    return np.array(deviation.translation)


def is_planar(pose: Pose, tol: float = 1e-9) -> bool:
    """True when ``z``, roll and pitch all vanish within ``tol``."""
    r = pose.rotation
    return (
        abs(pose.translation[2]) <= tol
        and abs(r[2, 0]) <= tol
        and abs(r[2, 1]) <= tol
        and abs(r[0, 2]) <= tol
        and abs(r[1, 2]) <= tol
    )


def project_to_planar(pose: Pose) -> Pose:
    """Drop z, roll and pitch, keeping the yaw read from the rotation."""
    return Pose.from_planar(pose.translation[0], pose.translation[1], pose.yaw)
