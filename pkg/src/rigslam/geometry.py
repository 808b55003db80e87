"""Rigid transforms, pinhole projection and Pluecker-line algebra.

Conventions used throughout the package:
  * a Pose (R, t) maps points from its source frame into its target frame
    as x_target = R @ x_source + t; names like body_T_cam read
    "cam-to-body transform",
  * camera frames are right-handed with z forward, pixels (x right, y down),
  * Pluecker rays are (direction q, moment m) with |q| = 1 and m = p x q
    for any point p on the line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidIntrinsicsError

EPS_DEPTH = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == cross(a, b)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-9:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta > np.pi - 1e-6:
        # near pi the axis comes from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        # fix sign using the skew part
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return theta * axis
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


def so3_jr_inv(w: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3), used for log-residual derivatives."""
    theta = float(np.linalg.norm(w))
    K = skew(w)
    if theta < 1e-7:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0) * (K @ K)
    c = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix."""
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform stored as unit quaternion (w,x,y,z) + translation.

    Quaternion storage keeps long composition chains orthonormal; the
    rotation matrix is materialized on demand.
    """

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        q = q / np.linalg.norm(q)
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).copy())

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(_quat_from_matrix(np.asarray(R, dtype=float)), t)

    @staticmethod
    def exp(xi: np.ndarray) -> "Pose":
        """Pose from a 6-vector (rotation vector, translation)."""
        xi = np.asarray(xi, dtype=float)
        return Pose.from_rt(so3_exp(xi[:3]), xi[3:])

    @property
    def rotation(self) -> np.ndarray:
        return _quat_to_matrix(self.quat)

    def compose(self, other: "Pose") -> "Pose":
        q = _quat_mul(self.quat, other.quat)
        t = self.rotation @ other.translation + self.translation
        return Pose(q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        q_inv = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        t_inv = -(_quat_to_matrix(q_inv) @ self.translation)
        return Pose(q_inv, t_inv)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (n, 3) batch."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation

    def retract(self, delta: np.ndarray) -> "Pose":
        """Right-perturbed update: R <- R exp([dtheta]x), t <- t + dt."""
        delta = np.asarray(delta, dtype=float)
        R = self.rotation @ so3_exp(delta[:3])
        return Pose.from_rt(R, self.translation + delta[3:])

    def rotation_angle_to(self, other: "Pose") -> float:
        """Geodesic angle between the two rotations (radians)."""
        return float(np.linalg.norm(so3_log(self.rotation.T @ other.rotation)))

    def is_identity(self, tol: float = 1e-9) -> bool:
        return (
            np.allclose(self.rotation, np.eye(3), atol=tol)
            and np.allclose(self.translation, 0.0, atol=tol)
        )


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsicsError(f"non-positive focal length ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidIntrinsicsError("principal point outside image bounds")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        if self.fx == 0 or self.fy == 0:
            raise InvalidIntrinsicsError("singular intrinsic matrix")
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def contains(self, uv: np.ndarray) -> np.ndarray:
        """Bounds test for one pixel or an (n, 2) batch."""
        uv = np.asarray(uv)
        x, y = uv[..., 0], uv[..., 1]
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)


@dataclass(frozen=True)
class PluckerRay:
    """Line in 3D as unit direction + moment, with q . m = 0."""

    direction: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("zero ray direction")
        object.__setattr__(self, "direction", d / n)
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=float) / n)

    @staticmethod
    def through_point(point: np.ndarray, direction: np.ndarray) -> "PluckerRay":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return PluckerRay(d, np.cross(np.asarray(point, dtype=float), d))

    @property
    def closest_point_to_origin(self) -> np.ndarray:
        return np.cross(self.direction, self.moment)

    def transformed(self, pose: Pose) -> "PluckerRay":
        """Ray re-expressed in pose's target frame."""
        R = pose.rotation
        q = R @ self.direction
        m = R @ self.moment + np.cross(pose.translation, q)
        return PluckerRay(q, m)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.direction, self.moment])


@dataclass
class Landmark:
    """World point with its observation history.

    Observations are (keyframe id, camera index, keypoint id) triples and
    are append-only while the landmark lives in the map.
    """

    id: int
    position: np.ndarray
    observations: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)

    def add_observation(self, keyframe_id: int, camera_index: int, keypoint_id: int) -> None:
        key = (keyframe_id, camera_index, keypoint_id)
        if key in self.observations:
            raise ValueError(f"duplicate observation {key} on landmark {self.id}")
        self.observations.append(key)


def pixel_to_plucker(u: np.ndarray, K: Intrinsics, body_T_cam: Pose) -> PluckerRay:
    """Lift a pixel to the Pluecker ray it observes, in the rig body frame."""
    if K.fx == 0 or K.fy == 0:
        raise InvalidIntrinsicsError("singular intrinsic matrix")
    u = np.asarray(u, dtype=float)
    u_hat = np.array([(u[0] - K.cx) / K.fx, (u[1] - K.cy) / K.fy, 1.0])
    q = body_T_cam.rotation @ u_hat
    q = q / np.linalg.norm(q)
    m = np.cross(body_T_cam.translation, q)
    return PluckerRay(q, m)


def project(
    point_world: np.ndarray, world_T_body: Pose, body_T_cam: Pose, K: Intrinsics
) -> np.ndarray:
    """Project a world point through the rig into camera pixels.

    Raises BehindCameraError when the camera-frame depth is below
    EPS_DEPTH; callers treat that as "not visible".
    """
    world_T_cam = world_T_body.compose(body_T_cam)
    R = world_T_cam.rotation
    p_cam = R.T @ (np.asarray(point_world, dtype=float) - world_T_cam.translation)
    if p_cam[2] <= EPS_DEPTH:
        raise BehindCameraError(f"depth {p_cam[2]:.3g} below threshold")
    return np.array(
        [K.fx * p_cam[0] / p_cam[2] + K.cx, K.fy * p_cam[1] / p_cam[2] + K.cy]
    )


def ray_point_residual(ray: PluckerRay, point_body: np.ndarray) -> np.ndarray:
    """Defect between a body-frame point and its orthogonal projection onto the ray.

    Zero iff the point lies on the line; equals (lambda q + q x m) - P for
    the depth lambda of the orthogonal projection.
    """
    p = np.asarray(point_body, dtype=float)
    foot = ray.closest_point_to_origin
    lam = float(np.dot(ray.direction, p))
    return foot + lam * ray.direction - p
