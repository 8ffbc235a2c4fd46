"""Serial-chain kinematics for velocity-controlled revolute arms.

Forward kinematics, translational/rotational Jacobians, the SO(3) log map,
and damped least-squares differential inverse kinematics. Joints are
described by a fixed rigid transform plus a unit rotation axis, which is
convention-free (any DH table converts into this form).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ORTHO_TOL = 1e-9


class KinematicsError(ValueError):
    """Invalid chain data or mismatched dimensions."""


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(psi: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for an axis-angle vector."""
    psi = np.asarray(psi, dtype=float)
    angle = float(np.linalg.norm(psi))
    if angle < 1e-12:
        K = skew(psi)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = psi / angle
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, with norm in [0, pi].

    Uses a series expansion below 1e-6 rad and an axis-extraction branch
    within 1e-6 of pi, the two singular regions of the log map.
    """
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 form stays well conditioned where acos((tr-1)/2) degrades
    angle = math.atan2(0.5 * float(np.linalg.norm(w)), 0.5 * (float(np.trace(R)) - 1.0))
    if angle < 1e-6:
        # log(R) ~ (R - R^T)/2 to second order
        return 0.5 * w
    if angle > math.pi - 1e-6:
        # Near pi, sin(angle) ~ 0: recover the axis from R + I instead.
        # R = I + 2*sin^2(a/2) * (nn^T - I) at a = pi, so diag gives |n_i|.
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        # Fix signs from the off-diagonal products n_i n_j.
        k = int(np.argmax(axis))
        axis = np.array([B[k, 0], B[k, 1], B[k, 2]])
        axis[k] = max(axis[k], 0.0)
        axis = axis / np.linalg.norm(axis)
        # Orient so the result is consistent with w when w is not exactly 0.
        if np.dot(axis, w) < 0.0:
            axis = -axis
        return angle * axis
    return angle / (2.0 * math.sin(angle)) * w


def rpy_to_matrix(rpy) -> np.ndarray:
    """Rotation from roll-pitch-yaw (extrinsic x-y-z): Rz(y) @ Ry(p) @ Rx(r)."""
    r, p, y = [float(a) for a in rpy]
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _check_rotation(R: np.ndarray, tol: float = 1e-7) -> None:
    if R.shape != (3, 3):
        raise KinematicsError(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=tol) or np.linalg.det(R) < 0:
        raise KinematicsError("matrix is not a proper rotation")


def transform(rotation: np.ndarray, translation) -> np.ndarray:
    """4x4 homogeneous transform from a rotation and a translation."""
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


@dataclass(frozen=True)
class Pose:
    """Rigid pose: position (m) and a proper rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        _check_rotation(self.rotation)

    def matrix(self) -> np.ndarray:
        return transform(self.rotation, self.position)


@dataclass(frozen=True)
class Joint:
    """Revolute joint: fixed parent transform followed by rotation about axis."""

    origin: np.ndarray  # 4x4 rigid transform from the previous frame
    axis: np.ndarray  # unit rotation axis in the joint frame

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise KinematicsError("joint axis must be a unit vector")
        _check_rotation(self.origin[:3, :3])


@dataclass(frozen=True)
class ControlPoint:
    """Sphere rigidly attached to a chain frame, used for collision rows."""

    frame: int  # 0 = base frame, j = frame after joint j
    offset: np.ndarray  # local offset in that frame (m)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.radius <= 0:
            raise KinematicsError("control point radius must be positive")


@dataclass(frozen=True)
class JointState:
    """Joint angles plus the angle and speed limits they live under."""

    q: np.ndarray
    limits_lo: np.ndarray
    limits_hi: np.ndarray
    vel_limit: np.ndarray

    def __post_init__(self):
        for name in ("q", "limits_lo", "limits_hi", "vel_limit"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.limits_lo < self.limits_hi).all():
            raise KinematicsError("limits_lo must be elementwise below limits_hi")
        if not (self.vel_limit > 0).all():
            raise KinematicsError("vel_limit must be strictly positive")
        if not (self.q.shape == self.limits_lo.shape == self.limits_hi.shape == self.vel_limit.shape):
            raise KinematicsError("joint state arrays must share one length")


@dataclass(frozen=True)
class KinematicChain:
    """Ordered revolute joints with a base pose and an end effector offset."""

    joints: tuple[Joint, ...]
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    ee_offset: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = "chain"
    control_points: tuple[ControlPoint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "base_pose", np.asarray(self.base_pose, dtype=float))
        object.__setattr__(self, "ee_offset", np.asarray(self.ee_offset, dtype=float))
        if len(self.joints) < 1:
            raise KinematicsError("chain needs at least one joint")
        _check_rotation(self.base_pose[:3, :3])
        _check_rotation(self.ee_offset[:3, :3])
        if not self.control_points:
            object.__setattr__(self, "control_points", default_control_points(self))

    @property
    def n(self) -> int:
        return len(self.joints)

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float).ravel()
        if q.shape != (self.n,):
            raise KinematicsError(f"expected {self.n} joint angles, got {q.shape}")
        return q


def default_control_points(chain: KinematicChain, radius: float = 0.06) -> tuple[ControlPoint, ...]:
    """One sphere per link midpoint plus one at the end effector."""
    points = []
    for j in range(1, chain.n + 1):
        nxt = chain.joints[j].origin[:3, 3] if j < chain.n else chain.ee_offset[:3, 3]
        points.append(ControlPoint(frame=j, offset=nxt / 2.0, radius=radius))
    points.append(ControlPoint(frame=chain.n, offset=chain.ee_offset[:3, 3], radius=radius))
    return tuple(points)


def frame_transforms(chain: KinematicChain, q: np.ndarray) -> list[np.ndarray]:
    """World transform of every chain frame: [base, after joint 1..n, ee]."""
    q = chain.check_q(q)
    frames = [chain.base_pose]
    T = chain.base_pose
    for joint, angle in zip(chain.joints, q):
        T = T @ joint.origin
        T = T @ transform(rotation_exp(joint.axis * angle), (0.0, 0.0, 0.0))
        frames.append(T)
    frames.append(T @ chain.ee_offset)
    return frames


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """End effector pose for joint angles q."""
    T = frame_transforms(chain, q)[-1]
    return Pose(position=T[:3, 3].copy(), rotation=T[:3, :3].copy())


def _joint_axes_origins(chain, frames):
    """World-frame rotation axis and origin of each joint."""
    axes = np.empty((chain.n, 3))
    origins = np.empty((chain.n, 3))
    for j in range(chain.n):
        T = frames[j] @ chain.joints[j].origin
        axes[j] = T[:3, :3] @ chain.joints[j].axis
        origins[j] = T[:3, 3]
    return axes, origins


def jacobians(chain: KinematicChain, q: np.ndarray, frames=None) -> tuple[np.ndarray, np.ndarray]:
    """Translational and rotational end effector Jacobians (world frame).

    Columns follow the revolute-joint rule: J_rot[:, j] is the world axis
    z_j, and J_trans[:, j] = z_j x (p_ee - p_j).
    """
    if frames is None:
        frames = frame_transforms(chain, q)
    axes, origins = _joint_axes_origins(chain, frames)
    p_ee = frames[-1][:3, 3]
    J_rot = axes.T.copy()
    J_trans = np.cross(axes, p_ee - origins).T.copy()
    return J_trans, J_rot


def point_kinematics(
    chain: KinematicChain, q: np.ndarray, points: tuple[ControlPoint, ...], frames=None
) -> tuple[np.ndarray, np.ndarray]:
    """Positions (k,3) and translational Jacobians (k,3,n) of attached points.

    Joints at or beyond a point's frame contribute zero columns.
    """
    if frames is None:
        frames = frame_transforms(chain, q)
    axes, origins = _joint_axes_origins(chain, frames)
    k, n = len(points), chain.n
    P = np.empty((k, 3))
    J = np.zeros((k, 3, n))
    for i, cp in enumerate(points):
        T = frames[cp.frame]
        p = T[:3, :3] @ cp.offset + T[:3, 3]
        P[i] = p
        m = min(cp.frame, n)
        if m > 0:
            J[i, :, :m] = np.cross(axes[:m], p - origins[:m]).T
    return P, J


def diff_ik(
    chain: KinematicChain, q: np.ndarray, v_des: np.ndarray, damping: float = 1e-2, frames=None
) -> np.ndarray:
    """Damped least-squares inverse kinematics for a 6-vector twist.

    v_des stacks linear velocity over angular velocity. The solution
    u = J^T (J J^T + damping^2 I)^-1 v_des stays bounded at singular J.
    """
    v_des = np.asarray(v_des, dtype=float).ravel()
    if v_des.shape != (6,):
        raise KinematicsError(f"twist must have 6 components, got {v_des.shape}")
    J_trans, J_rot = jacobians(chain, q, frames=frames)
    J = np.vstack([J_trans, J_rot])
    A = J @ J.T + (damping**2) * np.eye(6)
    return J.T @ np.linalg.solve(A, v_des)


# --- chain file IO ---------------------------------------------------------


def _origin_from_dict(d: dict) -> np.ndarray:
    xyz = d.get("xyz", (0.0, 0.0, 0.0))
    rpy = d.get("rpy", (0.0, 0.0, 0.0))
    return transform(rpy_to_matrix(rpy), xyz)


def chain_from_dict(data: dict) -> tuple[KinematicChain, JointState]:
    """Build a chain and its initial joint state from the JSON schema.

    Schema: {name, joints: [{axis, origin: {xyz, rpy}}...], ee_offset,
    limits_lo, limits_hi, vel_limit, control_points?, base_pose?, q0?}.
    """
    joints = tuple(
        Joint(origin=_origin_from_dict(j.get("origin", {})), axis=j["axis"]) for j in data["joints"]
    )
    cps = tuple(
        ControlPoint(frame=cp["frame"], offset=cp["offset"], radius=cp["radius"])
        for cp in data.get("control_points", [])
    )
    chain = KinematicChain(
        joints=joints,
        base_pose=_origin_from_dict(data.get("base_pose", {})),
        ee_offset=_origin_from_dict(data.get("ee_offset", {})),
        name=data.get("name", "chain"),
        control_points=cps,
    )
    n = chain.n
    state = JointState(
        q=data.get("q0", [0.0] * n),
        limits_lo=data["limits_lo"],
        limits_hi=data["limits_hi"],
        vel_limit=data["vel_limit"],
    )
    if state.q.shape != (n,):
        raise KinematicsError("q0/limits length does not match joint count")
    return chain, state


def load_chain(path) -> tuple[KinematicChain, JointState]:
    with open(path) as f:
        return chain_from_dict(json.load(f))


def fr3_chain() -> tuple[KinematicChain, JointState]:
    """The 7-joint arm shipped in assets (vendor-published geometry)."""
    return load_chain(Path(__file__).parent / "assets" / "fr3.json")
