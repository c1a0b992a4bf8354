"""Quaternion algebra, small vector helpers, and the shared fixed-step RK4 integrator.

Conventions used by every module in this package:

* Quaternions are stored scalar-last: components ``(x, y, z, w)`` with the
  vector part first and the scalar part ``w`` fourth.
* The Hamilton product is used throughout; attitude kinematics is
  ``q_dot = 0.5 * omega (x) q`` with ``omega`` promoted to a pure quaternion.
* The error quaternion ``quat_error(q, q_f) = q (x) conj(q_f)`` measures the
  rotation of the current attitude relative to the target; it is the identity
  when ``q == q_f`` and composes as ``dq (x) q_f = q``.  This pairing, together
  with the kinematics above, makes the feedback laws in
  :mod:`formctl.controllers` stabilizing (verified by the closed-loop tests).
* Internal units are SI and radians.  Degrees appear only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

Vec3 = np.ndarray  # shape (3,)
Mat3 = np.ndarray  # shape (3, 3)


class IntegrationFault(RuntimeError):
    """Raised when a derivative evaluation returns non-finite values."""


# ---------------------------------------------------------------------------
# Array kernels (scalar-last, broadcast over leading axes).  The Quaternion
# class below and the batched simulation engine share these.
# ---------------------------------------------------------------------------

def quat_mul_arr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of scalar-last quaternion arrays, broadcasting."""
    ax, ay, az, aw = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, bz, bw = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conj_arr(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., :3] = -out[..., :3]
    return out


def quat_normalize_arr(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / norm


def quat_error_arr(q: np.ndarray, q_f: np.ndarray) -> np.ndarray:
    """Error quaternion dq = q (x) conj(q_f); identity when q equals q_f."""
    return quat_mul_arr(q, quat_conj_arr(q_f))


def quat_rotate_arr(q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Rotate vectors by unit quaternions: vec(q (x) (x,0) (x) conj(q)).

    For an attitude propagated by ``q_dot = 0.5 * omega (x) q`` this maps
    body-frame vectors into the world frame (see module docstring).
    """
    qv = q[..., :3]
    qw = q[..., 3:4]
    t = 2.0 * np.cross(qv, x)
    return x + qw * t + np.cross(qv, t)


def quat_kinematics_arr(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """q_dot = 0.5 * omega (x) q with omega a pure quaternion."""
    ox, oy, oz = omega[..., 0], omega[..., 1], omega[..., 2]
    qx, qy, qz, qw = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return 0.5 * np.stack(
        [
            ox * qw + oy * qz - oz * qy,
            -ox * qz + oy * qw + oz * qx,
            ox * qy - oy * qx + oz * qw,
            -ox * qx - oy * qy - oz * qz,
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# Quaternion value type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quaternion:
    """Unit attitude quaternion, scalar-last storage (x, y, z, w).

    Immutable value type.  ``q`` and ``-q`` encode the same rotation; callers
    comparing attitudes must accept either sign.
    """

    x: float
    y: float
    z: float
    w: float

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def from_array(a: Sequence[float]) -> "Quaternion":
        return Quaternion(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @staticmethod
    def from_axis_angle(axis: Sequence[float], angle: float) -> "Quaternion":
        ax = np.asarray(axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        half = 0.5 * angle
        s = math.sin(half)
        return Quaternion(ax[0] * s, ax[1] * s, ax[2] * s, math.cos(half))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=float)

    @property
    def vec(self) -> Vec3:
        return np.array([self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero quaternion")
        return Quaternion(self.x / n, self.y / n, self.z / n, self.w / n)

    def conjugate(self) -> "Quaternion":
        return Quaternion(-self.x, -self.y, -self.z, self.w)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.x, -self.y, -self.z, -self.w)


def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product a (x) b."""
    return Quaternion.from_array(quat_mul_arr(a.to_array(), b.to_array()))


def quat_error(q: Quaternion, q_f: Quaternion) -> Quaternion:
    """Error quaternion between the current attitude and a target.

    Returns ``dq = q (x) conj(q_f)``, the rotation of ``q`` relative to
    ``q_f``: ``dq (x) q_f == q`` and ``dq`` is the identity at convergence.
    Unit norm is preserved up to rounding.
    """
    return Quaternion.from_array(quat_error_arr(q.to_array(), q_f.to_array()))


def quat_rotate(q: Quaternion, x: Sequence[float]) -> Vec3:
    """Rotate a vector from the body frame into the world frame."""
    return quat_rotate_arr(q.to_array(), np.asarray(x, dtype=float))


def rot_matrix(q: Quaternion) -> Mat3:
    """Rotation matrix R with R @ x == quat_rotate(q, x)."""
    x, y, z, w = q.x, q.y, q.z, q.w
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def principal_angle(dq: Quaternion) -> float:
    """Principal rotation angle of an error quaternion, in [0, pi] radians.

    Uses ``2*acos(|w|)`` so both covers of a rotation give the same angle.
    """
    return 2.0 * math.acos(min(1.0, abs(dq.w)))


def sign_pos(x: float) -> float:
    """sign() with sign(0) := +1, the project-wide 180-degree tie-break."""
    return 1.0 if x >= 0.0 else -1.0


def sat(s, eps):
    """Boundary-layer saturation: s/eps inside |s| <= eps, +/-1 outside.

    Continuous and odd.  Accepts scalars or arrays (componentwise, with
    per-component widths).  eps must be strictly positive.
    """
    eps_arr = np.asarray(eps, dtype=float)
    if np.any(eps_arr <= 0.0):
        raise ValueError("boundary-layer width eps must be > 0")
    out = np.clip(np.asarray(s, dtype=float) / eps_arr, -1.0, 1.0)
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Fixed-step RK4
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    quat_offsets lists start indices of scalar-last quaternion blocks inside
    the flat state vector; those blocks are renormalized after each step when
    renormalize_quaternion is set.
    """

    dt: float
    renormalize_quaternion: bool = True
    quat_offsets: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("integrator step dt must be > 0")


def rk4_step(
    derivative: Callable[[float, np.ndarray], np.ndarray],
    x: np.ndarray,
    t: float,
    cfg: IntegratorConfig,
) -> np.ndarray:
    """One classical 4-stage Runge-Kutta step of size cfg.dt.

    Raises IntegrationFault if any stage produces non-finite values.
    """
    dt = cfg.dt
    k1 = np.asarray(derivative(t, x), dtype=float)
    k2 = np.asarray(derivative(t + 0.5 * dt, x + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(derivative(t + 0.5 * dt, x + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(derivative(t + dt, x + dt * k3), dtype=float)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationFault("non-finite state after RK4 stage evaluation")
    if cfg.renormalize_quaternion:
        for off in cfg.quat_offsets:
            block = out[..., off : off + 4]
            out[..., off : off + 4] = block / np.linalg.norm(
                block, axis=-1, keepdims=True
            )
    return out
