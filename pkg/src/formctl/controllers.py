"""Feedback laws: Lyapunov attitude, boundary-layer SMC (attitude, relative
position, AUV rotational/translational), and the PD baseline.

All laws are pure functions of their inputs; gain records are immutable.
Every controller output is invariant to negating the error quaternion
(double-cover safety), with ``sign(0) := +1`` fixing the 180-degree tie.

The attitude SMC feed-forward cross term is written as
``+ sign(dq4) * dq_vec x (omega_f + omega)``: that is the exact derivative of
``sign(dq4) * dq_vec`` under this package's error convention
``dq = q (x) conj(q_f)`` and kinematics ``q_dot = 0.5 * omega (x) q``.  The
closed-loop tests check the reaching law ``s_dot = -Z sat(s, eps)`` directly
by finite differences, which pins this sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .mathcore import Mat3, Quaternion, Vec3, quat_error, quat_rotate, sat, sign_pos
from .dynamics import (
    AuvBody,
    BodyState,
    RelativePair,
    auv_drag_force,
    auv_drag_moment,
)


def _as_diag3(x) -> np.ndarray:
    """Accept a scalar, length-3 vector, or 3x3 diagonal; return diagonal (3,)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 2:
        return np.diag(a).copy()
    return a * np.ones(3)


# ---------------------------------------------------------------------------
# Gain records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovGains:
    """Attitude-error and rate gains for the large-angle feedback law."""

    k1: float
    k2: float

    def __post_init__(self) -> None:
        if self.k1 <= 0.0 or self.k2 <= 0.0:
            raise ValueError("gains must be strictly positive")


@dataclass(frozen=True)
class SmcAttitudeGains:
    """Sliding-surface slope, reaching gain diagonal, and boundary widths."""

    k_smc: float
    Z: np.ndarray
    eps: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "Z", _as_diag3(self.Z))
        object.__setattr__(self, "eps", _as_diag3(self.eps))
        if self.k_smc <= 0.0 or np.any(self.Z <= 0.0) or np.any(self.eps <= 0.0):
            raise ValueError("all SMC attitude gains must be strictly positive")


@dataclass(frozen=True)
class SmcRelPosGains:
    """Relative-position SMC gains; a vanishing boundary layer is obtained by
    passing a tiny eps (the reaching term then acts as a sign law)."""

    k: float
    Z: np.ndarray
    eps: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "Z", _as_diag3(self.Z))
        object.__setattr__(self, "eps", _as_diag3(self.eps))
        if self.k <= 0.0 or np.any(self.Z <= 0.0) or np.any(self.eps <= 0.0):
            raise ValueError("all relative-position SMC gains must be strictly positive")


@dataclass(frozen=True)
class PdGains:
    """Proportional/derivative baseline gains."""

    P: float
    D: float

    def __post_init__(self) -> None:
        if self.P < 0.0 or self.D < 0.0:
            raise ValueError("PD gains must be nonnegative")


@dataclass(frozen=True)
class AuvSmcGains:
    """Rotational and translational SMC gain set for one AUV."""

    Lambda_w: np.ndarray
    K_w: np.ndarray
    B_w: np.ndarray
    eps_w: np.ndarray
    Lambda_v: np.ndarray
    K_v: np.ndarray
    B_v: np.ndarray
    eps_v: np.ndarray

    def __post_init__(self) -> None:
        for name in ("Lambda_w", "K_w", "B_w", "eps_w", "Lambda_v", "K_v", "B_v", "eps_v"):
            object.__setattr__(self, name, _as_diag3(getattr(self, name)))
            if np.any(getattr(self, name) <= 0.0):
                raise ValueError(f"{name} entries must be strictly positive")


def table_auv_gains() -> AuvSmcGains:
    """Default AUV gain set matched to the formation experiment."""
    return AuvSmcGains(
        Lambda_w=2.0, K_w=0.8, B_w=0.2, eps_w=0.05,
        Lambda_v=1.0, K_v=4.0, B_v=0.8, eps_v=0.05,
    )


@dataclass(frozen=True)
class FormationOffset:
    """Fixed leader-relative position offset for the follower."""

    d: Vec3 = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.d)):
            raise ValueError("offset must be finite")


# ---------------------------------------------------------------------------
# Spacecraft attitude laws
# ---------------------------------------------------------------------------

def lyapunov_attitude_torque(dq: Quaternion, omega: Vec3, g: LyapunovGains) -> Vec3:
    """Large-angle shortest-rotation feedback:
    tau = -k1 sign(dq4) dq_vec - k2 (1 - dq_vec' dq_vec) omega.
    """
    qv = dq.vec
    return -g.k1 * sign_pos(dq.w) * qv - g.k2 * (1.0 - qv @ qv) * np.asarray(omega, float)


def lyapunov_value(dq: Quaternion, omega: Vec3, J: Mat3, g: LyapunovGains) -> float:
    """Candidate energy V = 1/4 w'Jw + 1/2 k1 |dq_vec|^2 + 1/2 k2 (1 - dq4)^2."""
    w = np.asarray(omega, float)
    qv = dq.vec
    return float(
        0.25 * w @ np.asarray(J) @ w
        + 0.5 * g.k1 * (qv @ qv)
        + 0.5 * g.k2 * (1.0 - dq.w) ** 2
    )


def smc_attitude_surface(
    dq: Quaternion, omega: Vec3, omega_f: Vec3, k_smc: float
) -> Vec3:
    """Shortest-rotation sliding variable s = (w - w_f) + k sign(dq4) dq_vec."""
    return (
        np.asarray(omega, float)
        - np.asarray(omega_f, float)
        + k_smc * sign_pos(dq.w) * dq.vec
    )


def smc_attitude_torque(
    dq: Quaternion,
    omega: Vec3,
    omega_f: Vec3,
    omega_f_dot: Vec3,
    J: Mat3,
    g: SmcAttitudeGains,
) -> Vec3:
    """Boundary-layer SMC attitude torque.

    Enforces s_dot = -Z sat(s, eps) on the surface from
    :func:`smc_attitude_surface` by cancelling the gyroscopic torque and
    feeding forward the error-quaternion kinematics.
    """
    w = np.asarray(omega, float)
    wf = np.asarray(omega_f, float)
    qv, q4 = dq.vec, dq.w
    s = smc_attitude_surface(dq, w, wf, g.k_smc)
    kin = 0.5 * g.k_smc * (
        abs(q4) * (wf - w) + sign_pos(q4) * np.cross(qv, wf + w)
    )
    J = np.asarray(J, float)
    return J @ (kin + np.asarray(omega_f_dot, float) - g.Z * sat(s, g.eps)) + np.cross(
        w, J @ w
    )


def pd_attitude_torque(dq: Quaternion, omega: Vec3, omega_f: Vec3, g: PdGains) -> Vec3:
    """PD baseline on the attitude error vector: no feed-forward, no
    gyroscopic cancellation."""
    err_r = sign_pos(dq.w) * dq.vec
    err_v = np.asarray(omega, float) - np.asarray(omega_f, float)
    return pd_relpos_force(err_r, err_v, g)


# ---------------------------------------------------------------------------
# Relative-position laws
# ---------------------------------------------------------------------------

def smc_relpos_surface(
    pair: RelativePair, r_rel_f: Vec3, v_rel_f: Vec3, k: float
) -> Vec3:
    """Translational sliding variable s = (v_rel - v_rel_f) + k (r_rel - r_rel_f)."""
    return (pair.v_rel - np.asarray(v_rel_f, float)) + k * (
        pair.r_rel - np.asarray(r_rel_f, float)
    )


def smc_relpos_force(
    pair: RelativePair,
    refs: Tuple[Vec3, Vec3],
    u_L: Vec3,
    mu: float,
    g: SmcRelPosGains,
) -> Vec3:
    """Follower control for relative-position station keeping.

    u_F = mu (r_F/|r_F|^3 - r_L/|r_L|^3) + u_L - k (v_rel - v_rel_f)
          - Z sat(s, eps)

    The first two terms cancel the assumed relative model (differential
    gravity plus leader thrust); the remainder drives s_dot = -Z sat(s, eps).
    """
    r_rel_f, v_rel_f = refs
    r_L, r_F = pair.leader.r, pair.follower.r
    nL, nF = np.linalg.norm(r_L), np.linalg.norm(r_F)
    if nL == 0.0 or nF == 0.0:
        raise ValueError("zero-radius position is singular")
    s = smc_relpos_surface(pair, r_rel_f, v_rel_f, g.k)
    return (
        mu * (r_F / nF**3 - r_L / nL**3)
        + np.asarray(u_L, float)
        - g.k * (pair.v_rel - np.asarray(v_rel_f, float))
        - g.Z * sat(s, g.eps)
    )


def pd_relpos_force(err_r: Vec3, err_v: Vec3, g: PdGains) -> Vec3:
    """Baseline linear law u = -P err_r - D err_v."""
    return -g.P * np.asarray(err_r, float) - g.D * np.asarray(err_v, float)


# ---------------------------------------------------------------------------
# AUV laws
# ---------------------------------------------------------------------------

def auv_rotational_surface(
    state: BodyState, q_d: Quaternion, omega_d: Vec3, Lambda_w: np.ndarray
) -> Vec3:
    q_e = quat_error(state.q, q_d)
    return (state.omega - np.asarray(omega_d, float)) + Lambda_w * sign_pos(
        q_e.w
    ) * q_e.vec


def auv_rotational_torque(
    state: BodyState,
    q_d: Quaternion,
    omega_d: Vec3,
    body: AuvBody,
    g: AuvSmcGains,
) -> Vec3:
    """Attitude SMC: cancel gyroscopic and drag moments, add surface feedback.

    tau = w x Jw + M_drag(w) - K_w s_w - B_w sat(s_w, eps_w)
    """
    w = state.omega
    J_diag = np.diag(body.J_total)
    s_w = auv_rotational_surface(state, q_d, omega_d, g.Lambda_w)
    return (
        np.cross(w, J_diag * w)
        + auv_drag_moment(w, body)
        - g.K_w * s_w
        - g.B_w * sat(s_w, g.eps_w)
    )


def auv_translational_force(
    state: BodyState,
    r_d: Vec3,
    v_d: Vec3,
    body: AuvBody,
    v_current_world: Vec3 | None,
    g: AuvSmcGains,
) -> Vec3:
    """Translational SMC with drag, Coriolis, and buoyancy/weight feed-forward.

    u = F_drag(v_r) + M_tot (w x v_r) + (F_b - m g e3) - K_v s_v
        - B_v sat(s_v, eps_v)

    Body-frame errors: e_r = R(q)^T (r - r_d), e_v = v - R(q)^T v_d, and
    s_v = e_v + Lambda_v e_r.  The buoyancy/weight term vanishes for a
    neutrally buoyant body.
    """
    q_conj = state.q.conjugate()
    e_r = quat_rotate(q_conj, state.r - np.asarray(r_d, float))
    e_v = state.v - quat_rotate(q_conj, np.asarray(v_d, float))
    s_v = e_v + g.Lambda_v * e_r

    v_c = np.zeros(3) if v_current_world is None else np.asarray(v_current_world, float)
    v_r = state.v - quat_rotate(q_conj, v_c)
    M_tot_diag = np.diag(body.M_total)

    buoy_comp = quat_rotate(q_conj, np.array([0.0, 0.0, body.net_buoyant_force]))
    return (
        auv_drag_force(v_r, body)
        + M_tot_diag * np.cross(state.omega, v_r)
        + buoy_comp
        - g.K_v * s_v
        - g.B_v * sat(s_v, g.eps_v)
    )


def follower_reference(
    leader: BodyState, offset: FormationOffset
) -> Tuple[Vec3, Vec3]:
    """Follower references r_d = r_L + d and v_d = v_L."""
    return leader.r + np.asarray(offset.d, float), np.array(leader.v)
