"""Plant models and disturbance generators.

Covers the spacecraft attitude plant, the leader/follower relative-orbit
model, AUV 6-DOF hydrodynamics with linear+quadratic drag, first-order
Gauss-Markov ocean currents, and additive-noise sensing with an optional
first-order low-pass.

Frames: attitude quaternions follow the conventions in
:mod:`formctl.mathcore`.  AUV linear/angular velocities are body-frame,
positions and currents world-frame with z up.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .mathcore import (
    Quaternion,
    Vec3,
    Mat3,
    quat_kinematics_arr,
    quat_rotate_arr,
)


# ---------------------------------------------------------------------------
# Bodies and states
# ---------------------------------------------------------------------------

def _check_spd(m: np.ndarray, name: str) -> None:
    if not np.allclose(m, m.T):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(m) <= 0.0):
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True)
class SpacecraftBody:
    """Rigid spacecraft: nominal inertia, inertia uncertainty, and mu.

    The true inertia used by the plant is J_nominal + J_uncertainty; the sum
    must stay symmetric positive definite.
    """

    J_nominal: Mat3
    J_uncertainty: Mat3 = field(default_factory=lambda: np.zeros((3, 3)))
    mu: float = 3.986004418e14  # m^3/s^2

    def __post_init__(self) -> None:
        _check_spd(self.J, "inertia J_nominal + J_uncertainty")

    @property
    def J(self) -> Mat3:
        return np.asarray(self.J_nominal) + np.asarray(self.J_uncertainty)


@dataclass(frozen=True)
class BodyState:
    """Position, velocity, attitude, and angular rate of one agent."""

    r: Vec3
    v: Vec3
    q: Quaternion
    omega: Vec3

    @staticmethod
    def at_rest(q: Optional[Quaternion] = None) -> "BodyState":
        return BodyState(
            r=np.zeros(3),
            v=np.zeros(3),
            q=q if q is not None else Quaternion.identity(),
            omega=np.zeros(3),
        )

    def to_array(self) -> np.ndarray:
        """Flat layout [r(3), v(3), q(4), omega(3)] used by the integrator."""
        return np.concatenate([self.r, self.v, self.q.to_array(), self.omega])

    @staticmethod
    def from_array(x: np.ndarray) -> "BodyState":
        return BodyState(
            r=np.array(x[0:3]),
            v=np.array(x[3:6]),
            q=Quaternion.from_array(x[6:10]),
            omega=np.array(x[10:13]),
        )


# Offset of the quaternion block inside BodyState.to_array()
BODY_QUAT_OFFSET = 6


@dataclass(frozen=True)
class RelativePair:
    """Leader/follower pair with cached relative state r_rel = r_L - r_F."""

    leader: BodyState
    follower: BodyState

    @property
    def r_rel(self) -> Vec3:
        return self.leader.r - self.follower.r

    @property
    def v_rel(self) -> Vec3:
        return self.leader.v - self.follower.v


@dataclass(frozen=True)
class AuvBody:
    """AUV rigid-body, added-mass, and drag parameters (diagonal models).

    D_v1/D_v2 are linear/quadratic translational drag diagonals, D_w1/D_w2
    the rotational ones.  J_total already includes the added rotational
    inertia.  rho * V_displaced == m means neutral buoyancy.
    """

    m: float
    M_added: Mat3
    J_total: Mat3
    D_v1: Mat3
    D_v2: Mat3
    D_w1: Mat3
    D_w2: Mat3
    rho: float = 1025.0
    V_displaced: float = 0.0
    g: float = 9.81

    def __post_init__(self) -> None:
        if self.m <= 0.0:
            raise ValueError("mass must be > 0")
        if self.rho * self.V_displaced < 0.0:
            raise ValueError("displaced buoyant mass must be >= 0")
        for name in ("D_v1", "D_v2", "D_w1", "D_w2"):
            if np.any(np.diag(getattr(self, name)) < 0.0):
                raise ValueError(f"{name} diagonal must be >= 0")

    @property
    def M_total(self) -> Mat3:
        """Per-axis translational mass: rigid mass plus added mass."""
        return self.m * np.eye(3) + np.asarray(self.M_added)

    @property
    def net_buoyant_force(self) -> float:
        """Signed net vertical force magnitude (rho*V - m) * g, world z-up."""
        return (self.rho * self.V_displaced - self.m) * self.g


def table_auv_body() -> AuvBody:
    """Default AUV parameter set used by the formation experiment.

    Neutrally buoyant (rho*V == m).  The rotational drag row (roll/pitch/yaw)
    is applied as linear coefficients; quadratic rotational drag defaults to
    zero since no separate coefficients are identified for it.
    """
    J_rigid = np.diag([0.006664, 0.023, 0.004515])
    J_added = np.diag([0.001764, 0.023, 0.002415])
    return AuvBody(
        m=2.5625,
        M_added=np.diag([0.36, 1.00, 1.50]),
        J_total=J_rigid + J_added,
        D_v1=np.diag([0.048, 0.0, 0.044]),
        D_v2=np.diag([5.85, 11.98, 21.85]),
        D_w1=np.diag([0.0, 0.0, 21.85]),
        D_w2=np.diag([0.0, 0.0, 0.0]),
        rho=1025.0,
        V_displaced=0.0025,
        g=9.81,
    )


# ---------------------------------------------------------------------------
# Spacecraft attitude plant
# ---------------------------------------------------------------------------

def attitude_derivative(
    state: BodyState,
    tau: Vec3,
    body: SpacecraftBody,
    d_omega: Vec3 | None = None,
) -> np.ndarray:
    """Rigid-body attitude derivative in BodyState flat layout.

    q_dot = 0.5 * omega (x) q and
    omega_dot = J^-1 (tau - omega x J omega + d_omega).
    Translational entries are zero; the attitude problem carries no gravity.
    """
    q = state.q.to_array()
    w = state.omega
    J = body.J
    d = np.zeros(3) if d_omega is None else np.asarray(d_omega, dtype=float)
    q_dot = quat_kinematics_arr(q, w)
    w_dot = np.linalg.solve(J, np.asarray(tau, float) - np.cross(w, J @ w) + d)
    return np.concatenate([np.zeros(3), np.zeros(3), q_dot, w_dot])


def attitude_derivative_arr(
    q: np.ndarray,
    omega: np.ndarray,
    tau: np.ndarray,
    J_diag: np.ndarray,
    d_omega: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched attitude derivative for diagonal inertia, shapes (..., 4)/(..., 3)."""
    q_dot = quat_kinematics_arr(q, omega)
    Jw = J_diag * omega
    w_dot = (tau - np.cross(omega, Jw) + d_omega) / J_diag
    return q_dot, w_dot


# ---------------------------------------------------------------------------
# Relative-orbit plant
# ---------------------------------------------------------------------------

def gravity_accel(r: Vec3, mu: float) -> Vec3:
    """Point-mass gravitational acceleration -mu * r / |r|^3."""
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise ValueError("zero-radius position is singular")
    return -mu * np.asarray(r, float) / rn**3


def relative_orbit_derivative(
    pair: RelativePair,
    u_L: Vec3,
    u_F: Vec3,
    mu: float,
) -> tuple[Vec3, Vec3]:
    """Relative translational model used for follower control design.

    Returns (r_rel_dot, v_rel_dot) with

        v_rel_dot = -mu * (r_F/|r_F|^3 - r_L/|r_L|^3) - u_L + u_F

    The differential-gravity term equals the follower-minus-leader two-body
    acceleration difference; the follower thrust u_F enters with the opposite
    sign to the leader thrust u_L.  A zero-radius position raises ValueError.
    """
    r_L, r_F = pair.leader.r, pair.follower.r
    nL, nF = np.linalg.norm(r_L), np.linalg.norm(r_F)
    if nL == 0.0 or nF == 0.0:
        raise ValueError("zero-radius position is singular")
    diff_gravity = -mu * (r_F / nF**3 - r_L / nL**3)
    v_rel_dot = diff_gravity - np.asarray(u_L, float) + np.asarray(u_F, float)
    return np.array(pair.v_rel), v_rel_dot


# ---------------------------------------------------------------------------
# AUV hydrodynamics
# ---------------------------------------------------------------------------

def auv_drag_force(v_r: Vec3, body: AuvBody) -> Vec3:
    """Translational drag D1 v_r + D2 (|v_r| (.) v_r), per axis."""
    v = np.asarray(v_r, dtype=float)
    return np.diag(body.D_v1) * v + np.diag(body.D_v2) * (np.abs(v) * v)


def auv_drag_moment(omega: Vec3, body: AuvBody) -> Vec3:
    """Rotational drag D1 w + D2 (|w| (.) w), per axis."""
    w = np.asarray(omega, dtype=float)
    return np.diag(body.D_w1) * w + np.diag(body.D_w2) * (np.abs(w) * w)


def auv_derivative(
    state: BodyState,
    tau: Vec3,
    u: Vec3,
    body: AuvBody,
    v_current_world: Vec3 | None = None,
) -> np.ndarray:
    """AUV 6-DOF derivative in BodyState flat layout.

    State convention: r world, v body, q body-to-world, omega body.  u and
    tau are body-frame force/torque.  The water current (world frame) enters
    through the relative velocity v_r = v - R(q)^T v_c that drives drag and
    the Coriolis-style coupling.  Buoyancy and weight act along world z.
    """
    q = state.q.to_array()
    q_conj = np.concatenate([-q[:3], q[3:]])
    v, w = state.v, state.omega
    v_c = np.zeros(3) if v_current_world is None else np.asarray(v_current_world, float)

    v_r = v - quat_rotate_arr(q_conj, v_c)
    M_tot_diag = np.diag(body.M_total)
    J_diag = np.diag(body.J_total)

    f_env_world = np.array([0.0, 0.0, body.net_buoyant_force])
    f_env_body = quat_rotate_arr(q_conj, f_env_world)

    v_dot = (
        np.asarray(u, float)
        - auv_drag_force(v_r, body)
        - M_tot_diag * np.cross(w, v_r)
        + f_env_body
    ) / M_tot_diag
    w_dot = (
        np.asarray(tau, float) - np.cross(w, J_diag * w) - auv_drag_moment(w, body)
    ) / J_diag
    r_dot = quat_rotate_arr(q, v)
    q_dot = quat_kinematics_arr(q, w)
    return np.concatenate([r_dot, v_dot, q_dot, w_dot])


# ---------------------------------------------------------------------------
# Stochastic processes and sensing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussMarkovProcess:
    """First-order Gauss-Markov vector process with stationary std sigma.

    Stepping uses the exact discretization
    x+ = exp(-dt/tau) x + n,  n ~ N(0, sigma^2 (1 - exp(-2 dt/tau)))
    so the per-axis stationary standard deviation is exactly sigma.  Each
    instance owns its seeded generator; sequences are reproducible per seed
    and instances must not be shared across concurrent runs.
    """

    value: Vec3
    tau_corr: float
    sigma: Vec3
    seed: int
    _rng: np.random.Generator = field(compare=False, repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.tau_corr <= 0.0:
            raise ValueError("correlation time must be > 0")
        if np.any(np.asarray(self.sigma) < 0.0):
            raise ValueError("sigma must be >= 0")
        if self._rng is None:
            object.__setattr__(
                self, "_rng", np.random.Generator(np.random.Philox(self.seed))
            )

    @staticmethod
    def zero(tau_corr: float, sigma, seed: int) -> "GaussMarkovProcess":
        sig = np.asarray(sigma, dtype=float) * np.ones(3)
        return GaussMarkovProcess(np.zeros(3), tau_corr, sig, seed)


def gauss_markov_step(p: GaussMarkovProcess, dt: float) -> GaussMarkovProcess:
    """Advance the process by dt (exact exponential decay plus driving noise)."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    phi = np.exp(-dt / p.tau_corr)
    noise_std = np.asarray(p.sigma) * np.sqrt(max(0.0, 1.0 - phi * phi))
    noise = noise_std * p._rng.standard_normal(3)
    return replace(p, value=phi * np.asarray(p.value) + noise)


@dataclass(frozen=True)
class DisturbanceModel:
    """Torque bias, force noise, and per-channel sensor noise settings."""

    torque_bias: Vec3 = field(default_factory=lambda: np.zeros(3))
    force_noise_std: float = 0.0
    sensor_noise_std: dict = field(default_factory=dict)
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.force_noise_std < 0.0:
            raise ValueError("force_noise_std must be >= 0")
        if any(v < 0.0 for v in self.sensor_noise_std.values()):
            raise ValueError("sensor noise stds must be >= 0")


class MeasurementStream:
    """Additive-Gaussian sensing of body states, optional first-order low-pass.

    Stands in for a navigation filter: each channel of the measured record is
    truth plus zero-mean noise with the configured per-channel std
    (keys "r", "v", "q", "omega").  With a low-pass time constant T the
    filtered output follows y+ = a y + (1 - a) x with a = exp(-dt/T).
    Quaternion measurements are renormalized after noise injection.
    """

    def __init__(
        self,
        d: DisturbanceModel,
        seed: int,
        lowpass_tau: float = 0.0,
    ) -> None:
        self._d = d
        self._rng = np.random.Generator(np.random.Philox(seed))
        self._lp_tau = lowpass_tau
        self._lp_state: Optional[dict] = None

    def measure(self, state: BodyState, dt: float) -> BodyState:
        stds = self._d.sensor_noise_std if self._d.enabled else {}

        def noisy(x, key, size):
            s = stds.get(key, 0.0)
            if s == 0.0:
                return np.array(x, dtype=float)
            return np.asarray(x, float) + s * self._rng.standard_normal(size)

        raw = {
            "r": noisy(state.r, "r", 3),
            "v": noisy(state.v, "v", 3),
            "q": noisy(state.q.to_array(), "q", 4),
            "omega": noisy(state.omega, "omega", 3),
        }
        if self._lp_tau > 0.0:
            a = np.exp(-dt / self._lp_tau)
            if self._lp_state is None:
                self._lp_state = raw
            else:
                self._lp_state = {
                    k: a * self._lp_state[k] + (1.0 - a) * raw[k] for k in raw
                }
            raw = self._lp_state
        q = Quaternion.from_array(raw["q"]).normalized()
        return BodyState(r=raw["r"], v=raw["v"], q=q, omega=raw["omega"])
