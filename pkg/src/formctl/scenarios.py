"""End-to-end experiments: science-phase attitude comparison, relative-position
formation, the transient Monte-Carlo campaign, the AUV leader/follower run,
and the supervised full-mission replay.

Every experiment returns :class:`RunReport` objects whose summary metrics are
recomputed from the stored series by :func:`compute_metrics`; paired
comparisons always share the scenario and seed.  Default scenario parameters
live in :mod:`formctl.config` and are versioned there; absolute energies and
errors are scenario-dependent, so acceptance checks assert orderings and
bands rather than point values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .mathcore import (
    Quaternion,
    quat_error_arr,
    quat_kinematics_arr,
    quat_normalize_arr,
    quat_rotate_arr,
    sat,
)
from .dynamics import (
    AuvBody,
    BodyState,
    GaussMarkovProcess,
    gauss_markov_step,
    table_auv_body,
)
from .controllers import (
    AuvSmcGains,
    FormationOffset,
    LyapunovGains,
    PdGains,
    SmcAttitudeGains,
    SmcRelPosGains,
    follower_reference,
    lyapunov_value,
    table_auv_gains,
)
from .supervisor import (
    MissionCatalog,
    MissionHooks,
    SupervisorTrace,
    mission_automaton,
    run_mission,
)
from .tuner import (
    AttitudePlantConfig,
    CostVector,
    Dataset,
    DistributionConfig,
    SaConfig,
    ScenarioSample,
    StatsSummary,
    anneal_transient_batch,
    export_dataset,
    featurize,
    percentile_stats,
    rollout_batch,
    sample_scenario,
)
from .surrogate import MlpModel, predict_plan


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    """Stored time series plus summary metrics derived from them."""

    name: str
    t: np.ndarray
    series: Dict[str, np.ndarray]
    metrics: Dict[str, float]
    meta: dict = field(default_factory=dict)

    def recompute_metrics(self) -> Dict[str, float]:
        return compute_metrics(self.t, self.series)


def compute_metrics(t: np.ndarray, series: Dict[str, np.ndarray]) -> Dict[str, float]:
    """Summary metrics as a pure function of the stored series.

    Recognized series: "power" (|tau.omega|, W), "error" (norm), "control"
    (n x m control components, optionally at its own rate given by a
    one-element "control_dt" series), "V" (monitor values), "quat_norm".
    """
    out: Dict[str, float] = {}
    n = len(t)
    tail = slice(max(0, int(math.ceil(0.9 * n))), n)
    if "power" in series:
        out["E"] = float(np.trapezoid(series["power"], t))
    if "error" in series:
        err = series["error"]
        out["e_final"] = float(err[-1])
        out["steady_state_error"] = float(np.mean(err[tail]))
        # settling: last time the error exceeds 5% of its initial value
        thresh = 0.05 * err[0] if err[0] > 0 else 0.0
        above = np.nonzero(err > thresh)[0]
        out["settling_time"] = float(t[above[-1]] if len(above) else t[0])
    if "control" in series:
        u = np.atleast_2d(series["control"].T).T
        flips = 0
        for j in range(u.shape[1]):
            sgn = np.sign(u[:, j])
            sgn = sgn[sgn != 0]
            flips += int(np.sum(sgn[1:] != sgn[:-1]))
        if "control_dt" in series:
            duration = (len(u) - 1) * float(series["control_dt"][0])
        else:
            duration = float(t[-1] - t[0]) if n > 1 else 1.0
        out["sign_flip_rate"] = flips / u.shape[1] / max(duration, 1e-12)
    if "V" in series:
        out["V_final"] = float(series["V"][-1])
        out["V_max_increase"] = float(np.max(np.diff(series["V"]), initial=-np.inf))
    if "quat_norm" in series:
        out["quat_norm_max_drift"] = float(np.max(np.abs(series["quat_norm"] - 1.0)))
    return out


def _finalize(name, t, series, meta) -> RunReport:
    t = np.asarray(t, float)
    series = {k: np.asarray(v) for k, v in series.items()}
    return RunReport(
        name=name, t=t, series=series, metrics=compute_metrics(t, series), meta=meta
    )


# ---------------------------------------------------------------------------
# Attitude closed-loop stepper (shared by science comparison and mission)
# ---------------------------------------------------------------------------

class AttitudeLoop:
    """Incremental attitude closed loop with seeded disturbance streams.

    Torque commands are zero-order-hold over each step; measurement noise is
    drawn per step from streams keyed by the seed, so runs are reproducible
    and two controllers fed the same seed see identical disturbances.
    """

    def __init__(
        self,
        q0: np.ndarray,
        omega0: np.ndarray,
        plant: AttitudePlantConfig,
        seed: int,
    ) -> None:
        self.q = np.asarray(q0, float).copy()
        self.w = np.asarray(omega0, float).copy()
        self.J_diag = np.asarray(plant.J_diag, float)
        self.plant = plant
        if plant.disturbances_on:
            r_bias = np.random.Generator(np.random.Philox(key=[seed, 0]))
            self.bias = r_bias.uniform(
                -plant.torque_bias_bound, plant.torque_bias_bound, 3
            )
        else:
            self.bias = np.zeros(3)
        self._r_q = np.random.Generator(np.random.Philox(key=[seed, 1]))
        self._r_w = np.random.Generator(np.random.Philox(key=[seed, 2]))

    def measure(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.plant.disturbances_on:
            return self.q.copy(), self.w.copy()
        qm = self.q + self.plant.q_noise_std * self._r_q.standard_normal(4)
        wm = self.w + self.plant.omega_noise_std * self._r_w.standard_normal(3)
        return quat_normalize_arr(qm), wm

    def step(self, tau: np.ndarray) -> tuple[float, float]:
        """Advance one dt with held torque; returns interval power endpoints."""
        dt = self.plant.dt
        J = self.J_diag
        bias = self.bias
        w_before = self.w.copy()

        def deriv(q, w):
            return quat_kinematics_arr(q, w), (tau - np.cross(w, J * w) + bias) / J

        q, w = self.q, self.w
        k1q, k1w = deriv(q, w)
        k2q, k2w = deriv(q + 0.5 * dt * k1q, w + 0.5 * dt * k1w)
        k3q, k3w = deriv(q + 0.5 * dt * k2q, w + 0.5 * dt * k2w)
        k4q, k4w = deriv(q + dt * k3q, w + dt * k3w)
        self.q = quat_normalize_arr(q + (dt / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q))
        self.w = w + (dt / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
        return float(abs(tau @ w_before)), float(abs(tau @ self.w))


def _attitude_error_deg(q: np.ndarray, qf: np.ndarray) -> float:
    c = min(1.0, abs(float(np.dot(q, qf))))
    return math.degrees(2.0 * math.acos(c))


def _quat_norm_dist(q: np.ndarray, qf: np.ndarray) -> float:
    return float(
        min(np.linalg.norm(q - qf), np.linalg.norm(q + qf))
    )


def _sgn(x: float) -> float:
    return 1.0 if x >= 0.0 else -1.0


def _attitude_controller(kind: str, gains, qf: np.ndarray, J_diag: np.ndarray):
    """Torque callback (q_meas, w_meas) -> tau for the recording loop."""

    def lyap(qm, wm):
        dq = quat_error_arr(qm, qf)
        qv, q4 = dq[:3], dq[3]
        return -gains.k1 * _sgn(q4) * qv - gains.k2 * (1.0 - qv @ qv) * wm

    def pd(qm, wm):
        dq = quat_error_arr(qm, qf)
        return -gains.P * _sgn(dq[3]) * dq[:3] - gains.D * wm

    def smc(qm, wm):
        dq = quat_error_arr(qm, qf)
        qv, q4 = dq[:3], dq[3]
        sg = _sgn(q4)
        s = wm + gains.k_smc * sg * qv
        kin = 0.5 * gains.k_smc * (abs(q4) * (-wm) + sg * np.cross(qv, wm))
        return J_diag * (kin - gains.Z * sat(s, gains.eps)) + np.cross(
            wm, J_diag * wm
        )

    return {"lyapunov": lyap, "pd": pd, "smc_att": smc}[kind]


def simulate_attitude(
    name: str,
    q0: np.ndarray,
    omega0: np.ndarray,
    qf: np.ndarray,
    kind: str,
    gains,
    duration: float,
    plant: AttitudePlantConfig,
    seed: int,
    extra_series: Optional[Callable[[np.ndarray, np.ndarray], dict]] = None,
) -> RunReport:
    """Record one attitude regulation run under the selected controller."""
    loop = AttitudeLoop(q0, omega0, plant, seed)
    control_fn = _attitude_controller(kind, gains, np.asarray(qf, float), loop.J_diag)
    n = max(1, int(round(duration / plant.dt)))
    t = np.arange(n + 1) * plant.dt
    err = np.empty(n + 1)
    power = np.empty(n + 1)
    controls = np.empty((n + 1, 3))
    qnorm = np.empty(n + 1)
    extras: Dict[str, list] = {}

    for i in range(n + 1):
        qm, wm = loop.measure()
        tau = control_fn(qm, wm)
        err[i] = _attitude_error_deg(loop.q, qf)
        controls[i] = tau
        qnorm[i] = np.linalg.norm(loop.q)
        power[i] = abs(tau @ loop.w)
        if extra_series is not None:
            for k, v in extra_series(loop.q, loop.w).items():
                extras.setdefault(k, []).append(v)
        if i < n:
            loop.step(tau)
    series = {
        "error": err,
        "power": power,
        "control": controls,
        "quat_norm": qnorm,
    }
    for k, v in extras.items():
        series[k] = np.asarray(v)
    meta = {
        "kind": kind,
        "seed": seed,
        "duration": duration,
        "dt": plant.dt,
        "e_final_norm": _quat_norm_dist(loop.q, np.asarray(qf, float)),
    }
    return _finalize(name, t, series, meta)


# ---------------------------------------------------------------------------
# Science-phase attitude comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScienceScenarioConfig:
    """Versioned default science-phase regulation scenario.

    A 30-degree re-pointing under torque bias and sensor noise: large enough
    to exercise the baseline's underdamped transient, small enough to stay a
    science-phase maneuver.  Absolute (e, E) values are scenario-dependent;
    comparisons assert orderings only.
    """

    initial_error_deg: float = 30.0
    error_axis: Tuple[float, float, float] = (0.6, 0.48, 0.64)
    duration: float = 120.0
    dt: float = 0.02
    torque_bias_bound: float = 5.0e-4
    q_noise_std: float = 2.0e-4
    omega_noise_std: float = 5.0e-5
    disturbances_on: bool = True


def run_science_attitude_comparison(
    gains_smc: SmcAttitudeGains,
    gains_pd: PdGains,
    seed: int,
    cfg: Optional[ScienceScenarioConfig] = None,
) -> Dict[str, RunReport]:
    """Same seeded scenario under the science SMC and the PD baseline."""
    cfg = cfg or ScienceScenarioConfig()
    axis = np.asarray(cfg.error_axis, float)
    q0 = Quaternion.from_axis_angle(axis, math.radians(cfg.initial_error_deg))
    qf = np.array([0.0, 0.0, 0.0, 1.0])
    plant = AttitudePlantConfig(
        dt=cfg.dt,
        torque_bias_bound=cfg.torque_bias_bound,
        q_noise_std=cfg.q_noise_std,
        omega_noise_std=cfg.omega_noise_std,
        disturbances_on=cfg.disturbances_on,
    )
    reports = {}
    for kind, gains in (("smc_att", gains_smc), ("pd", gains_pd)):
        reports[kind] = simulate_attitude(
            name=f"science_{kind}",
            q0=q0.to_array(),
            omega0=np.zeros(3),
            qf=qf,
            kind=kind,
            gains=gains,
            duration=cfg.duration,
            plant=plant,
            seed=seed,
        )
    return reports


# ---------------------------------------------------------------------------
# Relative-position formation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelPosScenarioConfig:
    """Leader on natural drift; follower regulates the relative state.

    Units are SI; positions print in km in the emitted series.  The
    disturbance is an acceleration bias plus white noise on the relative
    dynamics, and the sensing stand-in adds noise to the relative state.
    """

    mu: float = 3.986004418e14
    r_leader0: Tuple[float, float, float] = (7.0e6, 0.0, 0.0)
    r_rel0_km: Tuple[float, float, float] = (1.0, 2.0, 10.0)
    v_rel0: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    r_rel_target_km: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    duration: float = 9000.0
    dt: float = 0.02
    accel_bias: Tuple[float, float, float] = (0.12, -0.08, -0.15)
    accel_noise_std: float = 0.02
    meas_r_std: float = 5.0e-4
    meas_v_std: float = 1.0e-4
    smc_k: float = 1.0
    smc_Z: float = 1.0
    smc_eps: float = 1.0e-9  # effectively the discontinuous reaching law
    pd_P: float = 1.0
    pd_D: float = 1.0
    store_stride: int = 50
    disturbances_on: bool = True


def run_relpos_formation(
    controller: str,
    seed: int,
    cfg: Optional[RelPosScenarioConfig] = None,
) -> RunReport:
    """Leader/follower relative-position run under "smc" or "pd" control."""
    if controller not in ("smc", "pd"):
        raise ValueError("controller must be 'smc' or 'pd'")
    cfg = cfg or RelPosScenarioConfig()
    mu = cfg.mu
    r_L = np.array(cfg.r_leader0, float)
    v_circ = math.sqrt(mu / np.linalg.norm(r_L))
    v_L = np.array([0.0, v_circ, 0.0])
    rho = np.array(cfg.r_rel0_km, float) * 1e3
    v_rel = np.array(cfg.v_rel0, float)
    rho_f = np.array(cfg.r_rel_target_km, float) * 1e3
    v_rel_f = np.zeros(3)

    bias = np.array(cfg.accel_bias, float) if cfg.disturbances_on else np.zeros(3)
    r_noise = np.random.Generator(np.random.Philox(key=[seed, 0]))
    r_meas = np.random.Generator(np.random.Philox(key=[seed, 1]))

    smc = SmcRelPosGains(k=cfg.smc_k, Z=cfg.smc_Z, eps=cfg.smc_eps)
    pd = PdGains(cfg.pd_P, cfg.pd_D)

    dt = cfg.dt
    n = int(round(cfg.duration / dt))
    stride = max(1, cfg.store_stride)
    n_keep = n // stride + 1
    t_keep = np.empty(n_keep)
    err_keep = np.empty(n_keep)
    s_keep = np.empty((n_keep, 3))
    u_keep = np.empty((n_keep, 3))
    rho_keep = np.empty((n_keep, 3))
    kept = 0

    # flat state x = [r_L, v_L, rho, v_rel] and chunked noise draws keep the
    # half-million-step loop fast
    x = np.concatenate([r_L, v_L, rho, v_rel])
    k_s = cfg.smc_k
    Z_arr, eps_arr = smc.Z, smc.eps
    CHUNK = 20000
    meas_chunk = accel_chunk = None
    chunk_at = CHUNK

    def deriv(x, u_d):
        rL = x[0:3]
        rh = x[6:9]
        rF = rL - rh
        nL = math.sqrt(rL @ rL)
        nF = math.sqrt(rF @ rF)
        out = np.empty(12)
        out[0:3] = x[3:6]
        out[3:6] = (-mu / nL**3) * rL
        out[6:9] = x[9:12]
        out[9:12] = -mu * (rF / nF**3 - rL / nL**3) + u_d
        return out

    for i in range(n + 1):
        if cfg.disturbances_on:
            if chunk_at >= CHUNK:
                meas_chunk = r_meas.standard_normal((CHUNK, 6))
                accel_chunk = r_noise.standard_normal((CHUNK, 3))
                chunk_at = 0
            mrow = meas_chunk[chunk_at]
            rho_m = x[6:9] + cfg.meas_r_std * mrow[:3]
            v_m = x[9:12] + cfg.meas_v_std * mrow[3:]
        else:
            rho_m, v_m = x[6:9], x[9:12]
        r_L_now = x[0:3]
        r_F = r_L_now - x[6:9]  # pair convention: rho = r_L - r_F
        s = (v_m - v_rel_f) + k_s * (rho_m - rho_f)
        if controller == "smc":
            nL = math.sqrt(r_L_now @ r_L_now)
            nF = math.sqrt(r_F @ r_F)
            u_F = (
                mu * (r_F / nF**3 - r_L_now / nL**3)
                - k_s * (v_m - v_rel_f)
                - Z_arr * np.clip(s / eps_arr, -1.0, 1.0)
            )
        else:
            u_F = -pd.P * (rho_m - rho_f) - pd.D * (v_m - v_rel_f)

        if i % stride == 0 and kept < n_keep:
            t_keep[kept] = i * dt
            err_keep[kept] = np.linalg.norm(x[6:9] - rho_f)
            s_keep[kept] = s
            u_keep[kept] = u_F
            rho_keep[kept] = x[6:9]
            kept += 1
        if i == n:
            break

        if cfg.disturbances_on:
            u_d = u_F + bias + cfg.accel_noise_std * accel_chunk[chunk_at]
            chunk_at += 1
        else:
            u_d = u_F

        k1 = deriv(x, u_d)
        k2 = deriv(x + (0.5 * dt) * k1, u_d)
        k3 = deriv(x + (0.5 * dt) * k2, u_d)
        k4 = deriv(x + dt * k3, u_d)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    rho, v_rel = x[6:9], x[9:12]

    series = {
        "error": err_keep[:kept],
        "sliding": s_keep[:kept],
        "control": u_keep[:kept],
        "r_rel_km": rho_keep[:kept] / 1e3,
    }
    meta = {
        "controller": controller,
        "seed": seed,
        "dt": dt,
        "stride": stride,
        "steady_state_error_km": float(
            np.mean(err_keep[max(0, int(math.ceil(0.9 * kept))) : kept]) / 1e3
        ),
    }
    return _finalize(f"relpos_{controller}", t_keep[:kept], series, meta)


# ---------------------------------------------------------------------------
# Transient Monte-Carlo campaign
# ---------------------------------------------------------------------------

@dataclass
class CampaignResult:
    stats: Dict[str, StatsSummary]
    dataset: Dataset
    scenarios: List[ScenarioSample]
    best_x: np.ndarray
    costs: List[CostVector]
    omega_f: np.ndarray
    excluded: int


def _anneal_chunk(args) -> np.ndarray:
    scenarios, plant, sa = args
    best_x, _, _ = anneal_transient_batch(scenarios, plant, sa)
    return best_x


def run_transient_campaign(
    n_scenarios: int,
    sa: SaConfig,
    seed: int,
    dists: Optional[DistributionConfig] = None,
    plant: Optional[AttitudePlantConfig] = None,
    split_ratio: float = 0.8,
    jobs: int = 1,
) -> CampaignResult:
    """Per-scenario annealing of (k1, k2, T), percentile statistics, and
    dataset export for the gain predictor.

    Annealing chains are independent and keyed by each scenario's seed, so
    splitting them across worker processes (jobs > 1) merges to exactly the
    serial result.  Diverged scenarios are excluded from statistics and
    dataset, with the count reported.
    """
    if n_scenarios < 2:
        raise ValueError("need at least 2 scenarios")
    dists = dists or DistributionConfig(w2_lo=300.0, w2_hi=1000.0)
    plant = plant or AttitudePlantConfig()
    rng = np.random.Generator(np.random.Philox(seed))
    scenarios = [sample_scenario(dists, rng) for _ in range(n_scenarios)]

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [scenarios[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(
                pool.map(_anneal_chunk, [(c, plant, sa) for c in chunks if c])
            )
        best_x = np.empty((n_scenarios, 3))
        for j, part in enumerate(parts):
            best_x[j :: jobs] = part  # ordered merge back to scenario index
    else:
        best_x, _, _ = anneal_transient_batch(scenarios, plant, sa)
    costs, qT, wT = rollout_batch(
        scenarios,
        "lyapunov",
        {"k1": best_x[:, 0], "k2": best_x[:, 1]},
        best_x[:, 2],
        plant,
    )
    ok = np.array([not c.diverged for c in costs])
    excluded = int((~ok).sum())

    E = np.array([c.E for c in costs])[ok]
    e_deg = np.array([c.e_deg for c in costs])[ok]
    e_norm = np.array([c.e for c in costs])[ok]
    wf = wT[ok]
    stats = {
        "E": percentile_stats(E, 99.0),
        "e_deg": percentile_stats(e_deg, 99.0),
        "k1": percentile_stats(best_x[ok, 0], 99.0),
        "k2": percentile_stats(best_x[ok, 1], 99.0),
        "T": percentile_stats(best_x[ok, 2], 99.0),
        "wf_x_degps": percentile_stats(np.degrees(wf[:, 0]), 99.0),
        "wf_y_degps": percentile_stats(np.degrees(wf[:, 1]), 99.0),
        "wf_z_degps": percentile_stats(np.degrees(wf[:, 2]), 99.0),
    }
    rows = []
    for i, sc in enumerate(scenarios):
        if not ok[i]:
            continue
        x = featurize(sc.q0, sc.omega0, sc.w, sc.qf, sc.omegaf)
        y = np.array(
            [costs[i].E, costs[i].e, best_x[i, 0], best_x[i, 1], best_x[i, 2]]
        )
        rows.append((x, y))
    dataset = export_dataset(rows, split_ratio, seed)
    return CampaignResult(
        stats=stats,
        dataset=dataset,
        scenarios=scenarios,
        best_x=best_x,
        costs=costs,
        omega_f=wT,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# AUV leader-follower formation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuvScenarioConfig:
    """Leader/follower regulation under a Gauss-Markov current.

    Measurement noise levels are filter-grade (the sensing stand-in models a
    navigation solution, not raw sensors).
    """

    r_leader_target: Tuple[float, float, float] = (1.0, 2.0, 3.0)
    offset: Tuple[float, float, float] = (3.0, -1.0, 1.0)
    duration: float = 24.0
    dt: float = 6.0e-4
    current_mean: Tuple[float, float, float] = (0.12, -0.10, 0.08)
    current_tau: float = 30.0
    current_sigma: float = 0.02
    meas_r_std: float = 2.0e-4
    meas_v_std: float = 1.0e-4
    meas_q_std: float = 1.0e-4
    meas_w_std: float = 2.0e-4
    store_stride: int = 40
    disturbances_on: bool = True


def auv_lane_controls(
    measured: dict,
    v_c: np.ndarray,
    r_d: np.ndarray,
    v_d: np.ndarray,
    body: AuvBody,
    g: dict,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized SMC controls over vehicle lanes; desired attitude identity.

    g holds per-lane gain arrays (Lambda_w, K_w, B_w, eps_w, Lambda_v, K_v,
    B_v, eps_v).  The math is identical to
    controllers.auv_rotational_torque / auv_translational_force; the
    equivalence is pinned by a unit test.
    """
    q, v, w, r = measured["q"], measured["v"], measured["omega"], measured["r"]
    q_conj = np.concatenate([-q[:, :3], q[:, 3:]], axis=1)
    Jd = np.diag(body.J_total)
    M = np.diag(body.M_total)
    Dv1, Dv2 = np.diag(body.D_v1), np.diag(body.D_v2)
    Dw1, Dw2 = np.diag(body.D_w1), np.diag(body.D_w2)

    # rotational: error quaternion against identity is the attitude itself
    sgn = np.where(q[:, 3] >= 0.0, 1.0, -1.0)[:, None]
    s_w = w + g["Lambda_w"] * sgn * q[:, :3]
    tau = (
        np.cross(w, Jd * w)
        + Dw1 * w + Dw2 * (np.abs(w) * w)
        - g["K_w"] * s_w
        - g["B_w"] * sat(s_w, g["eps_w"])
    )

    v_r = v - quat_rotate_arr(q_conj, v_c)
    e_r = quat_rotate_arr(q_conj, r - r_d)
    e_v = v - quat_rotate_arr(q_conj, v_d)
    s_v = e_v + g["Lambda_v"] * e_r
    u = (
        Dv1 * v_r + Dv2 * (np.abs(v_r) * v_r)
        + M * np.cross(w, v_r)
        - g["K_v"] * s_v
        - g["B_v"] * sat(s_v, g["eps_v"])
    )
    if body.net_buoyant_force != 0.0:
        f_env = np.array([0.0, 0.0, body.net_buoyant_force])
        u = u + quat_rotate_arr(q_conj, np.broadcast_to(f_env, v.shape))
    return u, tau


def _lane_gain_arrays(gain_sets: Sequence[AuvSmcGains]) -> dict:
    """Per-lane (2 lanes per pair: leader then follower) gain arrays."""
    rows = []
    for gs in gain_sets:
        rows.extend([gs, gs])
    return {
        name: np.stack([getattr(gs, name) for gs in rows])
        for name in ("Lambda_w", "K_w", "B_w", "eps_w", "Lambda_v", "K_v", "B_v", "eps_v")
    }


def _run_auv_lanes(
    seed: int,
    cfg: AuvScenarioConfig,
    body: AuvBody,
    gain_sets: Sequence[AuvSmcGains],
    variant_names: Sequence[str],
) -> Dict[str, Dict[str, RunReport]]:
    """Simulate one leader/follower pair per gain set, all lanes jointly.

    Lane layout: [leader_0, follower_0, leader_1, follower_1, ...].  Every
    pair sees the same current and the same per-vehicle measurement noise, so
    variants differ only in their gains.  The chattering metric uses the
    commanded force channels: at attitude hold no disturbance torques act, so
    torque signs are numerically degenerate for every law.
    """
    dt = cfg.dt
    n = int(round(cfg.duration / dt))
    n_pairs = len(gain_sets)
    L = 2 * n_pairs
    offset = np.asarray(cfg.offset, float)
    r_target = np.asarray(cfg.r_leader_target, float)
    g = _lane_gain_arrays(gain_sets)

    # mean flow plus zero-mean Gauss-Markov turbulence
    sigma = cfg.current_sigma if cfg.disturbances_on else 0.0
    mean = np.asarray(cfg.current_mean, float) if cfg.disturbances_on else np.zeros(3)
    current = GaussMarkovProcess.zero(cfg.current_tau, sigma, seed + 2)
    v_c_seq = np.empty((n + 1, 3))
    for i in range(n + 1):
        v_c_seq[i] = mean + current.value
        current = gauss_markov_step(current, dt)

    r = np.zeros((L, 3))
    v = np.zeros((L, 3))
    q = np.tile(np.array([0.0, 0.0, 0.0, 1.0]), (L, 1))
    w = np.zeros((L, 3))

    Jd = np.diag(body.J_total)
    M = np.diag(body.M_total)
    Dv1, Dv2 = np.diag(body.D_v1), np.diag(body.D_v2)
    Dw1, Dw2 = np.diag(body.D_w1), np.diag(body.D_w2)
    neutral = body.net_buoyant_force == 0.0
    f_env = np.array([0.0, 0.0, body.net_buoyant_force])
    conj_mask = np.array([-1.0, -1.0, -1.0, 1.0])

    # per-vehicle noise streams shared across variants (leader: seed, ...)
    rng_meas = [
        np.random.Generator(np.random.Philox(key=[seed + lane % 2, 7]))
        for lane in range(2)
    ]
    CHUNK = 10000
    chunk_at = CHUNK
    noise = None

    leader_rows = np.arange(0, L, 2)
    follower_rows = np.arange(1, L, 2)
    stride = max(1, cfg.store_stride)
    n_keep = n // stride + 1
    t_keep = np.empty(n_keep)
    err_keep = np.empty((n_keep, L))
    qnorm = np.empty((n_keep, L))
    pos = np.empty((n_keep, L, 3))
    ref = np.empty((n_keep, L, 3))
    kept = 0
    u_full = np.empty((n + 1, L, 3))  # force channels at full rate

    for i in range(n + 1):
        v_c = v_c_seq[i]
        if cfg.disturbances_on:
            if chunk_at >= CHUNK:
                noise = [gen.standard_normal((CHUNK, 13)) for gen in rng_meas]
                chunk_at = 0
            rows = np.stack([noise[lane % 2][chunk_at] for lane in range(L)])
            chunk_at += 1
            r_m = r + cfg.meas_r_std * rows[:, 0:3]
            v_m = v + cfg.meas_v_std * rows[:, 3:6]
            q_m = quat_normalize_arr(q + cfg.meas_q_std * rows[:, 6:10])
            w_m = w + cfg.meas_w_std * rows[:, 10:13]
        else:
            r_m, v_m, q_m, w_m = r, v, q, w

        # follower references from their own leader's measured state
        v_L_world = quat_rotate_arr(q_m[leader_rows], v_m[leader_rows])
        r_d = np.empty((L, 3))
        v_d = np.empty((L, 3))
        r_d[leader_rows] = r_target
        v_d[leader_rows] = 0.0
        r_d[follower_rows] = r_m[leader_rows] + offset
        v_d[follower_rows] = v_L_world

        u, tau = auv_lane_controls(
            {"q": q_m, "v": v_m, "omega": w_m, "r": r_m}, v_c, r_d, v_d, body, g
        )
        u_full[i] = u

        if i % stride == 0 and kept < n_keep:
            t_keep[kept] = i * dt
            err_keep[kept, leader_rows] = np.linalg.norm(
                r[leader_rows] - r_target, axis=1
            )
            err_keep[kept, follower_rows] = np.linalg.norm(
                r[follower_rows] - (r[leader_rows] + offset), axis=1
            )
            qnorm[kept] = np.linalg.norm(q, axis=1)
            pos[kept] = r
            ref[kept, leader_rows] = r_target
            ref[kept, follower_rows] = r[leader_rows] + offset
            kept += 1
        if i == n:
            break

        def deriv(r_, v_, q_, w_):
            q_conj = q_ * conj_mask
            v_r = v_ - quat_rotate_arr(q_conj, v_c)
            drag = Dv1 * v_r + Dv2 * (np.abs(v_r) * v_r)
            v_dot = (u - drag - M * np.cross(w_, v_r)) / M
            if not neutral:
                v_dot = v_dot + quat_rotate_arr(
                    q_conj, np.broadcast_to(f_env, v_.shape)
                ) / M
            mom = Dw1 * w_ + Dw2 * (np.abs(w_) * w_)
            w_dot = (tau - np.cross(w_, Jd * w_) - mom) / Jd
            return quat_rotate_arr(q_, v_), v_dot, quat_kinematics_arr(q_, w_), w_dot

        k1 = deriv(r, v, q, w)
        k2 = deriv(*(x + 0.5 * dt * k for x, k in zip((r, v, q, w), k1)))
        k3 = deriv(*(x + 0.5 * dt * k for x, k in zip((r, v, q, w), k2)))
        k4 = deriv(*(x + dt * k for x, k in zip((r, v, q, w), k3)))
        r, v, q, w = (
            x + (dt / 6.0) * (a + 2 * b + 2 * c + e)
            for x, a, b, c, e in zip((r, v, q, w), k1, k2, k3, k4)
        )
        q = quat_normalize_arr(q)

    out: Dict[str, Dict[str, RunReport]] = {}
    for p, variant in enumerate(variant_names):
        out[variant] = {}
        for role, lane in (("leader", 2 * p), ("follower", 2 * p + 1)):
            series = {
                "error": err_keep[:kept, lane],
                "control": u_full[:, lane, :],
                "control_dt": np.array([dt]),
                "quat_norm": qnorm[:kept, lane],
                "position": pos[:kept, lane, :],
                "reference": ref[:kept, lane, :],
            }
            meta = {
                "seed": seed,
                "dt": dt,
                "stride": stride,
                "variant": variant,
                "final10_mean_error_m": float(
                    np.mean(err_keep[max(0, int(math.ceil(0.9 * kept))) : kept, lane])
                ),
            }
            name = f"auv_{role}" if variant == "boundary_layer" else f"auv_{role}_{variant}"
            out[variant][role] = _finalize(name, t_keep[:kept], series, meta)
    return out


def _sign_law_gains(gains: AuvSmcGains) -> AuvSmcGains:
    return AuvSmcGains(
        Lambda_w=gains.Lambda_w, K_w=gains.K_w, B_w=gains.B_w, eps_w=1e-9,
        Lambda_v=gains.Lambda_v, K_v=gains.K_v, B_v=gains.B_v, eps_v=1e-9,
    )


def run_auv_formation(
    seed: int,
    cfg: Optional[AuvScenarioConfig] = None,
    gains: Optional[AuvSmcGains] = None,
    body: Optional[AuvBody] = None,
    use_sign_law: bool = False,
) -> Dict[str, RunReport]:
    """Leader waypoint hold plus follower offset hold under a Gauss-Markov
    current; returns leader and follower reports.

    With use_sign_law the boundary layers shrink to a tiny width, turning the
    reaching terms into sign laws (the chattering comparison variant).
    """
    cfg = cfg or AuvScenarioConfig()
    body = body or table_auv_body()
    gains = gains or table_auv_gains()
    variant = "sign_law" if use_sign_law else "boundary_layer"
    if use_sign_law:
        gains = _sign_law_gains(gains)
    res = _run_auv_lanes(seed, cfg, body, [gains], [variant])
    return res[variant]


def run_auv_chattering_comparison(
    seed: int,
    cfg: Optional[AuvScenarioConfig] = None,
    gains: Optional[AuvSmcGains] = None,
    body: Optional[AuvBody] = None,
) -> Dict[str, Dict[str, RunReport]]:
    """Boundary-layer and sign-law variants on the same seeded scenario,
    simulated jointly so both see identical currents and noise."""
    cfg = cfg or AuvScenarioConfig()
    body = body or table_auv_body()
    gains = gains or table_auv_gains()
    return _run_auv_lanes(
        seed, cfg, body,
        [gains, _sign_law_gains(gains)],
        ["boundary_layer", "sign_law"],
    )


# ---------------------------------------------------------------------------
# Supervised mission replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MissionScenarioConfig:
    time_scale: float = 1.0e-5
    dt: float = 0.02
    torque_bias_bound: float = 1.0e-4
    q_noise_std: float = 1.0e-4
    omega_noise_std: float = 1.0e-5
    science_gains: Tuple[float, float, float] = (2.9947, 0.0193, 0.2601)
    weights: Tuple[float, float, float] = (1.0, 400.0, 0.001)
    u1: float = 1.0
    u4: float = 0.5


class _MissionLoopHooks(MissionHooks):
    """Closed-loop attitude sim bound to the supervisor phases.

    Transient phases run the large-angle law with predictor-supplied gains
    toward the next target attitude; science phases run the science SMC on
    the same target.  Predicted and realized (E, e) are logged per phase for
    the audit record.
    """

    def __init__(
        self,
        model: MlpModel,
        catalog: MissionCatalog,
        cfg: MissionScenarioConfig,
        seed: int,
    ) -> None:
        self.model = model
        self.cfg = cfg
        plant = AttitudePlantConfig(
            dt=cfg.dt,
            torque_bias_bound=cfg.torque_bias_bound,
            q_noise_std=cfg.q_noise_std,
            omega_noise_std=cfg.omega_noise_std,
        )
        self.loop = AttitudeLoop(
            np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3), plant, seed
        )
        rng = np.random.Generator(np.random.Philox(key=[seed, 10]))
        self.targets = {}
        for sid in catalog.science_ids:
            q = rng.standard_normal(4)
            self.targets[sid] = q / np.linalg.norm(q)
        self.q_target = np.array([0.0, 0.0, 0.0, 1.0])
        self.gains = LyapunovGains(0.5, 0.5)
        self.smc = SmcAttitudeGains(
            cfg.science_gains[0], cfg.science_gains[1], cfg.science_gains[2]
        )
        self.audit: List[dict] = []
        self._phase_E = 0.0
        self._phase = "commissioning"
        self._prediction: Optional[dict] = None

    def _controller(self, phase: str):
        if phase == "transient":
            return _attitude_controller(
                "lyapunov", self.gains, self.q_target, self.loop.J_diag
            )
        if phase == "science":
            return _attitude_controller(
                "smc_att", self.smc, self.q_target, self.loop.J_diag
            )
        return None

    def transient_plan(self, ctx: dict) -> Optional[float]:
        obj = ctx.get("object")
        if obj is not None and obj.id in self.targets:
            self.q_target = self.targets[obj.id]
        plan = predict_plan(
            self.model,
            self.loop.q,
            self.loop.w,
            np.asarray(self.cfg.weights),
            self.q_target,
        )
        self.gains = plan.gains
        self._prediction = {
            "object": None if obj is None else obj.name,
            "predicted_E": plan.predicted_E,
            "predicted_e": plan.predicted_e,
            "clamped": plan.clamped,
            "T": plan.T,
        }
        return plan.T

    def on_enter(self, state: str, ctx: dict) -> None:
        if self._phase in ("transient", "science"):
            realized = {
                "phase": self._phase,
                "realized_E": self._phase_E,
                "realized_e": _quat_norm_dist(self.loop.q, self.q_target),
                "realized_e_deg": _attitude_error_deg(self.loop.q, self.q_target),
            }
            if self._prediction is not None:
                realized.update(self._prediction)
            self.audit.append(realized)
        self._phase = state
        self._phase_E = 0.0

    def on_step(self, state: str, dt: float, ctx: dict) -> None:
        control = self._controller(state)
        tau = (
            control(*self.loop.measure()) if control is not None else np.zeros(3)
        )
        p0, p1 = self.loop.step(tau)
        self._phase_E += 0.5 * (p0 + p1) * dt


def run_supervised_mission(
    model: MlpModel,
    catalog: Optional[MissionCatalog] = None,
    seed: int = 0,
    cfg: Optional[MissionScenarioConfig] = None,
) -> Tuple[SupervisorTrace, List[dict]]:
    """Full catalog replay with predictor-supplied transient plans.

    Requires a trained model; returns the supervisor trace and the per-phase
    audit rows (predicted vs realized energy and error).
    """
    if not getattr(model, "trained", False):
        raise RuntimeError("run_supervised_mission requires a trained model")
    cfg = cfg or MissionScenarioConfig()
    from .supervisor import default_mission_catalog

    catalog = catalog or default_mission_catalog(cfg.time_scale)
    ta = mission_automaton(catalog.time_scale)
    hooks = _MissionLoopHooks(model, catalog, cfg, seed)
    trace = run_mission(
        ta,
        catalog,
        T=36.0,
        hooks=hooks,
        dt=cfg.dt,
        u1=cfg.u1,
        u4=cfg.u4,
    )
    return trace, hooks.audit
