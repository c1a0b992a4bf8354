"""Monte-Carlo scenario sampling, closed-loop cost evaluation, simulated
annealing, a multi-objective GA with a Pareto archive, percentile statistics,
and dataset export for the gain predictor.

The closed-loop evaluator has two entry points sharing one engine:
:func:`evaluate` runs a single (scenario, gains, T) rollout, and
:func:`rollout_batch` runs many lanes simultaneously as vectorized numpy.
Per-scenario disturbance streams are generated from each scenario's own seed
(counter-based generator), so a scenario's result is identical whether it is
evaluated alone, inside a batch, or split across workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .mathcore import (
    Quaternion,
    quat_error_arr,
    quat_kinematics_arr,
    quat_normalize_arr,
    sat,
)
from .controllers import LyapunovGains, PdGains, SmcAttitudeGains

log = logging.getLogger("formctl.tuner")

GainSet = Union[LyapunovGains, SmcAttitudeGains, PdGains]

# Decision-variable box for the transient tuning problem
GAIN_LO, GAIN_HI = 0.01, 3.0
T_LO, T_HI = 7.2, 72.0


# ---------------------------------------------------------------------------
# Scenario sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionConfig:
    """Sampling shapes for scenarios: uniform quaternion components, Gaussian
    rates, and the three-component weight draw (Gaussian, uniform, uniform).
    """

    q_lo: float = -1.0
    q_hi: float = 1.0
    omega0_mean: float = 0.0
    omega0_std: float = 0.02
    omegaf_mean: float = 0.0
    omegaf_std: float = 0.0
    w1_mean: float = 1.0
    w1_std: float = 0.1
    w2_lo: float = 50.0
    w2_hi: float = 200.0
    w3_lo: float = 0.0
    w3_hi: float = 0.002

    def __post_init__(self) -> None:
        if self.q_lo >= self.q_hi or self.w2_lo > self.w2_hi or self.w3_lo > self.w3_hi:
            raise ValueError("distribution bounds must be ordered")
        if min(self.omega0_std, self.omegaf_std, self.w1_std) < 0.0:
            raise ValueError("standard deviations must be >= 0")


@dataclass(frozen=True)
class ScenarioSample:
    """One tuning scenario: initial/target states, weights, and its seed."""

    q0: np.ndarray
    omega0: np.ndarray
    qf: np.ndarray
    omegaf: np.ndarray
    w: np.ndarray
    seed: int


def _sample_unit_quat(rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    while True:
        q = rng.uniform(lo, hi, size=4)
        n = np.linalg.norm(q)
        if n > 1e-8:
            return q / n


def sample_scenario(dists: DistributionConfig, rng: np.random.Generator) -> ScenarioSample:
    """Draw one scenario; quaternions are normalized after component sampling."""
    q0 = _sample_unit_quat(rng, dists.q_lo, dists.q_hi)
    qf = _sample_unit_quat(rng, dists.q_lo, dists.q_hi)
    omega0 = rng.normal(dists.omega0_mean, dists.omega0_std, size=3)
    omegaf = rng.normal(dists.omegaf_mean, dists.omegaf_std, size=3)
    w = np.array(
        [
            rng.normal(dists.w1_mean, dists.w1_std),
            rng.uniform(dists.w2_lo, dists.w2_hi),
            rng.uniform(dists.w3_lo, dists.w3_hi),
        ]
    )
    seed = int(rng.integers(0, 2**63 - 1))
    return ScenarioSample(q0=q0, omega0=omega0, qf=qf, omegaf=omegaf, w=w, seed=seed)


def featurize(
    q0: np.ndarray, omega0: np.ndarray, w: np.ndarray, qf: np.ndarray, omegaf: np.ndarray
) -> np.ndarray:
    """17-entry feature vector [q0, w0, w, qf, wf].

    Quaternions are canonicalized to a nonnegative scalar component so both
    covers of a rotation map to the same features.
    """
    q0 = np.asarray(q0, float).copy()
    qf = np.asarray(qf, float).copy()
    if q0[3] < 0:
        q0 = -q0
    if qf[3] < 0:
        qf = -qf
    return np.concatenate([q0, omega0, w, qf, omegaf])


FEATURE_NAMES = (
    ["q0_x", "q0_y", "q0_z", "q0_w"]
    + ["w0_x", "w0_y", "w0_z"]
    + ["wgt_E", "wgt_e", "wgt_T"]
    + ["qf_x", "qf_y", "qf_z", "qf_w"]
    + ["wf_x", "wf_y", "wf_z"]
)
TARGET_NAMES = ["E", "e", "k1", "k2", "T"]


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostVector:
    """Energy and terminal error of one closed-loop run.

    e is the quaternion-distance form used as the optimization cost; e_deg is
    the principal rotation angle in degrees used for reporting.  Diverged
    runs carry infinite cost.
    """

    E: float
    e: float
    e_deg: float
    diverged: bool = False

    def __post_init__(self) -> None:
        if not self.diverged and (self.E < 0.0 or self.e < 0.0):
            raise ValueError("costs must be nonnegative")


@dataclass(frozen=True)
class AttitudePlantConfig:
    """Closed-loop attitude plant used by the tuner.

    Torque bias is drawn once per scenario (uniform in +/- bound per axis);
    sensor noise enters the measurements each control step.
    """

    J_diag: Tuple[float, float, float] = (1.2, 1.3, 0.9)
    dt: float = 0.1
    torque_bias_bound: float = 1.0e-4
    q_noise_std: float = 1.0e-4
    omega_noise_std: float = 1.0e-5
    disturbances_on: bool = True


def _scenario_streams(
    scenarios: Sequence[ScenarioSample], n_steps: int, plant: AttitudePlantConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-scenario torque bias (B,3) and measurement-noise arrays
    (S,B,4)/(S,B,3).

    Each quantity comes from its own keyed stream so a scenario's disturbance
    realization is a fixed function of time: the same prefix is produced no
    matter how long the rollout is or which other lanes share the batch.
    """
    B = len(scenarios)
    bias = np.zeros((B, 3))
    nq = np.zeros((n_steps, B, 4))
    nw = np.zeros((n_steps, B, 3))
    if not plant.disturbances_on:
        return bias, nq, nw
    for i, sc in enumerate(scenarios):
        r_bias = np.random.Generator(np.random.Philox(key=[sc.seed, 0]))
        r_q = np.random.Generator(np.random.Philox(key=[sc.seed, 1]))
        r_w = np.random.Generator(np.random.Philox(key=[sc.seed, 2]))
        bias[i] = r_bias.uniform(-plant.torque_bias_bound, plant.torque_bias_bound, 3)
        nq[:, i, :] = plant.q_noise_std * r_q.standard_normal((n_steps, 4))
        nw[:, i, :] = plant.omega_noise_std * r_w.standard_normal((n_steps, 3))
    return bias, nq, nw


def _batch_torque(
    kind: str,
    gains: dict,
    dq: np.ndarray,
    omega_m: np.ndarray,
    J_diag: np.ndarray,
) -> np.ndarray:
    """Vectorized controller torque for a batch of lanes (regulation, wf=0)."""
    qv = dq[:, :3]
    q4 = dq[:, 3]
    sgn = np.where(q4 >= 0.0, 1.0, -1.0)[:, None]
    if kind == "lyapunov":
        k1 = gains["k1"][:, None]
        k2 = gains["k2"][:, None]
        qv2 = np.sum(qv * qv, axis=1, keepdims=True)
        return -k1 * sgn * qv - k2 * (1.0 - qv2) * omega_m
    if kind == "pd":
        P = gains["P"][:, None]
        D = gains["D"][:, None]
        return -P * sgn * qv - D * omega_m
    if kind == "smc_att":
        k = gains["k_smc"][:, None]
        Z = gains["Z"]
        eps = gains["eps"]
        s = omega_m + k * sgn * qv
        kin = 0.5 * k * (
            np.abs(q4)[:, None] * (-omega_m) + sgn * np.cross(qv, omega_m)
        )
        Jw = J_diag * omega_m
        return J_diag * (kin - Z * sat(s, eps)) + np.cross(omega_m, Jw)
    raise ValueError(f"unknown controller kind {kind!r}")


def rollout_batch(
    scenarios: Sequence[ScenarioSample],
    kind: str,
    gains: dict,
    T: np.ndarray,
    plant: AttitudePlantConfig,
    streams: Optional[tuple] = None,
    x0_override: Optional[tuple] = None,
) -> tuple[List[CostVector], np.ndarray, np.ndarray]:
    """Vectorized closed-loop rollouts, one lane per scenario.

    gains holds per-lane arrays keyed by the controller kind's parameters;
    T is per-lane duration (rounded to whole steps).  Returns the cost
    vectors plus terminal (q, omega) arrays for phase chaining.
    """
    B = len(scenarios)
    dt = plant.dt
    J_diag = np.asarray(plant.J_diag, float)
    T_steps = np.maximum(1, np.rint(np.asarray(T, float) / dt).astype(int))
    S = int(T_steps.max())
    if streams is None:
        streams = _scenario_streams(scenarios, S, plant)
    bias, nq, nw = streams

    if x0_override is not None:
        q = np.array(x0_override[0], float)
        w = np.array(x0_override[1], float)
    else:
        q = np.stack([sc.q0 for sc in scenarios]).astype(float)
        w = np.stack([sc.omega0 for sc in scenarios]).astype(float)
    qf = np.stack([sc.qf for sc in scenarios]).astype(float)

    E = np.zeros(B)
    diverged = np.zeros(B, dtype=bool)

    for step in range(S):
        active = (step < T_steps) & ~diverged
        if not active.any():
            break
        # zero-order-hold control computed from noisy measurements
        qm = quat_normalize_arr(q + nq[step])
        wm = w + nw[step]
        dq = quat_error_arr(qm, qf)
        tau = _batch_torque(kind, gains, dq, wm, J_diag)

        w_before = w
        # RK4 on [q, w] with tau held constant
        def deriv(qs, ws):
            q_dot = quat_kinematics_arr(qs, ws)
            w_dot = (tau - np.cross(ws, J_diag * ws) + bias) / J_diag
            return q_dot, w_dot

        k1q, k1w = deriv(q, w)
        k2q, k2w = deriv(q + 0.5 * dt * k1q, w + 0.5 * dt * k1w)
        k3q, k3w = deriv(q + 0.5 * dt * k2q, w + 0.5 * dt * k2w)
        k4q, k4w = deriv(q + dt * k3q, w + dt * k3w)
        q_new = quat_normalize_arr(q + (dt / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q))
        w_new = w + (dt / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)

        bad = ~(
            np.all(np.isfinite(q_new), axis=1) & np.all(np.isfinite(w_new), axis=1)
        )
        newly_bad = active & bad
        if newly_bad.any():
            diverged |= newly_bad
            q_new[newly_bad] = np.array([0.0, 0.0, 0.0, 1.0])
            w_new[newly_bad] = 0.0
        adv = (active & ~newly_bad)[:, None]
        q = np.where(adv, q_new, q)
        w = np.where(adv, w_new, w)

        # trapezoid on |tau . omega| across the held-torque interval
        p0 = np.abs(np.sum(tau * w_before, axis=1))
        p1 = np.abs(np.sum(tau * w, axis=1))
        E += np.where(active & ~newly_bad, 0.5 * (p0 + p1) * dt, 0.0)

    # terminal errors, double-cover safe
    d_minus = np.linalg.norm(q - qf, axis=1)
    d_plus = np.linalg.norm(q + qf, axis=1)
    e_norm = np.minimum(d_minus, d_plus)
    q4 = np.clip(np.abs(np.sum(q * qf, axis=1)), 0.0, 1.0)
    e_deg = np.degrees(2.0 * np.arccos(q4))

    costs = []
    for i in range(B):
        if diverged[i]:
            costs.append(CostVector(math.inf, math.inf, math.inf, diverged=True))
        else:
            costs.append(CostVector(float(E[i]), float(e_norm[i]), float(e_deg[i])))
    return costs, q, w


def _gain_arrays(kind: str, gains: GainSet, B: int = 1) -> dict:
    ones = np.ones(B)
    if kind == "lyapunov":
        assert isinstance(gains, LyapunovGains)
        return {"k1": gains.k1 * ones, "k2": gains.k2 * ones}
    if kind == "pd":
        assert isinstance(gains, PdGains)
        return {"P": gains.P * ones, "D": gains.D * ones}
    if kind == "smc_att":
        assert isinstance(gains, SmcAttitudeGains)
        return {
            "k_smc": gains.k_smc * ones,
            "Z": np.tile(gains.Z, (B, 1)),
            "eps": np.tile(gains.eps, (B, 1)),
        }
    raise ValueError(f"unknown controller kind {kind!r}")


def _kind_of(gains: GainSet) -> str:
    if isinstance(gains, LyapunovGains):
        return "lyapunov"
    if isinstance(gains, PdGains):
        return "pd"
    if isinstance(gains, SmcAttitudeGains):
        return "smc_att"
    raise TypeError(f"unsupported gain record {type(gains).__name__}")


def evaluate(
    scenario: ScenarioSample,
    gains: GainSet,
    T: float,
    plant: AttitudePlantConfig,
    x0_override: Optional[tuple] = None,
) -> CostVector:
    """Closed-loop cost of one scenario under one gain set over duration T.

    Deterministic given (scenario.seed, gains, T, plant.dt).  Divergence is
    reported as an infinite-cost sentinel, never an exception.
    """
    if T <= 0.0:
        raise ValueError("duration T must be > 0")
    cost, _, _ = evaluate_with_terminal(scenario, gains, T, plant, x0_override)
    return cost


def evaluate_with_terminal(
    scenario: ScenarioSample,
    gains: GainSet,
    T: float,
    plant: AttitudePlantConfig,
    x0_override: Optional[tuple] = None,
) -> tuple[CostVector, np.ndarray, np.ndarray]:
    """evaluate() plus the terminal (q, omega) for phase chaining."""
    kind = _kind_of(gains)
    over = None
    if x0_override is not None:
        over = (x0_override[0][None, :], x0_override[1][None, :])
    costs, qT, wT = rollout_batch(
        [scenario], kind, _gain_arrays(kind, gains, 1), np.array([T]), plant,
        x0_override=over,
    )
    return costs[0], qT[0], wT[0]


def scalarize(chi: CostVector, T: float, w: np.ndarray) -> float:
    """Weighted single cost w1*E + w2*e + w3*T."""
    w = np.asarray(w, float)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    return float(w[0] * chi.E + w[1] * chi.e + w[2] * T)


# ---------------------------------------------------------------------------
# Simulated annealing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SaConfig:
    initial_temp: float = 0.5
    cooling: float = 0.9965
    iterations: int = 2000
    step_scales: Tuple[float, ...] = (0.15, 0.15, 8.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.cooling < 1.0):
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class SaResult:
    best_x: np.ndarray
    best_cost: float
    history: np.ndarray  # best-so-far per iteration
    rejected_nonfinite: int = 0


def simulated_annealing(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[Tuple[float, float]],
    cfg: SaConfig,
    x0: Optional[np.ndarray] = None,
) -> SaResult:
    """Metropolis annealing with geometric cooling and box-clipped proposals.

    Non-finite objective values reject the candidate (and are counted); the
    best-so-far history is non-increasing by construction.  With zero
    iterations the initial point is returned.
    """
    lo = np.array([b[0] for b in bounds], float)
    hi = np.array([b[1] for b in bounds], float)
    if np.any(lo >= hi):
        raise ValueError("bounds must be ordered lo < hi")
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.asarray(x0, float), lo, hi)
    fx = float(objective(x))
    if not math.isfinite(fx):
        fx = math.inf
    best_x, best_f = x.copy(), fx
    scales = np.asarray(cfg.step_scales, float)
    temp = cfg.initial_temp
    history = np.empty(cfg.iterations)
    rejected = 0

    for it in range(cfg.iterations):
        frac = math.sqrt(temp / cfg.initial_temp)
        cand = np.clip(x + frac * scales * rng.standard_normal(len(x)), lo, hi)
        fc = float(objective(cand))
        if not math.isfinite(fc):
            rejected += 1
        else:
            delta = fc - fx
            if delta < 0.0 or rng.random() < math.exp(-delta / max(temp, 1e-300)):
                x, fx = cand, fc
                if fc < best_f:
                    best_x, best_f = cand.copy(), fc
        temp *= cfg.cooling
        history[it] = best_f
    if rejected:
        log.info("annealing rejected %d non-finite candidates", rejected)
    return SaResult(best_x=best_x, best_cost=best_f, history=history,
                    rejected_nonfinite=rejected)


def anneal_transient_batch(
    scenarios: Sequence[ScenarioSample],
    plant: AttitudePlantConfig,
    cfg: SaConfig,
    shared_proposals: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One annealing chain per scenario, all proposals evaluated as one batch.

    Decision vector per chain: (k1, k2, T) in the tuning box.  The merged
    loop is single-owner and order-preserving, so results are identical to
    running the chains one at a time.  Returns (best_x (B,3), best_cost (B,),
    history (iters,B)).

    With shared_proposals every chain sees the same proposal and acceptance
    random sequence (common random numbers): near-degenerate optima are then
    resolved the same way for similar scenarios, which makes the tuned gains
    a smooth function of the scenario instead of solver noise.  Chains remain
    coupled only through that shared stream, never through each other's
    state.
    """
    B = len(scenarios)
    lo = np.array([GAIN_LO, GAIN_LO, T_LO])
    hi = np.array([GAIN_HI, GAIN_HI, T_HI])
    scales = np.asarray(cfg.step_scales, float)
    if shared_proposals:
        shared_rng = np.random.Generator(np.random.Philox(cfg.seed))
        rngs = None
    else:
        rngs = [np.random.Generator(np.random.Philox(key=(cfg.seed, sc.seed)))
                for sc in scenarios]
    weights = np.stack([sc.w for sc in scenarios])

    max_steps = max(1, int(round(T_HI / plant.dt)))
    streams = _scenario_streams(scenarios, max_steps, plant)

    def batch_cost(X: np.ndarray) -> np.ndarray:
        gains = {"k1": X[:, 0], "k2": X[:, 1]}
        costs, _, _ = rollout_batch(
            scenarios, "lyapunov", gains, X[:, 2], plant, streams=streams
        )
        out = np.array(
            [
                w[0] * c.E + w[1] * c.e + w[2] * t if not c.diverged else math.inf
                for c, w, t in zip(costs, weights, X[:, 2])
            ]
        )
        return out

    # start mid-box in the gains and at the full duration: the slow-accurate
    # corner anneals toward cheaper solutions instead of out of bad ones
    x = np.tile(np.array([0.5 * (GAIN_LO + GAIN_HI)] * 2 + [T_HI]), (B, 1))
    fx = batch_cost(x)
    best_x, best_f = x.copy(), fx.copy()
    temp = cfg.initial_temp
    history = np.empty((cfg.iterations, B))

    for it in range(cfg.iterations):
        frac = math.sqrt(temp / cfg.initial_temp)
        if shared_proposals:
            noise = np.broadcast_to(shared_rng.standard_normal(3), (B, 3))
            u = np.full(B, shared_rng.random())
        else:
            noise = np.stack([r.standard_normal(3) for r in rngs])
            u = np.array([r.random() for r in rngs])
        cand = np.clip(x + frac * scales * noise, lo, hi)
        fc = batch_cost(cand)
        delta = fc - fx
        with np.errstate(over="ignore", invalid="ignore"):
            accept = np.isfinite(fc) & (
                (delta < 0.0) | (u < np.exp(-delta / max(temp, 1e-300)))
            )
        x = np.where(accept[:, None], cand, x)
        fx = np.where(accept, fc, fx)
        improved = fc < best_f
        best_x = np.where(improved[:, None], cand, best_x)
        best_f = np.where(improved, fc, best_f)
        temp *= cfg.cooling
        history[it] = best_f
    return best_x, best_f, history


# ---------------------------------------------------------------------------
# Multi-objective GA with Pareto archive
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MogaConfig:
    population: int = 64
    generations: int = 50
    crossover_prob: float = 0.9
    mutation_scale: float = 0.1  # fraction of each variable's range
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 4:
            raise ValueError("population must be >= 4")


@dataclass
class ParetoArchive:
    """Non-dominated (x, f) entries; dominance is <= on both objectives with
    < on at least one."""

    X: np.ndarray  # (n, dim)
    F: np.ndarray  # (n, 2)

    def check_non_dominated(self) -> bool:
        n = len(self.F)
        for i in range(n):
            for j in range(n):
                if i != j and _dominates(self.F[j], self.F[i]):
                    return False
        return True


def _dominates(fa: np.ndarray, fb: np.ndarray) -> bool:
    return bool(np.all(fa <= fb) and np.any(fa < fb))


def _non_dominated_sort(F: np.ndarray) -> List[np.ndarray]:
    n = len(F)
    dominated_by = [[] for _ in range(n)]
    dom_count = np.zeros(n, dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            if _dominates(F[i], F[j]):
                dominated_by[i].append(j)
                dom_count[j] += 1
            elif _dominates(F[j], F[i]):
                dominated_by[j].append(i)
                dom_count[i] += 1
    fronts = []
    current = np.where(dom_count == 0)[0]
    while len(current):
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        current = np.array(sorted(nxt), dtype=int)
    return fronts


def _crowding(F: np.ndarray, front: np.ndarray) -> np.ndarray:
    dist = np.zeros(len(front))
    for m in range(F.shape[1]):
        order = front[np.argsort(F[front, m], kind="stable")]
        fmin, fmax = F[order[0], m], F[order[-1], m]
        span = fmax - fmin
        pos = {idx: k for k, idx in enumerate(order)}
        for k, idx in enumerate(order):
            if k == 0 or k == len(order) - 1:
                dist[np.where(front == idx)[0][0]] = math.inf
            elif span > 0:
                gap = (F[order[k + 1], m] - F[order[k - 1], m]) / span
                dist[np.where(front == idx)[0][0]] += gap
    return dist


def moga(
    objective: Callable[[np.ndarray], np.ndarray],
    bounds: Sequence[Tuple[float, float]],
    cfg: MogaConfig,
) -> ParetoArchive:
    """Elitist non-dominated-sorting GA over a box; returns the final
    non-dominated archive.

    objective maps an (n, dim) array of candidates to an (n, 2) array of
    objectives to minimize.  Non-finite objective rows are treated as
    dominated by everything.
    """
    lo = np.array([b[0] for b in bounds], float)
    hi = np.array([b[1] for b in bounds], float)
    if np.any(lo >= hi):
        raise ValueError("bounds must be ordered lo < hi")
    dim = len(bounds)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    P = cfg.population

    X = lo + (hi - lo) * rng.random((P, dim))
    F = _eval_clean(objective, X)

    for _ in range(cfg.generations):
        fronts = _non_dominated_sort(F)
        rank = np.empty(P, dtype=int)
        crowd = np.empty(P)
        for r, fr in enumerate(fronts):
            rank[fr] = r
            crowd[fr] = _crowding(F, fr)

        def better(a: int, b: int) -> int:
            if rank[a] != rank[b]:
                return a if rank[a] < rank[b] else b
            return a if crowd[a] >= crowd[b] else b

        children = np.empty_like(X)
        for i in range(0, P, 2):
            pa = better(*rng.integers(0, P, 2))
            pb = better(*rng.integers(0, P, 2))
            c1, c2 = X[pa].copy(), X[pb].copy()
            if rng.random() < cfg.crossover_prob:
                alpha = rng.random(dim)
                c1 = alpha * X[pa] + (1 - alpha) * X[pb]
                c2 = alpha * X[pb] + (1 - alpha) * X[pa]
            mut = cfg.mutation_scale * (hi - lo)
            c1 += mut * rng.standard_normal(dim) * (rng.random(dim) < 0.3)
            c2 += mut * rng.standard_normal(dim) * (rng.random(dim) < 0.3)
            children[i] = np.clip(c1, lo, hi)
            children[i + 1 if i + 1 < P else i] = np.clip(c2, lo, hi)
        Fc = _eval_clean(objective, children)

        # elitist environmental selection on the merged population
        Xall = np.vstack([X, children])
        Fall = np.vstack([F, Fc])
        fronts = _non_dominated_sort(Fall)
        keep: List[int] = []
        for fr in fronts:
            if len(keep) + len(fr) <= P:
                keep.extend(fr.tolist())
            else:
                cd = _crowding(Fall, fr)
                order = fr[np.argsort(-cd, kind="stable")]
                keep.extend(order[: P - len(keep)].tolist())
                break
        X, F = Xall[keep], Fall[keep]

    finite = np.all(np.isfinite(F), axis=1)
    Xf, Ff = X[finite], F[finite]
    front = _non_dominated_sort(Ff)[0] if len(Ff) else np.array([], dtype=int)
    # drop duplicate objective rows so the archive invariant is strict
    seen = {}
    for idx in front:
        seen.setdefault(tuple(np.round(Ff[idx], 12)), idx)
    sel = sorted(seen.values())
    return ParetoArchive(X=Xf[sel], F=Ff[sel])


def _eval_clean(objective, X: np.ndarray) -> np.ndarray:
    F = np.asarray(objective(X), float)
    F[~np.all(np.isfinite(F), axis=1)] = np.inf
    return F


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatsSummary:
    mean: float
    mode: float
    variance: float
    p_low: float
    p_high: float
    max: float


def percentile_stats(samples: Sequence[float], p: float, bins: int = 50) -> StatsSummary:
    """Moments, histogram mode, nearest-rank percentiles P_(100-p)/P_p, max."""
    x = np.asarray(samples, float)
    if x.size == 0:
        raise ValueError("percentile_stats requires a non-empty sample")
    if x.min() == x.max():
        mode = float(x[0])
    else:
        counts, edges = np.histogram(x, bins=bins)
        k = int(np.argmax(counts))
        mode = float(0.5 * (edges[k] + edges[k + 1]))
    return StatsSummary(
        mean=float(x.mean()),
        mode=mode,
        variance=float(x.var()),
        p_low=_nearest_rank(x, 100.0 - p),
        p_high=_nearest_rank(x, p),
        max=float(x.max()),
    )


def _nearest_rank(x: np.ndarray, p: float) -> float:
    s = np.sort(x)
    rank = max(1, math.ceil(p / 100.0 * len(s)))
    return float(s[rank - 1])


# ---------------------------------------------------------------------------
# Dataset export
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Train/held-out feature and target matrices with the normalization
    statistics computed from the training split only."""

    X_train: np.ndarray
    Y_train: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    feat_mean: np.ndarray
    feat_std: np.ndarray
    targ_mean: np.ndarray
    targ_std: np.ndarray
    seed: int
    feature_names: List[str] = field(default_factory=lambda: list(FEATURE_NAMES))
    target_names: List[str] = field(default_factory=lambda: list(TARGET_NAMES))


def _safe_std(x: np.ndarray) -> np.ndarray:
    s = x.std(axis=0)
    s[s == 0.0] = 1.0
    return s


def export_dataset(
    rows: Sequence[Tuple[np.ndarray, np.ndarray]],
    split_ratio: float,
    seed: int,
) -> Dataset:
    """Deterministic shuffled split plus training-split normalization stats."""
    if len(rows) < 2:
        raise ValueError("need at least 2 rows to split")
    if not (0.0 < split_ratio < 1.0):
        raise ValueError("split ratio must lie in (0, 1)")
    X = np.stack([r[0] for r in rows]).astype(float)
    Y = np.stack([r[1] for r in rows]).astype(float)
    rng = np.random.Generator(np.random.Philox(seed))
    perm = rng.permutation(len(rows))
    n_train = max(1, min(len(rows) - 1, int(round(split_ratio * len(rows)))))
    tr, te = perm[:n_train], perm[n_train:]
    Xtr, Ytr = X[tr], Y[tr]
    return Dataset(
        X_train=Xtr,
        Y_train=Ytr,
        X_test=X[te],
        Y_test=Y[te],
        feat_mean=Xtr.mean(axis=0),
        feat_std=_safe_std(Xtr),
        targ_mean=Ytr.mean(axis=0),
        targ_std=_safe_std(Ytr),
        seed=seed,
    )


def dataset_to_csv(ds: Dataset, split: str) -> str:
    """Render one split as CSV text with a schema header line."""
    X, Y = (ds.X_train, ds.Y_train) if split == "train" else (ds.X_test, ds.Y_test)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ds.feature_names + ds.target_names)
    for xi, yi in zip(X, Y):
        writer.writerow([f"{v:.17g}" for v in np.concatenate([xi, yi])])
    return buf.getvalue()
