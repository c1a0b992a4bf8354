import math

import numpy as np
import pytest

from formctl.mathcore import IntegratorConfig, Quaternion, rk4_step
from formctl.dynamics import (
    AuvBody,
    BodyState,
    DisturbanceModel,
    GaussMarkovProcess,
    MeasurementStream,
    RelativePair,
    SpacecraftBody,
    attitude_derivative,
    auv_derivative,
    auv_drag_force,
    auv_drag_moment,
    gauss_markov_step,
    gravity_accel,
    relative_orbit_derivative,
    table_auv_body,
)

J_TABLE = np.diag([1.2, 1.3, 0.9])


def body():
    return SpacecraftBody(J_nominal=J_TABLE)


# ---------------------------------------------------------------------------
# attitude plant
# ---------------------------------------------------------------------------

def test_attitude_equilibrium():
    st = BodyState.at_rest()
    dx = attitude_derivative(st, np.zeros(3), body(), np.zeros(3))
    assert np.allclose(dx, 0.0)


def test_attitude_diagonal_inertia_inversion():
    st = BodyState.at_rest()
    dx = attitude_derivative(st, np.array([1.2, 0.0, 0.0]), body())
    assert np.allclose(dx[10:13], [1.0, 0.0, 0.0], atol=1e-14)


def test_attitude_axis_aligned_spin_no_gyroscopic():
    # omega an eigenvector of diagonal J: omega x J omega = 0
    st = BodyState(
        r=np.zeros(3), v=np.zeros(3), q=Quaternion.identity(),
        omega=np.array([1.0, 0.0, 0.0]),
    )
    tau = np.array([0.3, 0.0, 0.0])
    d = np.array([0.1, 0.0, 0.0])
    dx = attitude_derivative(st, tau, body(), d)
    assert np.allclose(dx[10:13], (tau + d) / np.diag(J_TABLE), atol=1e-14)


def test_attitude_energy_conservation_free_tumble():
    # torque-free rigid body conserves (1/2) w' J w over 1e4 steps
    sc = body()
    st = BodyState(
        r=np.zeros(3), v=np.zeros(3), q=Quaternion.identity(),
        omega=np.array([0.3, -0.5, 0.8]),
    )
    x = st.to_array()
    cfg = IntegratorConfig(dt=1e-3, quat_offsets=(6,))

    def deriv(t, x):
        return attitude_derivative(BodyState.from_array(x), np.zeros(3), sc)

    E0 = 0.5 * st.omega @ J_TABLE @ st.omega
    for i in range(10_000):
        x = rk4_step(deriv, x, i * 1e-3, cfg)
    w = x[10:13]
    E1 = 0.5 * w @ J_TABLE @ w
    assert abs(E1 - E0) / E0 < 1e-6


def test_spacecraft_body_rejects_non_spd():
    with pytest.raises(ValueError):
        SpacecraftBody(J_nominal=np.diag([1.0, -0.1, 0.5]))
    with pytest.raises(ValueError):
        SpacecraftBody(J_nominal=np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))


# ---------------------------------------------------------------------------
# relative orbit
# ---------------------------------------------------------------------------

def _pair(r_L, r_F):
    mk = lambda r: BodyState(
        r=np.asarray(r, float), v=np.zeros(3), q=Quaternion.identity(),
        omega=np.zeros(3),
    )
    return RelativePair(leader=mk(r_L), follower=mk(r_F))


def test_relative_orbit_coincident_positions_cancel():
    pair = _pair([7e6, 0, 0], [7e6, 0, 0])
    _, dv = relative_orbit_derivative(pair, np.zeros(3), np.zeros(3), 3.986e14)
    assert np.allclose(dv, 0.0, atol=1e-18)


def test_relative_orbit_differential_gravity_oracle():
    # brute force: subtract the two absolute two-body accelerations
    mu = 3.986e14
    r_F = np.array([7e6, 0.0, 0.0])
    r_L = np.array([7e6, 0.0, 1e3])
    pair = _pair(r_L, r_F)
    _, dv = relative_orbit_derivative(pair, np.zeros(3), np.zeros(3), mu)
    oracle = gravity_accel(r_F, mu) - gravity_accel(r_L, mu)
    assert np.allclose(dv, oracle, rtol=1e-12)


def test_relative_orbit_thrust_signs():
    # follower thrust enters opposite to leader thrust
    pair = _pair([7e6, 0, 0], [7e6, 0, 0])
    u = np.array([1e-3, 0, 0])
    _, dv_L = relative_orbit_derivative(pair, u, np.zeros(3), 3.986e14)
    _, dv_F = relative_orbit_derivative(pair, np.zeros(3), u, 3.986e14)
    assert np.allclose(dv_L, -u)
    assert np.allclose(dv_F, u)


def test_relative_orbit_natural_drift_leader():
    pair = _pair([7.1e6, 0, 0], [7e6, 0, 0])
    dr, _ = relative_orbit_derivative(pair, np.zeros(3), np.zeros(3), 3.986e14)
    assert np.allclose(dr, pair.v_rel)


def test_relative_orbit_zero_radius_raises():
    pair = _pair([0, 0, 0], [7e6, 0, 0])
    with pytest.raises(ValueError):
        relative_orbit_derivative(pair, np.zeros(3), np.zeros(3), 3.986e14)


def test_relative_pair_consistency():
    pair = _pair([7e6, 10.0, 0], [7e6, 0, -5.0])
    assert np.allclose(pair.r_rel, [0.0, 10.0, 5.0])


# ---------------------------------------------------------------------------
# AUV hydrodynamics
# ---------------------------------------------------------------------------

def test_auv_drag_zero_velocity():
    assert np.allclose(auv_drag_force(np.zeros(3), table_auv_body()), 0.0)


def test_auv_drag_force_hand_value():
    # x axis: linear 0.048 + quadratic 5.85 at 1 m/s -> 5.898 N
    f = auv_drag_force(np.array([1.0, 0, 0]), table_auv_body())
    assert f[0] == pytest.approx(5.898, abs=1e-12)
    assert np.allclose(f[1:], 0.0)


def test_auv_drag_force_odd_symmetry():
    f = auv_drag_force(np.array([-1.0, 0, 0]), table_auv_body())
    assert f[0] == pytest.approx(-5.898, abs=1e-12)


def test_auv_drag_moment_yaw_row():
    m = auv_drag_moment(np.array([0.0, 0.0, 1.0]), table_auv_body())
    # linear yaw coefficient addressed; default quadratic rotational is zero
    assert m[2] == pytest.approx(21.85, abs=1e-12)
    b = table_auv_body()
    b2 = AuvBody(
        m=b.m, M_added=b.M_added, J_total=b.J_total, D_v1=b.D_v1, D_v2=b.D_v2,
        D_w1=b.D_w1, D_w2=np.diag([0.0, 0.0, 2.0]), rho=b.rho,
        V_displaced=b.V_displaced,
    )
    m2 = auv_drag_moment(np.array([0.0, 0.0, 1.0]), b2)
    assert m2[2] == pytest.approx(21.85 + 2.0, abs=1e-12)


def test_auv_neutral_buoyancy_rest_equilibrium():
    b = table_auv_body()
    assert b.rho * b.V_displaced == pytest.approx(b.m, abs=1e-12)
    st = BodyState.at_rest()
    dx = auv_derivative(st, np.zeros(3), np.zeros(3), b, None)
    assert np.allclose(dx, 0.0, atol=1e-15)


def test_auv_zero_relative_velocity_no_drag():
    b = table_auv_body()
    v_c = np.array([0.2, -0.1, 0.05])
    st = BodyState(
        r=np.zeros(3), v=v_c.copy(), q=Quaternion.identity(), omega=np.zeros(3)
    )
    dx = auv_derivative(st, np.zeros(3), np.zeros(3), b, v_c)
    assert np.allclose(dx[3:6], 0.0, atol=1e-15)  # no force -> no acceleration


def test_auv_body_validation():
    b = table_auv_body()
    with pytest.raises(ValueError):
        AuvBody(
            m=-1.0, M_added=b.M_added, J_total=b.J_total, D_v1=b.D_v1,
            D_v2=b.D_v2, D_w1=b.D_w1, D_w2=b.D_w2,
        )
    with pytest.raises(ValueError):
        AuvBody(
            m=1.0, M_added=b.M_added, J_total=b.J_total,
            D_v1=np.diag([-0.1, 0, 0]), D_v2=b.D_v2, D_w1=b.D_w1, D_w2=b.D_w2,
        )


# ---------------------------------------------------------------------------
# Gauss-Markov current
# ---------------------------------------------------------------------------

def test_gauss_markov_zero_sigma_stays_zero():
    p = GaussMarkovProcess.zero(30.0, 0.0, seed=1)
    for _ in range(10):
        p = gauss_markov_step(p, 0.5)
    assert np.allclose(p.value, 0.0)


def test_gauss_markov_pure_decay():
    v0 = np.array([1.0, -2.0, 0.5])
    p = GaussMarkovProcess(value=v0, tau_corr=10.0, sigma=np.zeros(3), seed=2)
    p = gauss_markov_step(p, 3.0)
    assert np.allclose(p.value, v0 * math.exp(-0.3), rtol=1e-12)


def test_gauss_markov_stationary_std():
    p = GaussMarkovProcess.zero(5.0, 0.4, seed=3)
    vals = np.empty((100_000, 3))
    for i in range(len(vals)):
        p = gauss_markov_step(p, 1.0)
        vals[i] = p.value
    assert np.allclose(vals.std(axis=0), 0.4, rtol=0.05)


def test_gauss_markov_seed_reproducible():
    def run(seed):
        p = GaussMarkovProcess.zero(7.0, 0.1, seed)
        out = []
        for _ in range(50):
            p = gauss_markov_step(p, 0.3)
            out.append(p.value.copy())
        return np.array(out)

    assert np.array_equal(run(42), run(42))
    assert not np.array_equal(run(42), run(43))


def test_gauss_markov_validation():
    with pytest.raises(ValueError):
        GaussMarkovProcess.zero(-1.0, 0.1, 0)
    p = GaussMarkovProcess.zero(1.0, 0.1, 0)
    with pytest.raises(ValueError):
        gauss_markov_step(p, 0.0)


# ---------------------------------------------------------------------------
# measurement stream
# ---------------------------------------------------------------------------

def test_measure_noiseless_is_truth():
    st = BodyState(
        r=np.array([1.0, 2, 3]), v=np.array([0.1, 0, 0]),
        q=Quaternion.from_axis_angle([0, 0, 1], 0.3), omega=np.array([0, 0.2, 0]),
    )
    m = MeasurementStream(DisturbanceModel(), seed=0).measure(st, 0.1)
    assert np.allclose(m.r, st.r)
    assert np.allclose(m.q.to_array(), st.q.to_array())


def test_measure_noise_std():
    d = DisturbanceModel(sensor_noise_std={"r": 0.5})
    ms = MeasurementStream(d, seed=7)
    st = BodyState.at_rest()
    samples = np.array([ms.measure(st, 0.1).r for _ in range(100_000)])
    assert np.allclose(samples.std(axis=0), 0.5, rtol=0.03)


def test_measure_lowpass_step_response():
    # 63.2% rise after one time constant
    d = DisturbanceModel()
    tau_lp = 2.0
    dt = 0.001
    ms = MeasurementStream(d, seed=0, lowpass_tau=tau_lp)
    zero = BodyState.at_rest()
    one = BodyState(
        r=np.array([1.0, 1, 1]), v=np.zeros(3), q=Quaternion.identity(),
        omega=np.zeros(3),
    )
    ms.measure(zero, dt)  # initializes the filter state at zero
    n = int(round(tau_lp / dt))
    for _ in range(n):
        m = ms.measure(one, dt)
    assert np.allclose(m.r, 1.0 - math.exp(-1.0), rtol=0.02)


def test_disturbance_model_validation():
    with pytest.raises(ValueError):
        DisturbanceModel(force_noise_std=-1.0)
    with pytest.raises(ValueError):
        DisturbanceModel(sensor_noise_std={"r": -0.1})
