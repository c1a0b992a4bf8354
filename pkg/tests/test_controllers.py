import math

import numpy as np
import pytest

from formctl.mathcore import (
    Quaternion,
    quat_error,
    quat_kinematics_arr,
    quat_normalize_arr,
    sat,
)
from formctl.dynamics import BodyState, RelativePair, table_auv_body
from formctl.controllers import (
    AuvSmcGains,
    FormationOffset,
    LyapunovGains,
    PdGains,
    SmcAttitudeGains,
    SmcRelPosGains,
    auv_rotational_surface,
    auv_rotational_torque,
    auv_translational_force,
    follower_reference,
    lyapunov_attitude_torque,
    lyapunov_value,
    pd_attitude_torque,
    pd_relpos_force,
    smc_attitude_surface,
    smc_attitude_torque,
    smc_relpos_force,
    smc_relpos_surface,
    table_auv_gains,
)

J_TABLE = np.diag([1.2, 1.3, 0.9])


def _rand_unit_quat(rng):
    q = rng.standard_normal(4)
    return Quaternion.from_array(q / np.linalg.norm(q))


def _simulate_attitude_loop(q0, w0, qf, torque_fn, T, dt, d_omega=None):
    """Plain closed-loop integrator used as the oracle bench for the laws."""
    q = q0.to_array()
    w = np.asarray(w0, float).copy()
    d = np.zeros(3) if d_omega is None else np.asarray(d_omega, float)
    Jd = np.diag(J_TABLE)
    hist = []
    for i in range(int(round(T / dt))):
        dq = quat_error(Quaternion.from_array(q), qf)
        tau = torque_fn(dq, w)
        hist.append((q.copy(), w.copy(), np.asarray(tau, float)))

        def deriv(qs, ws):
            return quat_kinematics_arr(qs, ws), (tau - np.cross(ws, Jd * ws) + d) / Jd

        k1q, k1w = deriv(q, w)
        k2q, k2w = deriv(q + 0.5 * dt * k1q, w + 0.5 * dt * k1w)
        k3q, k3w = deriv(q + 0.5 * dt * k2q, w + 0.5 * dt * k2w)
        k4q, k4w = deriv(q + dt * k3q, w + dt * k3w)
        q = quat_normalize_arr(q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q))
        w = w + dt / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return q, w, hist


# ---------------------------------------------------------------------------
# Lyapunov attitude law
# ---------------------------------------------------------------------------

def test_lyapunov_torque_converged_case():
    g = LyapunovGains(0.5, 0.5)
    tau = lyapunov_attitude_torque(Quaternion.identity(), np.zeros(3), g)
    assert np.allclose(tau, 0.0)


def test_lyapunov_torque_hand_value():
    g = LyapunovGains(0.1342, 0.5)
    dq = Quaternion(0.1, 0.0, 0.0, math.sqrt(1 - 0.01))
    tau = lyapunov_attitude_torque(dq, np.zeros(3), g)
    assert np.allclose(tau, [-0.01342, 0.0, 0.0], atol=1e-12)


def test_lyapunov_torque_double_cover():
    rng = np.random.default_rng(0)
    g = LyapunovGains(0.7, 1.3)
    for _ in range(20):
        dq = _rand_unit_quat(rng)
        w = rng.standard_normal(3)
        t1 = lyapunov_attitude_torque(dq, w, g)
        t2 = lyapunov_attitude_torque(-dq, w, g)
        assert np.allclose(t1, t2, atol=1e-12)


def test_lyapunov_gains_positive():
    with pytest.raises(ValueError):
        LyapunovGains(0.0, 1.0)
    with pytest.raises(ValueError):
        LyapunovGains(1.0, -0.1)


def test_lyapunov_value_equilibrium_and_positivity():
    g = LyapunovGains(0.5, 0.8)
    assert lyapunov_value(Quaternion.identity(), np.zeros(3), J_TABLE, g) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(200):
        dq = _rand_unit_quat(rng)
        w = rng.standard_normal(3)
        assert lyapunov_value(dq, w, J_TABLE, g) >= 0.0


def test_lyapunov_value_pure_spin():
    g = LyapunovGains(0.5, 0.8)
    v = lyapunov_value(Quaternion.identity(), np.array([1.0, 0, 0]), J_TABLE, g)
    assert v == pytest.approx(0.3, abs=1e-15)


def test_lyapunov_closed_loop_converges():
    rng = np.random.default_rng(2)
    g = LyapunovGains(1.0, 1.0)
    q0, qf = _rand_unit_quat(rng), _rand_unit_quat(rng)
    qT, wT, _ = _simulate_attitude_loop(
        q0, np.zeros(3),
        qf,
        lambda dq, w: lyapunov_attitude_torque(dq, w, g),
        T=60.0, dt=0.01,
    )
    assert abs(abs(qT @ qf.to_array()) - 1.0) < 1e-6
    assert np.linalg.norm(wT) < 1e-4


def test_lyapunov_monitor_decrease_equal_gains():
    """On the equal-gain slice the candidate function decreases along every
    closed-loop trajectory (positive-hemisphere error covers).

    With unequal gains the candidate carries an indefinite cross term; see
    test_lyapunov_monitor_not_monotone_off_slice.
    """
    rng = np.random.default_rng(3)
    worst = -np.inf
    for i in range(20):
        k = float(rng.uniform(0.05, 3.0))
        g = LyapunovGains(k, k)
        q0, qf = _rand_unit_quat(rng), _rand_unit_quat(rng)
        if quat_error(q0, qf).w < 0:
            qf = -qf
        w0 = 0.05 * rng.standard_normal(3) if i % 2 else np.zeros(3)
        Vs = []

        def torque(dq, w):
            Vs.append(lyapunov_value(dq, w, J_TABLE, g))
            return lyapunov_attitude_torque(dq, w, g)

        _simulate_attitude_loop(q0, w0, qf, torque, T=20.0, dt=0.005)
        worst = max(worst, float(np.max(np.diff(Vs))))
    assert worst <= 1e-9


def test_lyapunov_monitor_not_monotone_off_slice():
    # documents the boundary of validity: k1 >> k2 yields transient increases
    g = LyapunovGains(3.0, 0.05)
    rng = np.random.default_rng(4)
    q0, qf = _rand_unit_quat(rng), _rand_unit_quat(rng)
    if quat_error(q0, qf).w < 0:
        qf = -qf
    Vs = []

    def torque(dq, w):
        Vs.append(lyapunov_value(dq, w, J_TABLE, g))
        return lyapunov_attitude_torque(dq, w, g)

    _simulate_attitude_loop(q0, np.zeros(3), qf, torque, T=10.0, dt=0.005)
    assert np.max(np.diff(Vs)) > 1e-6


# ---------------------------------------------------------------------------
# SMC attitude law
# ---------------------------------------------------------------------------

def test_smc_surface_on_surface():
    s = smc_attitude_surface(Quaternion.identity(), np.zeros(3), np.zeros(3), 2.0)
    assert np.allclose(s, 0.0)


def test_smc_surface_hand_value():
    dq = Quaternion(0.1, 0.0, 0.0, math.sqrt(1 - 0.01))
    s = smc_attitude_surface(dq, np.zeros(3), np.zeros(3), 2.9947)
    assert np.allclose(s, [0.29947, 0.0, 0.0], atol=1e-12)


def test_smc_surface_double_cover():
    rng = np.random.default_rng(5)
    dq = _rand_unit_quat(rng)
    w, wf = rng.standard_normal(3), rng.standard_normal(3)
    s1 = smc_attitude_surface(dq, w, wf, 1.7)
    s2 = smc_attitude_surface(-dq, w, wf, 1.7)
    assert np.allclose(s1, s2, atol=1e-12)


def test_smc_torque_equilibrium():
    g = SmcAttitudeGains(2.0, 0.4, 0.05)
    tau = smc_attitude_torque(
        Quaternion.identity(), np.zeros(3), np.zeros(3), np.zeros(3), J_TABLE, g
    )
    assert np.allclose(tau, 0.0)


def test_smc_torque_continuous_across_layer():
    g = SmcAttitudeGains(1.5, 0.4, 0.1)
    wf = np.zeros(3)
    dq = Quaternion.identity()
    # sweep omega_x so s_x crosses the layer edge; torque must be continuous
    taus = []
    for wx in np.linspace(0.099, 0.101, 41):
        taus.append(
            smc_attitude_torque(dq, np.array([wx, 0, 0]), wf, np.zeros(3), J_TABLE, g)
        )
    taus = np.array(taus)
    step = np.abs(np.diff(taus, axis=0)).max()
    assert step < 5e-3  # no jump at |s| = eps


def test_smc_torque_single_axis_symbolic_oracle():
    # one-axis closed form: cross products vanish, leaving
    # tau_x = Jx * (k/2 * |q4| * (wf - w) + wf_dot - Z sat(s, eps)) (+ gyro = 0)
    g = SmcAttitudeGains(1.8, 0.35, 0.2)
    th = 0.8
    dq = Quaternion.from_axis_angle([1, 0, 0], th)
    w = np.array([0.3, 0.0, 0.0])
    wf = np.array([0.1, 0.0, 0.0])
    wfd = np.array([0.05, 0.0, 0.0])
    s_x = (w[0] - wf[0]) + g.k_smc * math.sin(th / 2)
    expected_x = 1.2 * (
        0.5 * g.k_smc * math.cos(th / 2) * (wf[0] - w[0])
        + wfd[0]
        - g.Z[0] * sat(s_x, g.eps[0])
    )
    tau = smc_attitude_torque(dq, w, wf, wfd, J_TABLE, g)
    assert tau[0] == pytest.approx(expected_x, abs=1e-12)
    assert np.allclose(tau[1:], 0.0, atol=1e-12)


def test_smc_torque_double_cover():
    rng = np.random.default_rng(6)
    g = SmcAttitudeGains(2.0, 0.3, 0.1)
    dq = _rand_unit_quat(rng)
    w, wf, wfd = (rng.standard_normal(3) for _ in range(3))
    t1 = smc_attitude_torque(dq, w, wf, wfd, J_TABLE, g)
    t2 = smc_attitude_torque(-dq, w, wf, wfd, J_TABLE, g)
    assert np.allclose(t1, t2, atol=1e-12)


def test_smc_reaching_law_finite_difference_oracle():
    """Multi-axis check that the closed loop realizes s_dot = -Z sat(s, eps).

    This pins the sign of the kinematic feed-forward cross term: flipping it
    leaves single-axis runs untouched but breaks this multi-axis identity by
    two orders of magnitude.
    """
    rng = np.random.default_rng(7)
    g = SmcAttitudeGains(1.5, 0.4, 0.05)
    dt = 0.002
    for _ in range(5):
        q0, qf = _rand_unit_quat(rng), _rand_unit_quat(rng)
        w0 = 0.1 * rng.standard_normal(3)
        s_hist = []

        def torque(dq, w):
            s_hist.append(smc_attitude_surface(dq, w, np.zeros(3), g.k_smc))
            return smc_attitude_torque(dq, w, np.zeros(3), np.zeros(3), J_TABLE, g)

        _simulate_attitude_loop(q0, w0, qf, torque, T=10.0, dt=dt)
        s_hist = np.array(s_hist)
        sdot = np.gradient(s_hist, dt, axis=0)
        pred = -g.Z * sat(s_hist, g.eps)
        n = len(s_hist) // 3  # reaching phase
        assert np.abs(sdot[5:n] - pred[5:n]).max() < 0.02


def test_smc_reaching_and_capture_under_bias():
    # bounded torque bias below the reaching margin: every |s_i| enters the
    # layer and stays for >= 95% of post-capture samples
    rng = np.random.default_rng(8)
    g = SmcAttitudeGains(1.5, 0.4, 0.05)
    for run in range(25):
        q0, qf = _rand_unit_quat(rng), _rand_unit_quat(rng)
        w0 = 0.1 * rng.standard_normal(3)
        bias = rng.uniform(-0.01, 0.01, 3)
        s_hist = []

        def torque(dq, w):
            s_hist.append(smc_attitude_surface(dq, w, np.zeros(3), g.k_smc))
            return smc_attitude_torque(dq, w, np.zeros(3), np.zeros(3), J_TABLE, g)

        _simulate_attitude_loop(q0, w0, qf, torque, T=20.0, dt=0.005, d_omega=bias)
        s_hist = np.abs(np.array(s_hist))
        inside = np.all(s_hist <= g.eps, axis=1)
        assert inside.any(), "never captured"
        first = int(np.argmax(inside))
        post = inside[first:]
        assert post.mean() >= 0.95


# ---------------------------------------------------------------------------
# Relative-position laws
# ---------------------------------------------------------------------------

def _pair(r_L, v_L, r_F, v_F):
    mk = lambda r, v: BodyState(
        r=np.asarray(r, float), v=np.asarray(v, float),
        q=Quaternion.identity(), omega=np.zeros(3),
    )
    return RelativePair(leader=mk(r_L, v_L), follower=mk(r_F, v_F))


def test_smc_relpos_zero_case():
    # test mode mu=0, u_L=0, zero errors
    pair = _pair([1, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0])
    g = SmcRelPosGains(1.0, 1.0, 0.1)
    u = smc_relpos_force(pair, (np.zeros(3), np.zeros(3)), np.zeros(3), 0.0, g)
    assert np.allclose(u, 0.0)


def test_smc_relpos_single_axis_oracle():
    # one-axis hand evaluation with k=1, Z=1 and a tiny layer (sign law)
    rho = np.array([0.0, 0.0, 5.0])
    v = np.array([0.0, 0.0, -0.5])
    pair = _pair([7e6, 0, 0], [0, 0, 0], [7e6, 0, -5.0], [0, 0, 0.5])
    assert np.allclose(pair.r_rel, rho) and np.allclose(pair.v_rel, v)
    g = SmcRelPosGains(1.0, 1.0, 1e-9)
    refs = (np.array([0.0, 0.0, 1.0]), np.zeros(3))
    mu = 3.986e14
    u = smc_relpos_force(pair, refs, np.zeros(3), mu, g)
    r_L, r_F = pair.leader.r, pair.follower.r
    grav = mu * (
        r_F / np.linalg.norm(r_F) ** 3 - r_L / np.linalg.norm(r_L) ** 3
    )
    s_z = v[2] + 1.0 * (rho[2] - 1.0)  # = -0.5 + 4 = 3.5 > 0
    expected = grav + np.array([0.0, 0.0, -1.0 * v[2] - 1.0 * np.sign(s_z)])
    assert np.allclose(u, expected, rtol=1e-12)


def test_smc_relpos_station_keeping_refs():
    pair = _pair([7e6, 0, 0], [0, 7.5e3, 0], [7e6 - 1e3, 0, 0], [0, 7.5e3, 0])
    g = SmcRelPosGains(1.0, 1.0, 0.5)
    refs = (pair.r_rel.copy(), np.zeros(3))  # hold current geometry
    u = smc_relpos_force(pair, refs, np.zeros(3), 3.986e14, g)
    # on-reference: feedback terms vanish, only gravity feed-forward remains
    r_L, r_F = pair.leader.r, pair.follower.r
    grav = 3.986e14 * (
        r_F / np.linalg.norm(r_F) ** 3 - r_L / np.linalg.norm(r_L) ** 3
    )
    assert np.allclose(u, grav, rtol=1e-12)


def test_smc_relpos_surface_decrease_outside_layer():
    # discrete check of dV <= 0 for V = s's/2 outside the boundary layer
    g = SmcRelPosGains(1.0, 1.0, 0.5)
    rho = np.array([100.0, -50.0, 80.0])
    v = np.array([1.0, 1.0, -2.0])
    refs = (np.zeros(3), np.zeros(3))
    dt = 0.01
    V_prev, V_list, outside = None, [], []
    for _ in range(4000):
        pair = _pair([7e6, 0, 0], [0, 0, 0], [7e6, 0, 0] - rho, -v)
        s = smc_relpos_surface(pair, *refs, g.k)
        u = smc_relpos_force(pair, refs, np.zeros(3), 0.0, g)
        V = 0.5 * s @ s
        V_list.append(V)
        outside.append(bool(np.all(np.abs(s) > g.eps)))
        # double-integrator relative plant, mu = 0 test mode
        rho = rho + dt * v
        v = v + dt * u
    dV = np.diff(V_list)
    mask = np.array(outside[:-1]) & np.array(outside[1:])
    assert np.all(dV[mask] <= 1e-12)


def test_pd_relpos_zero_and_hand_value():
    g = PdGains(1.0, 1.0)
    assert np.allclose(pd_relpos_force(np.zeros(3), np.zeros(3), g), 0.0)
    u = pd_relpos_force(np.array([1.0, 0, 0]), np.zeros(3), g)
    assert np.allclose(u, [-1.0, 0.0, 0.0])


def test_pd_linearity():
    g = PdGains(0.1208, 0.3786)
    e_r, e_v = np.array([0.2, -1.0, 0.4]), np.array([0.05, 0.0, -0.02])
    assert np.allclose(
        pd_relpos_force(2 * e_r, 2 * e_v, g), 2 * pd_relpos_force(e_r, e_v, g)
    )


def test_pd_gains_nonnegative():
    with pytest.raises(ValueError):
        PdGains(-0.1, 1.0)


def test_pd_attitude_double_cover():
    rng = np.random.default_rng(9)
    g = PdGains(0.5, 0.5)
    dq = _rand_unit_quat(rng)
    w = rng.standard_normal(3)
    assert np.allclose(
        pd_attitude_torque(dq, w, np.zeros(3), g),
        pd_attitude_torque(-dq, w, np.zeros(3), g),
        atol=1e-12,
    )


# ---------------------------------------------------------------------------
# AUV laws
# ---------------------------------------------------------------------------

def test_auv_rotational_rest_equilibrium():
    body = table_auv_body()
    g = table_auv_gains()
    st = BodyState.at_rest()
    tau = auv_rotational_torque(st, Quaternion.identity(), np.zeros(3), body, g)
    assert np.allclose(tau, 0.0)


def test_auv_rotational_single_axis_oracle():
    # spin about z: gyro term vanishes, drag is the linear yaw row
    body = table_auv_body()
    g = table_auv_gains()
    w = np.array([0.0, 0.0, 0.4])
    st = BodyState(r=np.zeros(3), v=np.zeros(3), q=Quaternion.identity(), omega=w)
    s_z = w[2]  # attitude error is zero
    expected_z = 21.85 * w[2] - 0.8 * s_z - 0.2 * sat(s_z, 0.05)
    tau = auv_rotational_torque(st, Quaternion.identity(), np.zeros(3), body, g)
    assert tau[2] == pytest.approx(expected_z, abs=1e-12)
    assert np.allclose(tau[:2], 0.0, atol=1e-12)


def test_auv_rotational_double_cover():
    body = table_auv_body()
    g = table_auv_gains()
    rng = np.random.default_rng(10)
    q = _rand_unit_quat(rng)
    st = BodyState(
        r=np.zeros(3), v=np.zeros(3), q=q, omega=rng.standard_normal(3) * 0.1
    )
    st_neg = BodyState(r=st.r, v=st.v, q=-q, omega=st.omega)
    qd = _rand_unit_quat(rng)
    t1 = auv_rotational_torque(st, qd, np.zeros(3), body, g)
    t2 = auv_rotational_torque(st_neg, qd, np.zeros(3), body, g)
    assert np.allclose(t1, t2, atol=1e-12)


def test_auv_translational_rest_neutral_zero():
    body = table_auv_body()
    g = table_auv_gains()
    st = BodyState.at_rest()
    u = auv_translational_force(st, np.zeros(3), np.zeros(3), body, None, g)
    assert np.allclose(u, 0.0, atol=1e-15)


def test_auv_translational_smc_feedback_hand_value():
    # pure position error outside the layer: -K_v*s - B_v*sign(s) on x
    body = table_auv_body()
    g = table_auv_gains()
    st = BodyState.at_rest()
    r_d = np.array([-1.0, 0.0, 0.0])  # e_r = r - r_d = +1 on x
    u = auv_translational_force(st, r_d, np.zeros(3), body, None, g)
    assert u[0] == pytest.approx(-4.0 * 1.0 - 0.8 * 1.0, abs=1e-12)
    assert np.allclose(u[1:], 0.0, atol=1e-12)


def test_auv_translational_feedforward_cancels_drag():
    # zero-error moving case: drag and Coriolis feed-forward cancel exactly,
    # so the commanded force equals the plant's hydrodynamic load
    from formctl.dynamics import auv_derivative

    body = table_auv_body()
    g = table_auv_gains()
    v = np.array([0.4, -0.2, 0.1])
    w = np.array([0.05, 0.02, -0.04])
    st = BodyState(r=np.array([1.0, 2.0, 3.0]), v=v, q=Quaternion.identity(), omega=w)
    u = auv_translational_force(st, st.r, v, body, None, g)
    dx = auv_derivative(st, np.zeros(3), u, body, None)
    assert np.allclose(dx[3:6], 0.0, atol=1e-12)


def test_follower_reference():
    leader = BodyState(
        r=np.array([1.0, 2.0, 3.0]), v=np.array([0.1, 0.0, -0.1]),
        q=Quaternion.identity(), omega=np.zeros(3),
    )
    r_d, v_d = follower_reference(leader, FormationOffset(np.array([3.0, -1.0, 1.0])))
    assert np.allclose(r_d, [4.0, 1.0, 4.0])
    assert np.allclose(v_d, leader.v)
    r_d0, _ = follower_reference(leader, FormationOffset(np.zeros(3)))
    assert np.allclose(r_d0, leader.r)


def test_auv_gains_validation():
    with pytest.raises(ValueError):
        AuvSmcGains(
            Lambda_w=0.0, K_w=1, B_w=1, eps_w=0.05,
            Lambda_v=1, K_v=1, B_v=1, eps_v=0.05,
        )
