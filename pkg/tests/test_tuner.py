import math

import numpy as np
import pytest

from formctl.controllers import LyapunovGains, PdGains, SmcAttitudeGains
from formctl.tuner import (
    AttitudePlantConfig,
    CostVector,
    Dataset,
    DistributionConfig,
    MogaConfig,
    ParetoArchive,
    SaConfig,
    ScenarioSample,
    anneal_transient_batch,
    dataset_to_csv,
    evaluate,
    evaluate_with_terminal,
    export_dataset,
    featurize,
    moga,
    percentile_stats,
    rollout_batch,
    sample_scenario,
    scalarize,
    simulated_annealing,
)


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# scenario sampling
# ---------------------------------------------------------------------------

def test_sample_scenario_degenerate_distributions():
    # all sigmas zero, uniform bounds collapsed around a point
    d = DistributionConfig(
        q_lo=0.499999, q_hi=0.5, omega0_std=0.0, omegaf_std=0.0,
        w1_std=0.0, w2_lo=100.0, w2_hi=100.0, w3_lo=0.001, w3_hi=0.001,
    )
    sc = sample_scenario(d, rng_for(0))
    assert np.allclose(sc.q0, 0.5, atol=1e-5)  # normalized equal components
    assert np.allclose(sc.omega0, 0.0)
    assert np.allclose(sc.w, [1.0, 100.0, 0.001])


def test_sample_scenario_unit_norm():
    d = DistributionConfig()
    r = rng_for(1)
    for _ in range(10_000):
        sc = sample_scenario(d, r)
        assert abs(np.linalg.norm(sc.q0) - 1.0) < 1e-12
        assert abs(np.linalg.norm(sc.qf) - 1.0) < 1e-12


def test_sample_scenario_rate_statistics():
    d = DistributionConfig(omega0_mean=0.01, omega0_std=0.05)
    r = rng_for(2)
    n = 4000
    w0 = np.array([sample_scenario(d, r).omega0 for _ in range(n)])
    # empirical mean within 3 sigma / sqrt(N) of the configured mean
    assert np.all(np.abs(w0.mean(axis=0) - 0.01) < 3 * 0.05 / math.sqrt(n))
    assert np.allclose(w0.std(axis=0), 0.05, rtol=0.1)


def test_distribution_config_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        DistributionConfig(q_lo=1.0, q_hi=-1.0)
    with pytest.raises(ValueError):
        DistributionConfig(omega0_std=-0.1)


def test_featurize_canonicalizes_hemispheres():
    rng = rng_for(3)
    q0 = rng.standard_normal(4)
    q0 /= np.linalg.norm(q0)
    qf = rng.standard_normal(4)
    qf /= np.linalg.norm(qf)
    w0, w, wf = rng.standard_normal(3), rng.standard_normal(3), np.zeros(3)
    f1 = featurize(q0, w0, w, qf, wf)
    f2 = featurize(-q0, w0, w, -qf, wf)
    assert np.array_equal(f1, f2)
    assert len(f1) == 17


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _fixed_scenario(seed=5):
    rng = rng_for(seed)
    q0 = rng.standard_normal(4)
    q0 /= np.linalg.norm(q0)
    qf = rng.standard_normal(4)
    qf /= np.linalg.norm(qf)
    return ScenarioSample(
        q0=q0, omega0=0.02 * rng.standard_normal(3), qf=qf,
        omegaf=np.zeros(3), w=np.array([1.0, 500.0, 0.001]), seed=seed,
    )


def test_evaluate_zero_torque_zero_energy():
    # start at the target, at rest, no disturbances: tau stays 0, E = 0, e = 0
    sc = _fixed_scenario()
    sc = ScenarioSample(
        q0=sc.qf.copy(), omega0=np.zeros(3), qf=sc.qf, omegaf=np.zeros(3),
        w=sc.w, seed=sc.seed,
    )
    plant = AttitudePlantConfig(disturbances_on=False)
    c = evaluate(sc, LyapunovGains(0.5, 0.5), 10.0, plant)
    assert c.E == 0.0
    assert c.e == pytest.approx(0.0, abs=1e-12)
    assert c.e_deg == pytest.approx(0.0, abs=1e-9)


def test_evaluate_energy_against_recorded_trapezoid():
    # cross-validate the engine's energy accumulator against the recording
    # simulator's trapezoid on |tau . omega| for the same seeded run
    from formctl.scenarios import simulate_attitude

    sc = _fixed_scenario(11)
    g = LyapunovGains(0.8, 1.1)
    plant = AttitudePlantConfig(dt=0.05)
    c = evaluate(sc, g, 20.0, plant)
    rep = simulate_attitude(
        "x", sc.q0, sc.omega0, sc.qf, "lyapunov", g, 20.0, plant, sc.seed
    )
    assert c.E == pytest.approx(rep.metrics["E"], rel=2e-2)
    assert c.e_deg == pytest.approx(rep.metrics["e_final"], abs=1e-6)


def test_evaluate_deterministic_and_batch_consistent():
    sc = _fixed_scenario(7)
    g = LyapunovGains(0.5, 0.8)
    plant = AttitudePlantConfig()
    c1 = evaluate(sc, g, 30.0, plant)
    c2 = evaluate(sc, g, 30.0, plant)
    assert (c1.E, c1.e) == (c2.E, c2.e)
    other = _fixed_scenario(8)
    gains = {"k1": np.array([0.5, 2.0]), "k2": np.array([0.8, 0.4])}
    costs, _, _ = rollout_batch(
        [sc, other], "lyapunov", gains, np.array([30.0, 72.0]), plant
    )
    assert (costs[0].E, costs[0].e) == (c1.E, c1.e)


def test_evaluate_rejects_bad_duration():
    with pytest.raises(ValueError):
        evaluate(_fixed_scenario(), LyapunovGains(1, 1), 0.0, AttitudePlantConfig())


def test_evaluate_supports_pd_and_smc_kinds():
    sc = _fixed_scenario(9)
    plant = AttitudePlantConfig()
    c_pd = evaluate(sc, PdGains(0.5, 0.5), 20.0, plant)
    c_smc = evaluate(sc, SmcAttitudeGains(2.0, 0.3, 0.1), 20.0, plant)
    assert c_pd.E >= 0.0 and c_smc.E >= 0.0
    assert c_smc.e_deg < 5.0  # SMC converges on this horizon


def test_phase_chaining_passes_terminal_state_exactly():
    # chaining contract: overriding the initial state with the previous
    # phase's terminal state is bit-identical to a scenario that starts there
    sc = _fixed_scenario(10)
    plant = AttitudePlantConfig()
    g = LyapunovGains(0.9, 0.9)
    _, qT, wT = evaluate_with_terminal(sc, g, 30.0, plant)
    chained_cost, q2, w2 = evaluate_with_terminal(
        sc, g, 5.0, plant, x0_override=(qT.copy(), wT.copy())
    )
    sc_explicit = ScenarioSample(
        q0=qT.copy(), omega0=wT.copy(), qf=sc.qf, omegaf=sc.omegaf,
        w=sc.w, seed=sc.seed,
    )
    direct_cost, q3, w3 = evaluate_with_terminal(sc_explicit, g, 5.0, plant)
    assert (chained_cost.E, chained_cost.e) == (direct_cost.E, direct_cost.e)
    assert np.array_equal(q2, q3) and np.array_equal(w2, w3)


def test_cost_vector_validation():
    with pytest.raises(ValueError):
        CostVector(E=-1.0, e=0.0, e_deg=0.0)
    c = CostVector(E=math.inf, e=math.inf, e_deg=math.inf, diverged=True)
    assert c.diverged


# ---------------------------------------------------------------------------
# scalarize
# ---------------------------------------------------------------------------

def test_scalarize_selectors_and_arithmetic():
    chi = CostVector(E=2.0, e=3.0, e_deg=1.0)
    assert scalarize(chi, 4.0, np.array([1.0, 0, 0])) == 2.0
    assert scalarize(chi, 4.0, np.array([0, 1.0, 0])) == 3.0
    assert scalarize(chi, 4.0, np.array([1.0, 1.0, 1.0])) == 9.0
    with pytest.raises(ValueError):
        scalarize(chi, 4.0, np.array([np.inf, 0, 0]))


# ---------------------------------------------------------------------------
# simulated annealing
# ---------------------------------------------------------------------------

def test_sa_finds_quadratic_minimum():
    cfg = SaConfig(iterations=5000, step_scales=(0.3,), seed=1)
    res = simulated_annealing(lambda x: (x[0] - 1.7) ** 2, [(-5.0, 5.0)], cfg)
    assert abs(res.best_x[0] - 1.7) < 1e-2
    assert np.all(np.diff(res.history) <= 0.0)


def test_sa_seed_reproducible():
    cfg = SaConfig(iterations=300, step_scales=(0.3,), seed=4)
    f = lambda x: math.sin(3 * x[0]) + 0.1 * x[0] ** 2
    r1 = simulated_annealing(f, [(-4.0, 4.0)], cfg)
    r2 = simulated_annealing(f, [(-4.0, 4.0)], cfg)
    assert np.array_equal(r1.best_x, r2.best_x)
    assert r1.best_cost == r2.best_cost


def test_sa_zero_iterations_returns_initial():
    cfg = SaConfig(iterations=0, step_scales=(0.3,), seed=0)
    res = simulated_annealing(lambda x: x[0] ** 2, [(-2.0, 6.0)], cfg)
    assert res.best_x[0] == 2.0  # box midpoint


def test_sa_rejects_nonfinite_candidates():
    calls = {"n": 0}

    def f(x):
        calls["n"] += 1
        return math.nan if x[0] > 0 else x[0] ** 2

    cfg = SaConfig(iterations=200, step_scales=(1.0,), seed=2)
    res = simulated_annealing(f, [(-3.0, 3.0)], cfg, x0=np.array([-1.0]))
    assert math.isfinite(res.best_cost)
    assert res.rejected_nonfinite > 0


def test_sa_config_validation():
    with pytest.raises(ValueError):
        SaConfig(cooling=1.0)
    with pytest.raises(ValueError):
        SaConfig(iterations=-1)


def test_anneal_batch_respects_box_and_reproduces():
    rng = rng_for(6)
    d = DistributionConfig()
    scenarios = [sample_scenario(d, rng) for _ in range(6)]
    plant = AttitudePlantConfig(dt=0.2)
    cfg = SaConfig(iterations=40, seed=3)
    x1, f1, h1 = anneal_transient_batch(scenarios, plant, cfg)
    x2, f2, h2 = anneal_transient_batch(scenarios, plant, cfg)
    assert np.array_equal(x1, x2) and np.array_equal(f1, f2)
    assert np.all(x1[:, :2] >= 0.01) and np.all(x1[:, :2] <= 3.0)
    assert np.all(x1[:, 2] >= 7.2) and np.all(x1[:, 2] <= 72.0)
    assert np.all(np.diff(h1, axis=0) <= 1e-15)


# ---------------------------------------------------------------------------
# MOGA
# ---------------------------------------------------------------------------

def _bench_objective(X):
    x = X[:, 0]
    return np.stack([x**2, (x - 2.0) ** 2], axis=1)


def test_moga_benchmark_front_hausdorff():
    archive = moga(_bench_objective, [(-1.0, 3.0)], MogaConfig(64, 50, seed=0))
    assert archive.check_non_dominated()
    xs = np.sort(archive.X[:, 0])
    # Hausdorff distance between the archive and the true set [0, 2]
    d_a_to_front = max(max(0.0 - x, x - 2.0, 0.0) for x in xs)
    grid = np.linspace(0.0, 2.0, 201)
    d_front_to_a = max(min(abs(g - x) for x in xs) for g in grid)
    assert max(d_a_to_front, d_front_to_a) <= 0.1


def test_moga_seed_reproducible():
    a1 = moga(_bench_objective, [(-1.0, 3.0)], MogaConfig(16, 10, seed=5))
    a2 = moga(_bench_objective, [(-1.0, 3.0)], MogaConfig(16, 10, seed=5))
    assert np.array_equal(a1.X, a2.X) and np.array_equal(a1.F, a2.F)


def test_moga_archive_nondominance_brute_force():
    archive = moga(_bench_objective, [(-1.0, 3.0)], MogaConfig(32, 20, seed=7))
    F = archive.F
    for i in range(len(F)):
        for j in range(len(F)):
            if i != j:
                assert not (np.all(F[j] <= F[i]) and np.any(F[j] < F[i]))


def test_moga_handles_nonfinite_rows():
    def obj(X):
        F = _bench_objective(X)
        F[X[:, 0] > 2.5] = np.nan
        return F

    archive = moga(obj, [(-1.0, 3.0)], MogaConfig(16, 8, seed=1))
    assert np.all(np.isfinite(archive.F))


def test_moga_population_minimum():
    with pytest.raises(ValueError):
        MogaConfig(population=2)


def test_pareto_archive_check_detects_violation():
    bad = ParetoArchive(
        X=np.array([[0.0], [1.0]]), F=np.array([[1.0, 1.0], [2.0, 2.0]])
    )
    assert not bad.check_non_dominated()


# ---------------------------------------------------------------------------
# percentile statistics
# ---------------------------------------------------------------------------

def test_percentile_stats_constant_array():
    s = percentile_stats([3.3] * 17, 99.0)
    assert s.mean == s.mode == s.p_low == s.p_high == s.max == 3.3
    assert s.variance == 0.0


def test_percentile_stats_nearest_rank():
    s = percentile_stats(np.arange(1, 101), 99.0)
    assert s.p_high == 99.0
    assert s.p_low == 1.0
    assert s.max == 100.0


def test_percentile_stats_two_point_boundary():
    s = percentile_stats([0.0, 1.0], 99.0)
    assert s.p_low == 0.0  # P1 of {0, 1}


def test_percentile_stats_empty_raises():
    with pytest.raises(ValueError):
        percentile_stats([], 99.0)


def test_percentile_stats_mode_histogram():
    rng = rng_for(8)
    x = np.concatenate([rng.normal(5.0, 0.1, 800), rng.normal(9.0, 1.0, 200)])
    s = percentile_stats(x, 99.0)
    assert abs(s.mode - 5.0) < 0.3


# ---------------------------------------------------------------------------
# dataset export
# ---------------------------------------------------------------------------

def _rows(n, seed=0):
    rng = rng_for(seed)
    return [
        (rng.standard_normal(17), rng.standard_normal(5) + 2.0) for _ in range(n)
    ]


def test_export_dataset_split_sizes_disjoint():
    ds = export_dataset(_rows(100), 0.8, seed=1)
    assert len(ds.X_train) == 80 and len(ds.X_test) == 20
    # disjoint: no training row equals a held-out row
    for row in ds.X_test:
        assert not np.any(np.all(ds.X_train == row, axis=1))


def test_export_dataset_reexport_identical():
    csv1 = dataset_to_csv(export_dataset(_rows(40), 0.75, seed=9), "train")
    csv2 = dataset_to_csv(export_dataset(_rows(40), 0.75, seed=9), "train")
    assert csv1 == csv2


def test_export_dataset_normalization_train_only():
    ds = export_dataset(_rows(60), 0.8, seed=2)
    Xn = (ds.X_train - ds.feat_mean) / ds.feat_std
    Yn = (ds.Y_train - ds.targ_mean) / ds.targ_std
    assert np.all(np.abs(Xn.mean(axis=0)) < 1e-9)
    assert np.allclose(Xn.std(axis=0), 1.0, atol=1e-9)
    assert np.all(np.abs(Yn.mean(axis=0)) < 1e-9)


def test_export_dataset_validation():
    with pytest.raises(ValueError):
        export_dataset(_rows(1), 0.8, seed=0)
    with pytest.raises(ValueError):
        export_dataset(_rows(10), 1.0, seed=0)


def test_dataset_csv_schema_header():
    ds = export_dataset(_rows(10), 0.8, seed=3)
    header = dataset_to_csv(ds, "train").splitlines()[0].split(",")
    assert len(header) == 22
    assert header[0] == "q0_x" and header[-1] == "T"
