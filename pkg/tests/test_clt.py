import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwre.clt import (atypical_quenched_frequency, clt_scaling_check,
                      project_orthogonal, transversal_fluctuation_stat,
                      varsigma_window, velocity_from_regenerations,
                      velocity_plugin)
from rwre.environment import EnvironmentSpec, constant_env
from rwre.regen import collect_regenerations
from rwre.walk import StopSpec, simulate_batch


@pytest.fixture(scope="module")
def drift_env():
    return constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)


class TestVelocity:
    def test_plugin_matches_mean_step(self, drift_env):
        v = velocity_plugin(drift_env, horizon=4000, n_traj=300, seed=1)
        se = (np.array(v.ci)[:, 1] - np.array(v.ci)[:, 0]) / 2
        assert abs(v.v_hat[0] - 0.3) < 3 * max(se[0], 1e-3)
        assert abs(v.v_hat[1]) < 3 * max(se[1], 1e-3)
        assert v.ballistic_along((1, 0))

    def test_symmetric_ci_contains_zero(self):
        env = constant_env([0.25] * 4)
        v = velocity_plugin(env, horizon=4000, n_traj=300, seed=2)
        for lo, hi in v.ci:
            assert lo <= 0 <= hi

    def test_ratio_estimator_agrees_with_plugin(self, drift_env):
        records, _ = collect_regenerations(drift_env, (1, 0), 1, n_traj=120,
                                           horizon=15000, seed=3, window=500)
        r = velocity_from_regenerations(records, seed=4)
        p = velocity_plugin(drift_env, horizon=6000, n_traj=200, seed=5)
        for j in range(2):
            joint = (min(r.ci[j][0], p.ci[j][0]), max(r.ci[j][1], p.ci[j][1]))
            assert joint[0] <= r.v_hat[j] <= joint[1]
            assert joint[0] <= p.v_hat[j] <= joint[1]
        assert abs(r.v_hat[0] - p.v_hat[0]) < 0.02
        assert abs(np.linalg.norm(r.v_hat_L) - 1) < 1e-10


class TestProjector:
    def test_parallel_vector_annihilated(self):
        assert np.allclose(project_orthogonal((1, 0), (1, 0)), 0)

    def test_orthogonal_vector_fixed(self):
        assert np.allclose(project_orthogonal((0, 2), (1, 0)), (0, 2))

    def test_example(self):
        assert np.allclose(project_orthogonal((3, 4), (1, 0)), (0, 4))

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            project_orthogonal((1, 1), (2, 0))

    @given(st.tuples(st.floats(-50, 50), st.floats(-50, 50)),
           st.floats(0.01, 2 * np.pi))
    @settings(max_examples=100, deadline=None)
    def test_idempotent_and_orthogonal(self, z, angle):
        v = np.array([np.cos(angle), np.sin(angle)])
        p = project_orthogonal(z, v)
        assert np.allclose(project_orthogonal(p, v), p, atol=1e-9)
        assert abs(p @ v) < 1e-9


@pytest.fixture(scope="module")
def srw_report():
    env = constant_env([0.25] * 4)
    return clt_scaling_check(env, n=10_000, reps=500, seed=3, ratio_reps=2500)


class TestScalingCheck:

    def test_srw_covariance_diagonal(self, srw_report):
        r = np.array(srw_report["covariance"])
        tol = 3 * 0.5 * np.sqrt(2 / 499)
        assert abs(r[0, 0] - 0.5) < tol and abs(r[1, 1] - 0.5) < tol
        assert srw_report["cov_psd"]

    def test_srw_normality(self, srw_report):
        assert all(d["normality_pass"] for d in srw_report["directions"])

    def test_variance_ratios_consistent(self, srw_report):
        for t, entry in srw_report["variance_ratios"].items():
            assert entry["consistent"], (t, entry)

    def test_drifted_env_normality(self, drift_env):
        rep = clt_scaling_check(drift_env, n=10_000, reps=500, seed=4,
                                ratio_reps=2000)
        assert all(d["normality_pass"] for d in rep["directions"])
        assert 0.45 <= rep["variance_ratios"][0.5]["ratio"] <= 0.55

    def test_minimum_reps_enforced(self, drift_env):
        with pytest.raises(ValueError):
            clt_scaling_check(drift_env, n=1000, reps=100, seed=1)


class TestTransversalFluctuations:
    def test_axis_replay_has_zero_deviation(self):
        env = constant_env([0.97, 0.01, 0.01, 0.01], kappa=0.005)
        out = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=2500), 5,
                             60, record=True)
        rep = transversal_fluctuation_stat(out, (1.0, 0.0), 30.0, (1, 0),
                                           excursion=300, g=7.0, kappa=0.005)
        assert rep["verdict"] == "ok"
        assert rep["sup_quantiles"][0.5] <= 3.0

    def test_exceedance_decreases_with_level(self, drift_env):
        freqs = []
        for i, m in enumerate((25, 50, 100)):
            out = simulate_batch(drift_env, (0, 0),
                                 StopSpec.first_of(horizon=3000 + 40 * m), 7 + i,
                                 150, record=True)
            rep = transversal_fluctuation_stat(out, (1.0, 0.0), float(m), (1, 0),
                                               excursion=400,
                                               varsigma_grid=[0.9])
            freqs.append(rep["exceedance"][0.9]["frequency"])
        assert freqs[2] <= freqs[0] + 0.1

    def test_sign_test_symmetric_transverse(self, drift_env):
        out = simulate_batch(drift_env, (0, 0), StopSpec.first_of(horizon=4000),
                             11, 250, record=True)
        rep = transversal_fluctuation_stat(out, (1.0, 0.0), 40.0, (1, 0),
                                           excursion=400, g=7.0, kappa=0.05)
        assert rep["transverse_sign_test_p"] > 0.01

    def test_censoring_inconclusive(self):
        env = constant_env([0.25] * 4)
        out = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=500), 3, 40,
                             record=True)
        rep = transversal_fluctuation_stat(out, (1.0, 0.0), 100.0, (1, 0),
                                           excursion=400, varsigma_grid=[0.9])
        assert rep["verdict"] == "inconclusive"

    def test_window_formula(self):
        lo, hi = varsigma_window(7.0, 0.05)
        t = 0.5 * (2 * np.log(20) / 7 + 1)
        assert lo == pytest.approx((7 * t + 2 * np.log(20)) / (14 * t))
        assert hi == 1.0

    def test_reference_exponents(self):
        from rwre.clt import atypical_epsilon_scale, epsilon_choice
        t = 0.5 * (2 * np.log(20) / 7 + 1)
        want = 2 * np.log(20) * (2 - 2 * 0.9) / (7 * t - 2 * np.log(20))
        assert epsilon_choice(7.0, 0.05, 0.9) == pytest.approx(want)
        assert atypical_epsilon_scale(100.0) == pytest.approx(np.log(100.0) ** -0.75)


class TestAtypicalFrequency:
    def test_threshold_is_probability(self):
        spec = EnvironmentSpec("iid", 2, 0.05)
        out = atypical_quenched_frequency(spec, 3.0, 0.9, 1.0, (1, 0), 10, 1)
        assert 0 < out["threshold"] < 1

    def test_symmetric_ensemble_zero_frequency(self):
        spec = EnvironmentSpec("iid", 2, 0.05)
        out = atypical_quenched_frequency(spec, 4.0, 0.9, 1.0, (1, 0), 20, 2,
                                          g=7.0)
        assert out["frequency"] == 0.0
        assert 0.3 < out["p_quantiles"][0.5] < 0.7
        assert out["upper_bound"] == pytest.approx(3 / 20)

    def test_drifted_ensemble_zero_frequency(self):
        spec = EnvironmentSpec("iid", 2, 0.05, alpha=(8, 1, 2, 2))
        out = atypical_quenched_frequency(spec, 6.0, 0.9, 1.0, (1, 0), 20, 3)
        assert out["frequency"] == 0.0
        assert out["upper_bound"] == pytest.approx(3 / 20)

    def test_parameter_validation(self):
        spec = EnvironmentSpec("iid", 2, 0.05)
        with pytest.raises(ValueError):
            atypical_quenched_frequency(spec, 4.0, -0.5, 1.0, (1, 0), 5, 1)

    def test_mc_resolution_note(self):
        spec = EnvironmentSpec("iid", 2, 0.05)
        out = atypical_quenched_frequency(spec, 3.0, 0.9, 8.0, (1, 0), 4, 5,
                                          method="mc", n_walks=500)
        assert out.get("verdict") == "inconclusive"
