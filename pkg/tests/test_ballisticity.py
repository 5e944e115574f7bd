import numpy as np
import pytest

from rwre.ballisticity import (annealed_rho_moment, ec_box,
                               effective_criterion_check, estimate_rho,
                               fit_gamma, polynomial_condition_check,
                               slab_crossing_ratios, slab_quantities,
                               tgamma_decay_fit)
from rwre.environment import EnvironmentSpec, Region, constant_env
from rwre.oracle import lazy_gr_oracle


@pytest.fixture(scope="module")
def drift_env():
    return constant_env([0.7, 0.1, 0.1, 0.1], kappa=0.05,
                        region=Region.cube(2, 4000))


@pytest.fixture(scope="module")
def mild_env():
    return constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05,
                        region=Region.cube(2, 4000))


class TestEstimateRho:
    def test_exact_conservation(self, drift_env):
        s = estimate_rho(drift_env, ec_box((1, 0), 6, 12), method="exact")
        assert s.q + s.p == pytest.approx(1.0, abs=1e-10)
        assert s.rho == pytest.approx(s.q / s.p)

    def test_drifted_small_q(self, drift_env):
        s = estimate_rho(drift_env, ec_box((1, 0), 6, 12), method="exact")
        assert s.q < 0.1

    def test_mc_agrees_with_exact(self, mild_env):
        box = ec_box((1, 0), 5, 8)
        ex = estimate_rho(mild_env, box, method="exact")
        mc = estimate_rho(mild_env, box, method="mc", seed=3, n_walks=20_000)
        sigma = np.sqrt(ex.q * (1 - ex.q) / 20_000)
        assert abs(mc.q - ex.q) < 4 * sigma


class TestAnnealedMoment:
    def test_deterministic_env_zero_width(self, drift_env):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.7, 0.1, 0.1, 0.1),
                               region=Region.cube(2, 4000))
        box = ec_box((1, 0), 6, 12)
        out = annealed_rho_moment(spec, box, 0.5, n_env=30, seed=1)
        s = estimate_rho(drift_env, box, method="exact")
        assert out["estimate"] == pytest.approx(s.rho ** 0.5, rel=1e-12)
        assert out["ci"][1] - out["ci"][0] < 1e-12

    def test_small_exponent_approaches_one(self):
        spec = EnvironmentSpec("iid", 2, 0.05, alpha=(4, 1, 2, 2))
        out = annealed_rho_moment(spec, ec_box((1, 0), 5, 8), 1e-6, n_env=30,
                                  seed=2)
        assert out["estimate"] == pytest.approx(1.0, abs=1e-3)

    def test_reproducible_across_seeds_within_ci(self):
        spec = EnvironmentSpec("iid", 2, 0.05, alpha=(8, 1, 2, 2))
        box = ec_box((1, 0), 5, 8)
        a = annealed_rho_moment(spec, box, 0.5, n_env=60, seed=3)
        b = annealed_rho_moment(spec, box, 0.5, n_env=60, seed=4)
        lo = min(a["ci"][0], b["ci"][0])
        hi = max(a["ci"][1], b["ci"][1])
        assert lo <= a["estimate"] <= hi and lo <= b["estimate"] <= hi

    def test_requires_enough_envs(self):
        spec = EnvironmentSpec("iid", 2, 0.05)
        with pytest.raises(ValueError):
            annealed_rho_moment(spec, ec_box((1, 0), 5, 8), 0.5, n_env=10, seed=1)


class TestEffectiveCriterion:
    def test_arithmetic_identity_on_deterministic_env(self, drift_env):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.7, 0.1, 0.1, 0.1),
                               region=Region.cube(2, 4000))
        rep = effective_criterion_check(spec, (1, 0), [10], [20], [0.5],
                                        n_env=30, seed=1)
        s = estimate_rho(drift_env, ec_box((1, 0), 10, 20), method="exact")
        hand = 1.0 * 20 * 10 ** 5 * s.rho ** 0.5
        assert rep.estimate == pytest.approx(hand, rel=1e-10)
        assert rep.ci[0] == pytest.approx(rep.ci[1], rel=1e-9)  # no env noise

    def test_symmetric_fails_everywhere(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.25, 0.25, 0.25, 0.25),
                               region=Region.cube(2, 4000))
        rep = effective_criterion_check(spec, (1, 0), [6, 10], [12, 20], [0.5, 1.0],
                                        n_env=30, seed=2)
        assert rep.verdict == "fails"
        assert all(r["ci"][0] > 1 for r in rep.details["grid"])

    def test_value_monotone_in_cprime_and_lt(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.7, 0.1, 0.1, 0.1),
                               region=Region.cube(2, 4000))
        r1 = effective_criterion_check(spec, (1, 0), [8], [12], [1.0], 30, 1,
                                       c_prime=1.0)
        r2 = effective_criterion_check(spec, (1, 0), [8], [12], [1.0], 30, 1,
                                       c_prime=2.0)
        r3 = effective_criterion_check(spec, (1, 0), [8], [24], [1.0], 30, 1,
                                       c_prime=1.0)
        assert r2.estimate > r1.estimate
        assert r3.estimate > r1.estimate

    def test_empty_grid_rejected(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.25,) * 4)
        with pytest.raises(ValueError, match="empty feasible grid"):
            effective_criterion_check(spec, (1, 0), [3], [2], [0.5], 30, 1)


class TestPolynomialCondition:
    def test_nonpositive_j_rejected(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.25,) * 4)
        with pytest.raises(ValueError):
            polynomial_condition_check(spec, (1, 0), 11, 0.0, 30, 1)

    def test_miniature_drifted_holds(self):
        # strong drift at small kappa: backtracking odds ~ 1/47 < 1/11
        spec = EnvironmentSpec("constant", 2, 0.01, probs=(0.94, 0.02, 0.02, 0.02))
        rep = polynomial_condition_check(spec, (1, 0), 11, 1.0, n_env=30, seed=2)
        assert rep.estimate < 1 / 11
        assert rep.verdict == "holds"

    def test_symmetric_fails(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.25,) * 4)
        rep = polynomial_condition_check(spec, (1, 0), 11, 1.0, n_env=30, seed=3)
        assert rep.verdict == "fails"
        assert rep.estimate > 0.4


class TestTgammaFit:
    def test_closed_form_drift_recovers_gamma_one(self):
        levels = [4, 6, 8, 10]
        p = [lazy_gr_oracle(0.1, 0.4, L, L) for L in levels]  # backtracking prob
        fit = fit_gamma(levels, p)
        assert abs(fit["gamma_hat"] - 1.0) < 0.05

    def test_symmetric_degenerate_inconclusive(self):
        fit = fit_gamma([4, 6, 8, 10], [0.5] * 4)
        assert fit["verdict"] == "inconclusive"

    def test_mc_fit_in_band(self, mild_env):
        rep = tgamma_decay_fit(mild_env, (1, 0), 1.0, [3, 4, 5, 6],
                               n_walks=20_000, seed=5)
        assert 0.7 < rep["fit"]["gamma_hat"] < 1.3
        for row in rep["levels"]:
            assert row["truncated"] == 0

    def test_annealed_mode_runs(self):
        spec = EnvironmentSpec("iid", 2, 0.05, alpha=(4, 1, 2, 2))
        rep = tgamma_decay_fit(spec, (1, 0), 1.0, [3, 4, 5], n_walks=3000,
                               seed=6, walks_per_env=25, j_reference=[5.0])
        assert "polynomial_fit" in rep
        assert all(r["down"] + r["up"] > 0 for r in rep["levels"])


class TestDecayBox:
    def test_geometry_and_solvability(self, drift_env):
        from rwre.ballisticity import decay_box
        from rwre.geometry import classify_site
        from rwre.oracle import exit_distribution_exact
        box = decay_box((1, 0), 4.0)
        assert box.L == 4.0 and box.L_front == 5.0
        assert box.L_tilde == pytest.approx(2.1 * 64)
        assert classify_site(box, (5, 0)) == "frontal"
        res = exit_distribution_exact(drift_env, box, (0, 0))
        assert res.prob("other_boundary") < 0.02


class TestSlabMachinery:
    def test_rho_hat_matches_closed_form(self, mild_env):
        out = slab_crossing_ratios(mild_env, 4.0, [0], 30.0, (1, 0))
        qd = 1 - lazy_gr_oracle(0.4, 0.1, 4, 2)   # worst band row
        assert out["rho_hat"][0] == pytest.approx(qd / (1 - qd), abs=1e-9)
        assert out["escape_max"] < 1e-11

    def test_f_function_base_cases_and_symmetric_ratio(self, mild_env):
        res = slab_quantities(mild_env, 4.0, 12.0, 30.0, (1, 0), seed=3,
                              n_mc=1000)
        q = res["quantities"]
        n0 = q.n0
        assert q.f_values[n0 + 2] == 0.0
        assert q.f_values[n0 + 1] == 1.0
        # f strictly increases as the index decreases
        vals = [q.f_values[i] for i in range(n0 + 1, -n0, -1)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_all_ratios_one_gives_arithmetic_f(self):
        n0 = 3
        f = {n0 + 2: 0.0, n0 + 1: 1.0}
        prod = 1.0
        for i in range(n0, -n0, -1):
            prod /= 1.0
            f[i] = f[i + 1] + prod
        assert f[0] / f[-n0 + 1] == pytest.approx((n0 + 2) / (2 * n0 + 1))

    def test_geometric_f_closed_form(self, drift_env):
        res = slab_quantities(drift_env, 4.0, 12.0, 30.0, (1, 0), seed=4,
                              n_mc=1000)
        q = res["quantities"]
        n0 = q.n0
        rho = q.rho_hat[0]
        assert all(abs(q.rho_hat[i] - rho) < 1e-9 for i in q.rho_hat)
        # f(i) = sum of rho^{-(n0+1-j)} is a geometric sum
        expect_f0 = sum(rho ** -(n0 + 1 - j) for j in range(0, n0 + 2))
        assert q.f_values[0] == pytest.approx(expect_f0, rel=1e-9)

    def test_quenched_bound_holds(self, mild_env):
        res = slab_quantities(mild_env, 4.0, 12.0, 30.0, (1, 0), seed=5,
                              n_mc=2000)
        assert res["holds"]
        assert res["mc_lhs"] <= res["bound"] + 3 * np.sqrt(
            max(res["mc_lhs"] * (1 - res["mc_lhs"]), 1e-12) / 2000)
