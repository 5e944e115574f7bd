import math

import numpy as np
import pytest

from rwre.environment import EnvironmentSpec, constant_env
from rwre.geometry import DirectionSpec, cone_contains_many, ConeSpec, default_zeta, unit_moves
from rwre.regen import (PatternError, bar_epsilon, collect_regenerations,
                        detect_regenerations, first_confirmed_tau,
                        increment_batches_ks, renewal_sandwich_diagnostic,
                        sigma_exponent_window, tail_and_moments,
                        transition_scale)
from rwre.walk import EpsilonSequence, StopSpec, Trajectory, simulate_batch


class TestBarEpsilon:
    def test_axis_direction(self):
        assert list(bar_epsilon((1, 0), 3).codes) == [0, 0, 0]

    def test_block_structure(self):
        assert list(bar_epsilon((2, 1), 3).codes) == [0, 0, 2]

    def test_repetition_and_cone(self):
        be = bar_epsilon((2, 1), 6, zeta=0.05)
        assert list(be.codes) == [0, 0, 2, 0, 0, 2]
        steps = unit_moves(2)[be.codes.astype(np.int64)]
        prefix = np.cumsum(steps, axis=0)
        cone = ConeSpec((0, 0), DirectionSpec.from_int((2, 1)), 0.05)
        assert cone_contains_many(cone, prefix).all()

    def test_negative_components(self):
        assert list(bar_epsilon((-1, 2), 3).codes) == [1, 2, 2]

    def test_length_must_divide(self):
        with pytest.raises(PatternError):
            bar_epsilon((2, 1), 4)

    def test_cone_violation_detected(self):
        # steep cone parameter: transverse block steps leave the cone
        with pytest.raises(PatternError):
            bar_epsilon((1, 3), 4, zeta=0.9)


def _forced_trajectory(L, n):
    pattern = bar_epsilon((1, 0), L).codes
    moves = np.tile(pattern, n // L)
    eps = EpsilonSequence(moves.copy(), kappa=0.05, d=2)
    return Trajectory((0, 0), moves, "horizon", n), eps


class TestDetection:
    def test_forced_replay_finds_tau_at_L(self):
        for L in (1, 2, 4):
            traj, eps = _forced_trajectory(L, 120)
            rec = detect_regenerations(traj, eps, (1, 0), L, zeta=0.05, window=20)
            assert rec.tau[0] == L

    def test_record_and_pattern_reverifiable(self):
        env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
        res = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=20000), 3, 5,
                             mode=1, record=True)
        pattern = bar_epsilon((1, 0), 2).codes
        for i in range(5):
            traj, eps = res.trajectory(i), res.epsilons(i)
            rec = detect_regenerations(traj, eps, (1, 0), 2, zeta=0.05, window=300)
            proj = traj.positions() @ np.array([1.0, 0.0])
            for t in rec.tau:
                assert np.array_equal(eps.codes[t - 2:t], pattern)
                m = t - 2
                assert proj[m] > proj[:m].max(initial=-np.inf)

    def test_window_monotone(self):
        env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
        res = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=15000), 9, 10,
                             mode=1, record=True)
        for i in range(10):
            traj, eps = res.trajectory(i), res.epsilons(i)
            small = detect_regenerations(traj, eps, (1, 0), 1, 0.05, window=100)
            large = detect_regenerations(traj, eps, (1, 0), 1, 0.05, window=400)
            assert large.n_confirmed <= small.n_confirmed

    def test_symmetric_env_mostly_censored_no_crash(self):
        env = constant_env([0.25] * 4, kappa=0.05)
        records, _ = collect_regenerations(env, (1, 0), 1, n_traj=40,
                                           horizon=4000, seed=5, window=1000)
        frac_empty = np.mean([r.n_confirmed == 0 for r in records])
        assert frac_empty > 0.8

    def test_increments_strictly_forward(self):
        env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
        records, _ = collect_regenerations(env, (1, 0), 1, n_traj=60,
                                           horizon=15000, seed=7, window=500)
        for r in records:
            for dt, dx in r.increments():
                assert dt > 0 and dx[0] > 0

    def test_requires_letters(self):
        traj, _ = _forced_trajectory(1, 50)
        with pytest.raises(PatternError):
            detect_regenerations(traj, None, (1, 0), 1, 0.05, 10)

    def test_fast_first_tau_agrees(self):
        env = constant_env([0.7, 0.1, 0.1, 0.1], kappa=0.05)
        res = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=25000), 13,
                             20, mode=1, record=True)
        dspec = DirectionSpec.from_int((1, 0))
        zeta = default_zeta(1.0, 2)
        for i in range(20):
            moves = res.moves[i]
            eps = res.eps[i]
            fast, _ = first_confirmed_tau(moves, eps, dspec, 2, zeta, 400, 0.05)
            ref = detect_regenerations(res.trajectory(i), res.epsilons(i),
                                       dspec, 2, zeta, 400)
            assert fast == (ref.tau[0] if ref.n_confirmed else None)


class TestTransience:
    def test_directional_escape_fraction(self):
        env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
        res = simulate_batch(env, (0, 0), StopSpec.first_of(horizon=10_000), 3,
                             2000)
        frac = (res.final[:, 0] > 0).mean()
        assert frac > 0.999


@pytest.fixture(scope="module")
def records():
    env = constant_env([0.7, 0.1, 0.1, 0.1], kappa=0.05)
    records, _ = collect_regenerations(env, (1, 0), 1, n_traj=500,
                                       horizon=16000, seed=11, window=1000)
    return records


class TestTailAndMoments:

    def test_survival_monotone(self, records):
        out = tail_and_moments(records, 1, 0.05, seed=1, g=7.0, min_confirmed=300)
        surv = out["tail"].survival
        assert all(b <= a for a, b in zip(surv, surv[1:]))

    def test_third_moment_split_sample_stable(self, records):
        a = tail_and_moments(records[:250], 1, 0.05, seed=1, min_confirmed=100)
        b = tail_and_moments(records[250:], 1, 0.05, seed=2, min_confirmed=100)
        ratio = a["third_moment"] / b["third_moment"]
        assert 0.5 < ratio < 2.0

    def test_increment_ks_same_law(self, records):
        out = increment_batches_ks(records, (1, 0))
        assert out["p_value"] > 0.01

    def test_too_few_samples_inconclusive(self, records):
        out = tail_and_moments(records[:20], 1, 0.05, seed=1, min_confirmed=1000)
        assert out["verdict"] == "inconclusive"

    def test_alpha_window_formula(self):
        lo, hi = sigma_exponent_window(7.0, 0.05, 2)
        t = transition_scale(7.0, 0.05)
        s1 = (7 * t - 2 * math.log(20)) / (3 * 7 * t - 2 * math.log(20))
        s2 = (7 * t + 2 * math.log(20)) / (7 * 7 * t - 2 * math.log(20))
        assert lo == 1.0 and hi == pytest.approx(1 + min(s1, s2))


class TestSandwich:
    def test_slack_arithmetic(self):
        # kappa=0.05, g=7: t = (1/2)(2 ln 20 / 7 + 1), slack = e^{e^{-g t L}} - 1
        t = transition_scale(7.0, 0.05)
        assert t == pytest.approx(0.5 * (2 * math.log(20) / 7 + 1), abs=1e-12)
        assert t == pytest.approx(0.92796, abs=1e-4)
        slack = math.exp(math.exp(-7.0 * t * 5)) - 1
        assert slack == pytest.approx(7.8e-15, rel=0.1)

    def test_small_scale_diagnostic_passes(self):
        spec = EnvironmentSpec("constant", 2, 0.05, probs=(0.7, 0.1, 0.1, 0.1))
        rep = renewal_sandwich_diagnostic(spec, (1, 0), L=2, g=7.0, seed=4,
                                          window=300, n_sample=60, n_null_reps=25)
        assert rep["treatment"]["passed"]
        assert rep["null"]["chi2"] < 2 * rep["null"]["chi2_critical"]

    def test_iid_ensemble_diagnostic(self):
        spec = EnvironmentSpec("iid", 2, 0.05, alpha=(8, 1, 2, 2))
        rep = renewal_sandwich_diagnostic(spec, (1, 0), L=1, g=7.0, seed=6,
                                          window=150, n_sample=50, n_null_reps=12)
        assert rep["treatment"]["ks_stat"] <= rep["treatment"]["tolerance"]
