import numpy as np
import pytest

from rwre.environment import Region, constant_env, generate_iid
from rwre.geometry import BoxSpec, make_rotation
from rwre.oracle import (StateCapError, coupled_law_exact, exit_distribution_exact,
                         lazy_gr_oracle, tv_distance, wrapped_slab_up_probability)


class TestLazyGR:
    def test_symmetric_limit(self):
        assert lazy_gr_oracle(0.3, 0.3, 4, 4) == pytest.approx(0.5)

    def test_pinned_value_16_17(self):
        assert lazy_gr_oracle(0.4, 0.1, 2, 2) == pytest.approx(16 / 17, abs=1e-15)

    def test_asymmetric_levels(self):
        assert lazy_gr_oracle(0.4, 0.1, 2, 1) == pytest.approx(0.75 / 0.984375)

    def test_downward_drift_stable(self):
        # complementary identity P_up(pu, pd) = 1 - P_down with swapped roles
        p = lazy_gr_oracle(0.1, 0.4, 3, 2)
        q = lazy_gr_oracle(0.4, 0.1, 2, 3)
        assert p + q == pytest.approx(1.0, abs=1e-12)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            lazy_gr_oracle(0.0, 0.1, 1, 1)
        with pytest.raises(ValueError):
            lazy_gr_oracle(0.1, 0.1, 0, 1)


class TestWrappedSlab:
    @pytest.mark.parametrize("pu,pd", [(0.4, 0.1), (0.3, 0.2), (0.25, 0.25)])
    @pytest.mark.parametrize("a,b", [(1, 1), (2, 2), (3, 1), (5, 4)])
    def test_matches_closed_form(self, pu, pd, a, b):
        pt = (1 - pu - pd) / 2
        res = wrapped_slab_up_probability([pu, pd, pt, pt], a, b, wrap=7)
        assert res.prob("up") == pytest.approx(lazy_gr_oracle(pu, pd, a, b),
                                               abs=1e-10)

    def test_conservation(self):
        res = wrapped_slab_up_probability([0.35, 0.15, 0.3, 0.2], 3, 2)
        assert res.prob("up") + res.prob("down") == pytest.approx(1.0, abs=1e-10)


class TestBoxExit:
    def test_drifted_box_small_q(self):
        env = constant_env([0.7, 0.1, 0.1, 0.1], kappa=0.05,
                           region=Region.cube(2, 100))
        box = BoxSpec(make_rotation([1, 0]), 4, 4, 8, (0, 0))
        res = exit_distribution_exact(env, box, (0, 0))
        assert res.prob("other_boundary") < 0.1
        assert sum(res.class_probs.values()) == pytest.approx(1.0, abs=1e-10)

    def test_symmetric_transverse_heavy_box(self):
        env = constant_env([0.25] * 4, region=Region.cube(2, 100))
        box = BoxSpec(make_rotation([1, 0]), 5, 5, 5, (0, 0))
        res = exit_distribution_exact(env, box, (0, 0))
        # only one of four faces is frontal, so the non-frontal mass dominates
        assert res.prob("other_boundary") > 0.5

    def test_rotated_box_solvable(self):
        env = generate_iid(0.05, 2, Region.cube(2, 60), seed=2)
        box = BoxSpec(make_rotation([1, 1]), 4, 5, 6, (0, 0))
        res = exit_distribution_exact(env, box, (0, 0))
        assert sum(res.class_probs.values()) == pytest.approx(1.0, abs=1e-10)

    def test_transverse_relabeling_invariance(self):
        # d=3 environment symmetric in the two transverse axes
        probs = [0.3, 0.1, 0.15, 0.15, 0.15, 0.15]
        env = constant_env(probs, kappa=0.04, region=Region.cube(3, 40))
        box_a = BoxSpec(make_rotation([1, 0, 0]), 3, 3, 4, (0, 0, 0))
        res = exit_distribution_exact(env, box_a, (0, 0, 0))
        # swapping e2 and e3 leaves the exit distribution unchanged
        perm = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=float)
        from rwre.geometry import Rotation
        box_b = BoxSpec(Rotation(perm, perm[:, 0].copy()), 3, 3, 4, (0, 0, 0))
        res_b = exit_distribution_exact(env, box_b, (0, 0, 0))
        assert res.prob("frontal") == pytest.approx(res_b.prob("frontal"), abs=1e-10)

    def test_state_cap(self):
        env = constant_env([0.25] * 4, region=Region.cube(2, 2000))
        box = BoxSpec(make_rotation([1, 0]), 300, 300, 300, (0, 0))
        with pytest.raises(StateCapError):
            exit_distribution_exact(env, box, (0, 0), state_cap=1000)


class TestCoupledLawExact:
    def test_one_step_algebra(self):
        env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
        c, q = coupled_law_exact(env, (0, 0), 1)
        # kappa + (1-4k)(p-k)/(1-4k) collapses to the quenched probability
        assert c[(0,)] == pytest.approx(0.4, abs=1e-14)
        assert q[(0,)] == pytest.approx(0.4, abs=1e-14)

    def test_symmetric_one_step(self):
        env = constant_env([0.25] * 4, kappa=0.05)
        c, q = coupled_law_exact(env, (0, 0), 1)
        for m in range(4):
            assert c[(m,)] == pytest.approx(0.25, abs=1e-14)

    def test_three_step_tv_zero(self):
        env = generate_iid(0.05, 2, Region.cube(2, 20), seed=9)
        c, q = coupled_law_exact(env, (0, 0), 3)
        assert sum(c.values()) == pytest.approx(1.0, abs=1e-12)
        assert sum(q.values()) == pytest.approx(1.0, abs=1e-12)
        assert tv_distance(c, q) < 1e-12

    def test_depth_limit(self):
        env = constant_env([0.25] * 4)
        with pytest.raises(ValueError):
            coupled_law_exact(env, (0, 0), 5)
