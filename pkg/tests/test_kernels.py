"""Backend equivalence and reproducibility of the stepping kernels."""

import numpy as np
import pytest

import rwre.kernels as K
from rwre.environment import Region, constant_env, generate_iid
from rwre.walk import (LevelDown, LevelUp, StopSpec, simulate_batch)


@pytest.fixture(scope="module")
def iid_env():
    return generate_iid(0.05, 2, Region.cube(2, 1500), seed=3)


def run_on(impl, *args, **kwargs):
    old = K.run_batch, K.resume_one
    K.run_batch, K.resume_one = impl.run_batch, impl.resume_one
    try:
        return simulate_batch(*args, **kwargs)
    finally:
        K.run_batch, K.resume_one = old


def outputs(res):
    return (res.status, res.n_steps, res.final, res.draws,
            res.moves if res.moves is not None else np.zeros(0),
            res.eps if res.eps is not None else np.zeros(0))


@pytest.mark.parametrize("mode", [0, 1])
def test_backends_bitwise_equal_constant_env(mode):
    impls = K.backends()
    env = constant_env([0.4, 0.1, 0.25, 0.25], kappa=0.05)
    stop = StopSpec.first_of(LevelUp((1, 0), 12), LevelDown((1, 0), -12),
                             horizon=5000)
    results = {name: run_on(impl, env, (0, 0), stop, 77, 24, mode=mode, record=True)
               for name, impl in impls.items()}
    if len(results) < 2:
        pytest.skip("compiled backend not available")
    a, b = (outputs(r) for r in results.values())
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_backends_bitwise_equal_with_tile_resume(iid_env):
    impls = K.backends()
    if len(impls) < 2:
        pytest.skip("compiled backend not available")
    stop = StopSpec.first_of(LevelUp((1, 0), 60), LevelDown((1, 0), -60),
                             horizon=60000)
    results = {name: run_on(impl, iid_env, (0, 0), stop, 5, 6, mode=1, record=True)
               for name, impl in impls.items()}
    a, b = (outputs(r) for r in results.values())
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_thread_count_does_not_change_results(iid_env):
    stop = StopSpec.first_of(LevelUp((1, 0), 30), LevelDown((1, 0), -30),
                             horizon=30000)
    r1 = simulate_batch(iid_env, (0, 0), stop, 5, 600, threads=1)
    r8 = simulate_batch(iid_env, (0, 0), stop, 5, 600, threads=8)
    assert np.array_equal(r1.final, r8.final)
    assert np.array_equal(r1.n_steps, r8.n_steps)
    assert np.array_equal(r1.status, r8.status)


def test_trajectory_index_streams_are_call_independent(iid_env):
    stop = StopSpec.first_of(LevelUp((1, 0), 20), LevelDown((1, 0), -20),
                             horizon=20000)
    whole = simulate_batch(iid_env, (0, 0), stop, 9, 40)
    part = simulate_batch(iid_env, (0, 0), stop, 9, 15, index0=25)
    assert np.array_equal(whole.final[25:], part.final)
    assert np.array_equal(whole.n_steps[25:], part.n_steps)


def test_checkpoints_recorded_through_window_swaps(iid_env):
    stop = StopSpec.first_of(horizon=4000)
    res = simulate_batch(iid_env, (0, 0), stop, 4, 6, record=True,
                         checkpoints=[0, 1000, 2500, 4000])
    for i in range(6):
        pos = res.trajectory(i).positions()
        for j, cp in enumerate(res.checkpoint_steps):
            assert np.array_equal(res.checkpoints[i, j], pos[cp])
