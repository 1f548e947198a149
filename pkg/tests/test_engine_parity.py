"""The compiled kernels must agree exactly with the reference engine."""

import numpy as np
import pytest

from parkinglab.dynamics import count_visits, run_outcome
from parkinglab.engine_fast import box_outcomes, tail_values, torus_outcomes
from parkinglab.realization import ModelParams, RealizationSource, Torus, TruncatedBox


@pytest.mark.parametrize("d,p,t_max", [(1, 0.35, 12), (1, 0.7, 10), (2, 0.3, 8), (2, 0.05, 8)])
def test_box_outcomes_match_reference(d, p, t_max):
    master = 0xABCDE0
    reps = 60
    radius = 2 * t_max
    taus, sigmas, _ = box_outcomes(d, p, master, reps, t_max, radius, early=True)
    for r in range(reps):
        src = RealizationSource(
            ModelParams(d=d, p=p, seed=master ^ r, domain=TruncatedBox(radius))
        )
        out = run_outcome(src, t_max)
        assert taus[r] == out.tau_censored, f"tau mismatch at rep {r}"
        assert sigmas[r] == out.sigma_censored, f"sigma mismatch at rep {r}"


@pytest.mark.parametrize("d,side,p,t", [(1, 21, 0.4, 15), (2, 9, 0.3, 10)])
def test_torus_outcomes_match_reference(d, side, p, t):
    master = 0x5150
    reps = 40
    taus, sigmas, visits = torus_outcomes(d, p, master, reps, t, side)
    for r in range(reps):
        src = RealizationSource(ModelParams(d=d, p=p, seed=master ^ r, domain=Torus(side)))
        out = run_outcome(src, t)
        assert taus[r] == out.tau_censored
        assert sigmas[r] == out.sigma_censored
        assert visits[r] == count_visits(src, t)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("sigma", [False, True])
def test_staged_equals_monolithic(d, sigma, subtests=None):
    p = 0.6 if sigma else 0.3
    t_max = 24
    master = 77_000 + d
    reps = 300
    staged = tail_values(d, p, master, reps, t_max, sigma=sigma, first_stage=4)
    taus, sigmas, _ = box_outcomes(d, p, master, reps, t_max, 2 * t_max, early=True)
    mono = sigmas if sigma else taus
    assert np.array_equal(staged, mono)


def test_truncation_radius_invariance():
    # Information travels at speed one: radius 2*t_max already exact.
    d, p, t_max = 1, 0.45, 16
    master = 31337
    reps = 200
    a, sa, _ = box_outcomes(d, p, master, reps, t_max, 2 * t_max)
    b, sb, _ = box_outcomes(d, p, master, reps, t_max, 2 * t_max + 5)
    assert np.array_equal(a, b)
    assert np.array_equal(sa, sb)


def test_thread_count_does_not_change_results():
    import numba

    d, p, t_max = 1, 0.3, 32
    master = 999
    reps = 500
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        one = tail_values(d, p, master, reps, t_max)
        numba.set_num_threads(2)
        two = tail_values(d, p, master, reps, t_max)
    finally:
        numba.set_num_threads(old)
    assert np.array_equal(one, two)
