import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cantorspec.diophantine import (DCParams, InsufficientDepth, TerminatingExpansion, angle_dist,
                                    best_return_time, cf_expand, check_convergent_bounds, dc_margin,
                                    find_resonance, l1_ball, phase, torus_dist)

GOLDEN = (math.sqrt(5) - 1) / 2


def fib(n):
    out = [1, 1]
    while len(out) < n:
        out.append(out[-1] + out[-2])
    return out[:n]


def test_golden_mean_is_all_ones_with_fibonacci_denominators():
    cf = cf_expand(GOLDEN, 20)
    assert cf.partial_quotients == (1,) * 20
    assert cf.q == fib(21)
    assert not cf.terminating


def test_recurrences_and_growth():
    cf = cf_expand(math.pi - 3, 10)
    a = (0,) + cf.partial_quotients
    p, q = cf.p, cf.q
    assert a[1:4] == (7, 15, 1)
    for k in range(2, len(q)):
        assert p[k] == a[k] * p[k - 1] + p[k - 2]
        assert q[k] == a[k] * q[k - 1] + q[k - 2]
    assert all(x < y for x, y in zip(q[1:], q[2:]))


def test_one_third_terminates():
    cf = cf_expand(1 / 3, 10)
    assert cf.terminating and cf.partial_quotients == (3,)
    assert cf_expand(Fraction(2, 7), 10).terminating


def test_convergent_bounds_on_random_frequencies():
    rng = np.random.default_rng(0)
    for x in rng.uniform(0.001, 0.999, 1000):
        cf = cf_expand(float(x), int(rng.integers(1, 16)))
        for n, upper, lower in check_convergent_bounds(cf):
            assert upper and lower, (x, n)


def test_best_approximation_property():
    cf = cf_expand(GOLDEN, 25)
    q = [x for x in cf.q if x <= 10_000]
    alpha = Fraction(GOLDEN)
    for n in range(2, len(q)):
        prev = cf.qnorm(q[n - 1])
        for k in range(1, q[n]):
            x = k * alpha
            assert abs(x - round(x)) >= prev


# distances ---------------------------------------------------------------------
def test_torus_dist_examples():
    assert torus_dist(0.5) == 0.5
    assert torus_dist(7.25) == 0.25


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_torus_dist_symmetries(x):
    d = torus_dist(x)
    assert 0 <= d <= 0.5
    assert abs(torus_dist(-x) - d) <= 1e-15 * max(1, abs(x))
    assert abs(torus_dist(x + 1) - d) <= 1e-15 * max(1, abs(x))


def test_angle_dist_range():
    xs = np.linspace(-20, 20, 1001)
    d = angle_dist(xs)
    assert d.min() >= 0 and d.max() <= math.pi + 1e-15


# Diophantine margin ------------------------------------------------------------------
def test_golden_margin_certifies_condition():
    assert dc_margin(2 * math.pi * GOLDEN, DCParams(0.1, 2), 100) > 1


def test_rational_dependence_gives_zero_margin():
    alpha = (2 * math.pi * 0.25, 2 * math.pi * 0.5)  # (2, -1) hits 2piZ exactly
    assert dc_margin(alpha, DCParams(1.0, 1.5), 5) == pytest.approx(0.0, abs=1e-12)


def test_margin_monotone_in_range():
    ms = [dc_margin(2 * math.pi * GOLDEN, DCParams(0.1, 1.5), k) for k in range(1, 60)]
    assert all(b <= a for a, b in zip(ms, ms[1:]))


def test_l1_ball_counts():
    assert l1_ball(1, 3).shape[0] == 6
    assert l1_ball(2, 2).shape[0] == 12
    assert l1_ball(2, 2, include_zero=True).shape[0] == 13


def test_phase_extended_precision_for_large_indices():
    # <n, alpha> for |n| ~ 1e6 keeps about 1e-9 absolute accuracy
    n = 832040  # Fibonacci: n * golden is close to an integer
    got = phase([n], 2 * math.pi * GOLDEN)
    frac = Fraction(GOLDEN) * n
    want = float(2 * math.pi * float(frac - round(frac)))
    assert abs(got - want) < 1e-9


# resonances -------------------------------------------------------------------
def test_exact_resonance_is_found():
    alpha = (2 * math.pi * GOLDEN,)
    rho = phase([7], alpha) / 2
    site = find_resonance(rho, alpha, 20, 1e-6)
    assert site is not None and site.k == (7,) and not site.multiple


def test_no_resonance_far_from_half_combinations():
    alpha = (2 * math.pi * GOLDEN,)
    ks = l1_ball(1, 30)
    ph = phase(ks, alpha)
    grid = np.linspace(0, math.pi, 2001)
    d = np.array([angle_dist(2 * r - ph).min() for r in grid])
    rho = grid[np.argmax(d)]
    eta = 0.9 * d.max()
    assert find_resonance(rho, alpha, 30, eta) is None


def test_multiple_resonances_flagged():
    alpha = (2 * math.pi * 0.5 + 1e-9, 2 * math.pi * 0.5 - 1e-9)  # non-Diophantine pair
    site = find_resonance(0.0, alpha, 4, 1e-6)
    assert site is not None and site.multiple and site.size == 2


def test_resonance_consistent_with_margin():
    alpha = 2 * math.pi * GOLDEN
    p = DCParams(0.1, 2.0)
    kmax = 40
    eta = 0.5 * p.gamma * dc_margin(alpha, p, 2 * kmax) / (2 * kmax) ** p.tau
    # rho = <m, alpha>/2 for m beyond the range: each 2rho - <k,alpha> = <m - k, alpha>
    rho = phase([2 * kmax + 1], alpha) / 2
    hit = find_resonance(rho, alpha, kmax, eta)
    assert hit is None


# return times -----------------------------------------------------------------
def test_golden_return_time_example():
    rt = best_return_time(cf_expand(GOLDEN, 20), 10)
    assert rt.q_nj == 8 and rt.in_window and rt.small
    assert rt.window == (10.5, 20.5)
    assert rt.q in (13,) and rt.kind == "single"


def test_return_time_at_denominator_boundary():
    cf = cf_expand(GOLDEN, 30)
    for nj in cf.q[3:15]:
        rt = best_return_time(cf, nj)
        assert rt.in_window and rt.small
        assert 21 * nj <= 20 * rt.q <= 41 * nj


def test_return_time_terminating_error():
    with pytest.raises(TerminatingExpansion):
        best_return_time(cf_expand(0.25, 5), 3)


def test_return_time_needs_depth():
    with pytest.raises(InsufficientDepth):
        best_return_time(cf_expand(GOLDEN, 3), 1000)
