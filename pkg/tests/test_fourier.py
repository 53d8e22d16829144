import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cantorspec.fourier import (FourierSeries, adjoint_action, dumps, evaluate, loads, product,
                                truncate, wiener_norm)


def random_series(rng, dim=1, n=6, radius=5, kind="scalar", real=False):
    keys = rng.integers(-radius, radius + 1, size=(n, dim))
    if kind == "scalar":
        vals = rng.normal(size=n) + 1j * rng.normal(size=n)
    else:
        vals = rng.normal(size=(n, 2, 2)) + 1j * rng.normal(size=(n, 2, 2))
    f = FourierSeries(keys, vals)
    if real:
        f = f + FourierSeries(-keys, np.conj(vals))
    return f


def unipotent_pair(f, g):
    """[[1, f], [0, 1]] [[1, 0], [g, 1]]: determinant one at every point."""
    one = FourierSeries.constant(1.0, f.dim)
    zero = FourierSeries.zeros(f.dim)
    up = FourierSeries.from_entries(one, f, zero, one)
    lo = FourierSeries.from_entries(one, zero, g, one)
    return up * lo


# norms and truncation ------------------------------------------------------------
def test_zero_series_norm():
    assert wiener_norm(FourierSeries.zeros(2), 3.0) == 0.0


@given(st.integers(-20, 20), st.integers(-20, 20), st.floats(0, 2), st.complex_numbers(max_magnitude=10))
def test_single_mode_norm(k1, k2, h, c):
    f = FourierSeries.from_dict({(k1, k2): c})
    assert wiener_norm(f, h) == pytest.approx(abs(c) * math.exp((abs(k1) + abs(k2)) * h), rel=1e-12)


def test_split_identity_and_partition():
    rng = np.random.default_rng(0)
    for _ in range(50):
        f = random_series(rng, dim=2, n=20, radius=8)
        n = rng.uniform(0.5, 12)
        lo, hi = truncate(f, n, "low"), truncate(f, n, "high")
        assert wiener_norm(f, 0.3) == pytest.approx(wiener_norm(lo, 0.3) + wiener_norm(hi, 0.3), rel=1e-13)
        back = lo + hi
        assert np.array_equal(back.keys, f.keys) and np.array_equal(back.vals, f.vals)


def test_low_truncation_of_high_mode_is_empty():
    assert len(truncate(FourierSeries.cosine((7,), 1.0), 7, "low")) == 0


def test_high_part_decay_bound():
    rng = np.random.default_rng(1)
    for _ in range(50):
        f = random_series(rng, dim=1, n=15, radius=20)
        n, h = rng.uniform(1, 15), rng.uniform(0.05, 1.0)
        hp = h * rng.uniform(0, 1)
        assert wiener_norm(truncate(f, n, "high"), hp) <= wiener_norm(f, h) * math.exp(-n * (h - hp)) * (1 + 1e-12)


def test_norm_monotone_in_width():
    rng = np.random.default_rng(2)
    f = random_series(rng, dim=2, n=30)
    ws = [wiener_norm(f, h) for h in np.linspace(0, 1, 11)]
    assert all(a <= b for a, b in zip(ws, ws[1:]))


# products ------------------------------------------------------------------------
def test_product_with_one():
    rng = np.random.default_rng(3)
    f = random_series(rng, dim=2)
    g, tail = product(f, FourierSeries.constant(1.0, 2), 100)
    assert tail == 0.0
    assert np.allclose(g.vals, f.vals, atol=0) and np.array_equal(g.keys, f.keys)


def test_cosine_square():
    c = FourierSeries.cosine((3,), 1.0)
    sq, _ = product(c, c)
    want = FourierSeries.constant(0.5, 1) + FourierSeries.cosine((6,), 0.5)
    assert np.array_equal(sq.keys, want.keys) and np.allclose(sq.vals, want.vals, atol=1e-16)


def test_product_pointwise_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        f, g = random_series(rng, dim=2), random_series(rng, dim=2)
        fg, tail = product(f, g, 40)
        assert tail == 0.0
        th = rng.uniform(0, 2 * np.pi, size=(100, 2))
        assert np.abs(evaluate(fg, th) - evaluate(f, th) * evaluate(g, th)).max() < 1e-10


def test_product_tail_reports_dropped_mass():
    f = FourierSeries.cosine((3,), 1.0)
    fg, tail = product(f, f, 4, h=0.2)
    assert len(fg) == 1
    assert tail == pytest.approx(0.5 * math.exp(6 * 0.2))


def test_submultiplicativity():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        f = random_series(rng, n=4, kind="matrix")
        g = random_series(rng, n=4, kind="matrix")
        h = 0.3
        assert wiener_norm(product(f, g)[0], h) <= wiener_norm(f, h) * wiener_norm(g, h) * (1 + 1e-12)


def test_incompatible_kinds_rejected():
    f = FourierSeries.zeros(1)
    g = FourierSeries.zeros(2)
    with pytest.raises(ValueError):
        product(f, g)


# evaluation ------------------------------------------------------------------------
def test_potential_at_origin():
    s, k0 = 0.3, (40,)
    v = FourierSeries.cosine(k0, math.exp(-40 ** s))
    assert evaluate(v, [0.0]).real == pytest.approx(math.exp(-40 ** s), rel=1e-14)


def test_zero_series_evaluates_to_zero():
    th = np.random.default_rng(6).uniform(size=(10, 3))
    assert np.all(evaluate(FourierSeries.zeros(3), th) == 0)


def test_real_symmetric_series_is_real():
    rng = np.random.default_rng(7)
    f = random_series(rng, dim=2, real=True)
    assert np.abs(evaluate(f, rng.uniform(0, 7, (50, 2))).imag).max() < 1e-12


def test_parseval():
    rng = np.random.default_rng(8)
    f = random_series(rng, dim=1, n=10, radius=30)
    th = 2 * np.pi * np.arange(4096)[:, None] / 4096
    mean = np.mean(np.abs(evaluate(f, th)) ** 2)
    assert mean == pytest.approx(np.sum(np.abs(f.vals) ** 2), rel=1e-8)


# adjoint action ---------------------------------------------------------------------
def test_adjoint_by_identity():
    rng = np.random.default_rng(9)
    w = random_series(rng, kind="matrix")
    out, rep = adjoint_action(FourierSeries.constant(np.eye(2), 1), w)
    assert np.allclose(out.vals, w.vals) and rep.bound_ok


def test_adjoint_by_constant():
    rng = np.random.default_rng(10)
    w = random_series(rng, kind="matrix")
    p = np.array([[2.0, 1.0], [1.0, 1.0]])
    out, _ = adjoint_action(FourierSeries.constant(p, 1), w)
    want = w.conjugate_by(p)
    assert np.abs(out.vals - want.vals).max() < 1e-13


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_adjoint_bound_and_coefficient_persistence(seed):
    rng = np.random.default_rng(seed)
    h = 0.2
    f, g = random_series(rng, n=3, radius=4), random_series(rng, n=3, radius=4)
    b = unipotent_pair(f, g)
    scale = 0.3 / wiener_norm(b - np.eye(2), h)
    b = unipotent_pair(f * scale, g * scale)
    bmi = wiener_norm(b - np.eye(2), h)
    if bmi > 0.5:  # second order terms can overshoot the target
        return
    w = random_series(rng, n=5, radius=6, kind="matrix")
    out, rep = adjoint_action(b, w, h=h)
    assert rep.bound_ok
    wn = wiener_norm(w, h)
    for k, v in zip(out.keys, out.vals):
        lhs = abs(v[0, 1])
        rhs = abs(w.coeff(k)[0, 1]) - 4 * bmi * wn * math.exp(-abs(k).sum() * h)
        assert lhs >= rhs - 1e-12


def test_serialisation_round_trip():
    rng = np.random.default_rng(11)
    for kind in ("scalar", "matrix"):
        f = random_series(rng, dim=2, kind=kind)
        g = loads(dumps(f))
        assert np.array_equal(g.keys, f.keys) and np.array_equal(g.vals, f.vals)
