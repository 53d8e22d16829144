import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cantorspec import kam
from cantorspec.algebra2 import exp_sl2, op_norm
from cantorspec.cocycle import SchrodingerCocycle, rotation_number
from cantorspec.diophantine import phase, torus_dist
from cantorspec.fourier import FourierSeries, evaluate, wiener_norm
from cantorspec.kset import GevreyParams, KLabel, KSet, scales

GOLDEN = (math.sqrt(5) - 1) / 2
ALPHA = (2 * math.pi * GOLDEN,)
EYE = FourierSeries.constant(np.eye(2), 1)


def su11_series(rng, keys, scale):
    """Random su(1,1)-valued series on the modes +-keys."""
    coeffs = {}
    for k in keys:
        u = complex(rng.normal(), rng.normal()) * scale
        w_plus = complex(rng.normal(), rng.normal()) * scale
        w_minus = complex(rng.normal(), rng.normal()) * scale
        coeffs[(k,)] = np.array([[1j * u, w_plus], [np.conj(w_minus), -1j * u]])
        coeffs[(-k,)] = np.array([[1j * np.conj(u), w_minus], [np.conj(w_plus), -1j * np.conj(u)]])
    return FourierSeries.from_dict(coeffs)


def is_su11_pointwise(f, rng):
    v = evaluate(f, rng.uniform(0, 2 * np.pi, (20, 1)))
    return (np.abs(v[:, 1, 1] + v[:, 0, 0]).max() < 1e-14 and np.abs(v[:, 0, 0].real).max() < 1e-14
            and np.abs(v[:, 1, 0] - np.conj(v[:, 0, 1])).max() < 1e-14)


def single_mode(k, eps):
    b = 0.5 * eps * (1 + 1j)
    return FourierSeries(np.array([[k], [-k]]), np.array([
        [[1j * eps / 4, b], [np.conj(b), -1j * eps / 4]],
        [[-1j * eps / 4, np.conj(b)], [b, 1j * eps / 4]]]))


def mode_phase(k):
    return float(np.squeeze(phase(np.atleast_2d(k), ALPHA)))


def resonant_energy(k0):
    return 2 * math.cos((k0 * ALPHA[0] % (2 * math.pi)) / 2)


TOY_PARAMS = kam.KamParams(eta=1e-4, gate_max=1e-2, gate_power=0, max_steps=5)


def toy_kset(lam=0.05, s=0.45):
    sc = scales(40, s, 5)
    k0 = max(range(40, 84), key=lambda k: min(torus_dist(m * k * GOLDEN) for m in range(1, 7)))
    return KSet([KLabel(1, (k0,), math.exp(-k0 ** s))], GevreyParams(s, lam), sc, ALPHA), k0


def test_random_generator_is_su11():
    rng = np.random.default_rng(0)
    assert is_su11_pointwise(su11_series(rng, [1, 4], 1.0), rng)


# split ----------------------------------------------------------------------------------
def test_split_all_nonresonant_keeps_only_mean():
    a = kam.schrodinger_constant(0.7)
    f = single_mode(3, 1e-3) + FourierSeries.constant(np.array([[0.1j, 0.2], [0.2, -0.1j]]), 1)
    sp = kam.split_resonant(f, a, 1e-3, 10, ALPHA)
    assert sp.resonant_site is None
    assert np.abs(sp.re.coeff((3,))).max() < 1e-17 and np.abs(sp.re.coeff((-3,))).max() < 1e-17
    assert np.allclose(sp.re.coeff((0,)), f.coeff((0,)), atol=1e-17)


def test_split_exact_resonance_goes_to_resonant_part():
    k0 = 7
    rho = mode_phase([k0]) / 2
    a = np.diag([np.exp(1j * rho), np.exp(-1j * rho)])
    f = single_mode(k0, 1e-3)
    sp = kam.split_resonant(f, a, 1e-4, 20, ALPHA)
    assert sp.resonant_site is not None and sp.resonant_site.k == (k0,)
    assert sp.re.coeff((k0,))[0, 1] == f.coeff((k0,))[0, 1]
    assert sp.nre.coeff((k0,))[0, 1] == 0


def test_split_partition():
    rng = np.random.default_rng(1)
    for _ in range(50):
        f = su11_series(rng, rng.integers(1, 30, 4).tolist(), 1e-2)
        a = kam.schrodinger_constant(rng.uniform(-1.9, 1.9))
        sp = kam.split_resonant(f, a, 0.05, 25, ALPHA)
        diff = sp.nre + sp.re - f
        assert wiener_norm(diff) <= 1e-15 * wiener_norm(f)


def test_split_flags_multiple_sites():
    alpha = (2 * math.pi * 0.5 + 1e-9, 2 * math.pi * 0.5 - 1e-9)
    a = np.diag([1j, -1j])  # rho = pi/2
    f = FourierSeries.from_dict({(1, 0): np.array([[0, 1e-3], [0, 0]])})
    sp = kam.split_resonant(f, a, 1e-6, 5, alpha)
    assert sp.multiple


# homological equation ---------------------------------------------------------------
def test_zero_right_hand_side():
    y = kam.solve_homological(kam.schrodinger_constant(0.3), FourierSeries.zeros(1, "matrix"), ALPHA)
    assert len(y) == 0


def test_single_mode_closed_form():
    rho = 0.9
    a = np.diag([np.exp(1j * rho), np.exp(-1j * rho)])
    f = single_mode(5, 1e-4)
    y = kam.solve_homological(a, f, ALPHA)
    ph = mode_phase([5])
    want01 = f.coeff((5,))[0, 1] / (1 - np.exp(1j * (ph - 2 * rho)))
    want00 = f.coeff((5,))[0, 0] / (1 - np.exp(1j * ph))
    assert y.coeff((5,))[0, 1] == pytest.approx(want01, rel=1e-13)
    assert y.coeff((5,))[0, 0] == pytest.approx(want00, rel=1e-13)
    assert kam.homological_residual(a, f, y, ALPHA) < 1e-12 * wiener_norm(f)


def test_identity_constant_matches_scalar_solve():
    rng = np.random.default_rng(2)
    f = su11_series(rng, [2, 5], 1e-3)
    y = kam.solve_homological(np.eye(2), f, ALPHA)
    for k, v in zip(f.keys, f.vals):
        div = 1 - np.exp(1j * mode_phase(k))
        assert np.abs(y.coeff(k) - v / div).max() < 1e-15


def test_random_nonresonant_instances_residual_and_bound():
    rng = np.random.default_rng(3)
    h, eta = 0.1, 0.05
    for _ in range(100):
        a = kam.schrodinger_constant(rng.uniform(-1.8, 1.8))
        f = su11_series(rng, rng.integers(1, 20, 3).tolist(), 1e-3)
        sp = kam.split_resonant(f, a, eta, 25, ALPHA)
        y = kam.solve_homological(a, sp.nre, ALPHA)
        chk = kam.homological_check(a, sp.nre, y, ALPHA, h, eta)
        if wiener_norm(sp.nre, h) == 0:
            continue
        assert chk["residual"] <= 1e-10 * wiener_norm(sp.nre, h)
        assert chk["bound_ok"]


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.9, 1.9), st.integers(1, 40), st.floats(1e-8, 1e-2))
def test_solve_substitutes_back(energy, k, eps):
    a = kam.schrodinger_constant(energy)
    f = single_mode(k, eps)
    sp = kam.split_resonant(f, a, 1e-3, 50, ALPHA)
    y = kam.solve_homological(a, sp.nre, ALPHA)
    assert kam.homological_residual(a, sp.nre, y, ALPHA) <= 1e-10 * eps


def test_resonant_mode_leak_detected():
    k0 = 7
    rho = mode_phase([k0]) / 2
    a = np.diag([np.exp(1j * rho), np.exp(-1j * rho)])
    with pytest.raises(kam.ResonantLeak):
        kam.solve_homological(a, single_mode(k0, 1e-3), ALPHA)


def test_nonelliptic_constant_uses_mode_solve():
    a = kam.schrodinger_constant(2.5)
    f = single_mode(3, 1e-3)
    y = kam.solve_homological(a, f, ALPHA)
    assert kam.homological_residual(a, f, y, ALPHA) < 1e-15


# series exponential and logarithm ---------------------------------------------------
def test_series_exp_matches_pointwise():
    rng = np.random.default_rng(4)
    y = su11_series(rng, [1, 3], 0.05)
    e = kam.series_exp(y)
    th = rng.uniform(0, 2 * np.pi, (30, 1))
    assert np.abs(evaluate(e, th) - exp_sl2(evaluate(y, th))).max() < 1e-14


def test_log_of_product_pointwise():
    rng = np.random.default_rng(5)
    ys = [su11_series(rng, [1, 2], 0.02) for _ in range(3)]
    lin = ys[0] + ys[1] + ys[2]
    ops = kam.SeriesOps(None)
    lg = kam.log_of_product(ys, lin, ops)
    th = rng.uniform(0, 2 * np.pi, (30, 1))
    prod = np.array([exp_sl2(evaluate(ys[0], t[None]))[0] @ exp_sl2(evaluate(ys[1], t[None]))[0]
                     @ exp_sl2(evaluate(ys[2], t[None]))[0] for t in th])
    assert np.abs(exp_sl2(evaluate(lg, th)) - prod).max() < 1e-14


# steps -------------------------------------------------------------------------------
def test_trivial_step():
    a = kam.schrodinger_constant(0.7)
    st0 = kam.KamState(ALPHA, a, FourierSeries.zeros(1, "matrix"), EYE, 1, 0.1, 0.075, (0,))
    new, rep = kam.kam_step(st0, TOY_PARAMS)
    assert np.array_equal(new.a, a) and rep.all_pass and rep.eps == 0


def test_nonresonant_step_is_quadratic():
    a = kam.schrodinger_constant(0.7)
    f = single_mode(3, 1e-6)
    st0 = kam.KamState(ALPHA, a, f, EYE, 1, 0.1, 0.075, (0,))
    new, rep = kam.kam_step(st0, kam.KamParams(eta=1e-3, gate_max=1e-2, gate_power=0))
    assert rep.case == "non-resonant"
    assert rep.eps_out <= 4 * rep.eps ** 2
    assert rep.residual <= 1e-8 * (1 + float(op_norm(a)))
    assert rep.all_pass, [c for c in rep.checks if not c.passed]


def test_engineered_resonance_step():
    k0 = 7
    a = kam.schrodinger_constant(resonant_energy(k0))
    f = FourierSeries(np.array([[k0], [-k0]]), single_mode(3, 1e-6).vals) * 100
    st0 = kam.KamState(ALPHA, a, f, EYE, 1, 0.1, 0.075, (0,))
    new, rep = kam.kam_step(st0, kam.KamParams(eta=1e-3, gate_max=1e-2, gate_power=0))
    assert rep.case == "resonant" and tuple(abs(x) for x in rep.site) == (k0,)
    assert rep.all_pass, [c for c in rep.checks if not c.passed]
    assert np.array_equal(np.asarray(new.k_tilde), np.asarray(st0.k_tilde) + np.asarray(rep.site))
    shift = kam.resonant_rotation_shift(st0, new, 20000)
    assert shift["error"] <= 2e-4


def test_gate_rejects_large_tail():
    a = kam.schrodinger_constant(0.7)
    st0 = kam.KamState(ALPHA, a, single_mode(3, 0.5), EYE, 1, 0.1, 0.075, (0,))
    with pytest.raises(kam.StepRejected) as err:
        kam.kam_step(st0, kam.KamParams())
    assert err.value.margin > 1  # eps over the gate


def test_default_gate_formula():
    a = kam.schrodinger_constant(0.7)
    p = kam.KamParams()
    want = min(1e-4, (0.1 - 0.075) ** 4 / (1e3 * float(op_norm(a)) ** 4))
    assert kam.smallness_gate(a, 0.1, 0.075, p) == pytest.approx(want)


# iteration --------------------------------------------------------------------------
def test_zero_coupling_returns_at_entry():
    ks, _ = toy_kset()
    run = kam.kam_iterate(ALPHA, 0.0, 0.4, ks, TOY_PARAMS)
    assert run.stop_reason == "zero tail at entry" and not run.reports
    assert np.allclose(run.state.a, kam.schrodinger_constant(0.4))


def test_toy_run_contracts_superquadratically():
    ks, k0 = toy_kset()
    run = kam.kam_iterate(ALPHA, 0.05, resonant_energy(k0), ks, TOY_PARAMS)
    tails = run.tails
    assert len(tails) >= 3
    for x, y in zip(tails, tails[1:]):
        assert y <= x ** 1.5
    assert all(r.residual <= 1e-8 for r in run.reports)
    assert run.reports[0].case == "resonant"
    for line in run.trace_lines().splitlines():
        json.loads(line)


@pytest.mark.parametrize("energy", [0.7, 1.3, -0.9])
def test_free_regime_rotation_matches_cocycle(energy):
    ks, _ = toy_kset()
    run = kam.kam_iterate(ALPHA, 0.05, energy, ks, TOY_PARAMS)
    assert all(r.case == "non-resonant" for r in run.reports)
    c = SchrodingerCocycle.make(ALPHA, 0.05, ks.potential(), energy)
    assert run.predicted_rotation() == pytest.approx(rotation_number(c, 40000).value, abs=1e-4)


def test_grid_factorization_matches_nilpotent_form():
    v = FourierSeries.cosine((3,), 0.2)
    exp_, dev = kam.grid_log_factorization(0.7, 0.1, v)
    assert dev < 1e-12


def test_nilpotent_factorization_is_exact():
    # A_E (I + lam v W_E) is the Schrödinger matrix in the disc frame
    e, lam, x = 0.7, 0.1, 0.3
    s = kam.schrodinger_constant(e) @ (np.eye(2) + lam * x * kam.W_E)
    real = kam.to_real(s)
    assert np.allclose(real, [[e - lam * x, -1], [1, 0]], atol=1e-15)
    assert np.allclose(kam.schrodinger_constant(e) @ exp_sl2(lam * x * kam.W_E), s, atol=1e-15)


def test_diagnostics_at_identity():
    d = kam.diagnostics(EYE, (0,), 0.1)
    assert set(d) == {"xi", "M", "m"}
    assert d["xi"] > 0 and d["M"] >= d["xi"] and d["m"] == 0
