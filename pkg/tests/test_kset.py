import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cantorspec.diophantine import DCParams
from cantorspec.fourier import wiener_norm
from cantorspec.kset import (GevreyParams, KLabel, KSet, build_kset, covering_radius, ids_label_values,
                             n_star, scales, validate_kset)

GOLDEN = (math.sqrt(5) - 1) / 2
ALPHA = (2 * math.pi * GOLDEN,)


def test_params_ranges():
    with pytest.raises(ValueError):
        GevreyParams(0.5, 0.1)
    with pytest.raises(ValueError):
        GevreyParams(0.3, 0.0)
    with pytest.raises(ValueError):
        GevreyParams(0.3, 1.5)


def test_n_star_dominant_term():
    ns = n_star(GevreyParams(0.45, 0.1), ALPHA, DCParams(0.1, 2))
    assert ns.dominant == "e^(100/s^2)"
    assert ns.log_value == pytest.approx(100 / 0.45 ** 2) and ns.log_value == pytest.approx(493.827, abs=1e-3)
    assert math.log(ns.value) == pytest.approx(ns.log_value, rel=1e-12) and ns.theorem_constants_satisfied
    big = n_star(GevreyParams(0.1, 0.1), ALPHA, DCParams(0.1, 2))
    assert big.value is None  # e^{10^4} is only kept in log space


def test_n_star_small_s():
    ns = n_star(GevreyParams(0.1, 0.1), ALPHA, DCParams(0.1, 2))
    assert ns.dominant == "e^(100/s^2)" and ns.log_value == pytest.approx(1e4)
    assert ns.terms["200^(1/(1-2s))"] == pytest.approx(math.log(200) / 0.8)


def test_n_star_toy_override_is_flagged():
    ns = n_star(GevreyParams(0.45, 0.1), ALPHA, DCParams(0.1, 2), override=50)
    assert ns.value == 50 and ns.mode == "toy" and not ns.theorem_constants_satisfied


def test_exact_scales_in_log_space():
    sc = scales(2, 0.45, 4, "exact")
    assert sc.log_n[0] / math.log(2) == pytest.approx(12 / 0.45)
    for chk in sc.ratio_checks():
        assert chk["ratio_is_base"]


def test_toy_default_scales():
    sc = scales(3, 0.3, 4)
    assert sc.values == (3, 9, 27, 81)


def test_toy_scales_must_increase():
    with pytest.raises(ValueError):
        scales(3, 0.3, 3, "toy", [5, 5, 7])


def test_ratio_bound_reported():
    sc = scales(3, 0.3, 3, "exact")
    assert all(not c["ratio_ge_200^(1/s)"] for c in sc.ratio_checks())
    big = scales(10 ** 8, 0.3, 3, "exact")
    assert all(c["ratio_ge_200^(1/s)"] for c in big.ratio_checks())


def test_single_scale_gives_one_label():
    sc = scales(5, 0.3, 1)
    ks = build_kset(ALPHA, sc, GevreyParams(0.3, 0.1), 1e-3)
    assert len(ks.labels) == 1
    assert ks.covering_radius == pytest.approx(covering_radius(ks.ids_labels().tolist()
                                                               + (1 - ks.ids_labels()).tolist()))


def test_toy_net_covers_unit_interval():
    sc = scales(3, 0.3, 8, "toy", [3 * 3 ** j for j in range(1, 9)])
    ks = build_kset(ALPHA, sc, GevreyParams(0.3, 0.1), 0.15)
    pts = np.concatenate([ks.ids_labels(), 1 - ks.ids_labels()])
    # independent covering oracle on a fine grid
    grid = np.linspace(0, 1, 100_001)
    d = np.abs(grid[:, None] - pts[None, :])
    d = np.minimum(d, 1 - d).min(axis=1)
    assert d.max() <= 0.15 + 1e-5
    assert ks.covering_radius <= 0.15
    assert validate_kset(ks).passed


def test_covering_radius_monotone():
    sc = scales(3, 0.3, 8, "toy", [3 * 3 ** j for j in range(1, 9)])
    ks = build_kset(ALPHA, sc, GevreyParams(0.3, 0.1), 1e-6)
    h = ks.radius_history
    assert all(b <= a + 1e-15 for a, b in zip(h, h[1:]))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(2, 6))
def test_build_always_validates(turns, base):
    sc = scales(base, 0.3, 6)
    ks = build_kset((2 * math.pi * turns,), sc, GevreyParams(0.3, 0.1), 0.05)
    assert validate_kset(ks).passed


def test_two_labels_in_double_annulus_fail():
    sc = scales(3, 0.3, 4)
    ks = KSet([KLabel(1, (3,), 1.0), KLabel(2, (9,), 1.0)], GevreyParams(0.3, 0.1), sc, ALPHA)
    rep = validate_kset(ks)
    ok, bad = rep.checks["one_per_double_annulus"]
    assert not ok and [[3], [9]] in bad


def test_label_below_floor_fails():
    sc = scales(3, 0.3, 4)
    ks = KSet([KLabel(1, (2,), 1.0)], GevreyParams(0.3, 0.1), sc, ALPHA)
    rep = validate_kset(ks)
    assert not rep.checks["floor"][0] and not rep.checks["annulus_membership"][0]


def test_vacancy_rule():
    sc = scales(10, 0.3, 3)  # annulus 1 = [10, 30), vacancy [21, 30)
    ks = KSet([KLabel(1, (25,), 1.0)], GevreyParams(0.3, 0.1), sc, ALPHA)
    assert not validate_kset(ks).checks["vacancy_21/10"][0]


def test_coefficient_identities():
    s = 0.3
    sc = scales(3, s, 8, "toy", [3 * 3 ** j for j in range(1, 9)])
    ks = build_kset(ALPHA, sc, GevreyParams(s, 0.1), 0.05)
    for chk in ks.coefficient_checks():
        assert chk["coeff_ok"] and chk["width_ok"]
    for lab in ks.labels:
        v = ks.block(lab.j)
        assert abs(v.coeff(lab.k)) == pytest.approx(0.5 * math.exp(-lab.size ** s), rel=1e-15)
        assert wiener_norm(v, sc.width(lab.j)) <= math.exp(-0.9 * lab.size ** s)


def test_json_round_trip():
    sc = scales(3, 0.3, 6)
    ks = build_kset(ALPHA, sc, GevreyParams(0.3, 0.1), 0.05)
    data = json.loads(ks.dumps())
    assert set(data) >= {"s", "lambda", "mode", "scales", "labels"}
    back = KSet.from_json(data)
    assert [(l.j, l.k, l.coeff) for l in back.labels] == [(l.j, l.k, l.coeff) for l in ks.labels]


def test_label_values():
    x = ids_label_values([(1,), (2,)], ALPHA)
    assert x[0] == pytest.approx(GOLDEN, abs=1e-15)
    assert x[1] == pytest.approx((2 * GOLDEN) % 1, abs=1e-15)
