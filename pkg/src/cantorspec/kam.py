"""KAM reducibility for quasi-periodic SU(1,1) cocycles.

Everything here lives in the disc frame: the Schrödinger matrix
``A_E = [[E, -1], [1, 0]]`` becomes ``M A_E M^{-1}`` and the potential enters
through the nilpotent direction ``W_E = M [[0, 0], [1, 0]] M^{-1}``, so that
``A_E (I + lam v W) = S_E`` holds exactly.

A step conjugates ``(alpha, A e^{F})`` into ``(alpha, A_+ e^{F_+})`` with the
convention ``B(theta + alpha)^{-1} A e^{F(theta)} B(theta) = A_+ e^{F_+(theta)}``.
Exponentials and logarithms of series are computed so that the first-order
part of the new exponent is inserted exactly and only the genuinely
nonlinear remainder goes through products; this keeps tails of size 1e-30
meaningful in double precision.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .algebra2 import (DISC, P_DIAMOND, P_DIAMOND_INV, Mat2, NotEllipticError,
                       diagonalize_elliptic, exp_sl2, inv2, log_sl2, op_norm)
from .diophantine import TWO_PI_LD, ResonanceSite, angle_dist, find_resonance, phase
from .fourier import FourierSeries, product, wiener_norm
from .kset import KSet

LEAK_TOL = 1e-14
EXP_TERMS = 12
LOG_ORDER = 8
COND_MAX = 1e6

W_TILDE = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
W_E = P_DIAMOND @ W_TILDE @ P_DIAMOND_INV


def schrodinger_constant(energy: float) -> np.ndarray:
    """``A_E`` in the disc frame."""
    a = np.array([[energy, -1.0], [1.0, 0.0]], dtype=complex)
    return P_DIAMOND @ a @ P_DIAMOND_INV


def to_real(m) -> np.ndarray:
    return P_DIAMOND_INV @ np.asarray(m) @ P_DIAMOND


class StepRejected(ValueError):
    def __init__(self, message: str, margin: float, report: dict | None = None):
        super().__init__(f"step rejected: {message} (margin {margin:.3e})")
        self.margin = margin
        self.report = report or {}


class ResonantLeak(ArithmeticError):
    pass


# power-series coefficients ---------------------------------------------
def _ps_mul(a, b, order):
    out = [Fraction(0)] * (order + 1)
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b[: order + 1 - i]):
            out[i + j] += x * y
    return out


def _ps_compose(coeffs, u, order):
    """``sum_n coeffs[n] u^n`` for a series ``u`` without constant term."""
    out = [Fraction(0)] * (order + 1)
    power = [Fraction(1)] + [Fraction(0)] * order
    for c in coeffs[: order + 1]:
        out = [o + c * p for o, p in zip(out, power)]
        power = _ps_mul(power, u, order)
    return out


def _log_coefficients(order: int = LOG_ORDER) -> list[float]:
    """``c_k`` with ``mu / sinh mu = 1 + sum_{k>=1} c_k t^k`` where ``cosh mu = 1 + t``."""
    cosh_m1 = [Fraction(0)] + [Fraction(1, math.factorial(2 * n)) for n in range(1, order + 1)]
    sinhc = [Fraction(1, math.factorial(2 * n + 1)) for n in range(order + 1)]
    # invert t = cosh(sqrt u) - 1 for u(t) by fixed-point iteration
    u = [Fraction(0), Fraction(2)] + [Fraction(0)] * (order - 1)
    for _ in range(order):
        t_of_u = _ps_compose(cosh_m1, u, order)
        u = [x - 2 * (y - (1 if k == 1 else 0)) for k, (x, y) in enumerate(zip(u, t_of_u))]
    s = _ps_compose(sinhc, u, order)
    inv = [Fraction(1)] + [Fraction(0)] * order
    for k in range(1, order + 1):
        inv[k] = -sum(s[i] * inv[k - i] for i in range(1, k + 1))
    return [float(x) for x in inv[1:]]


LOG_COEFFS = _log_coefficients()
_C_EVEN = [1.0 / math.factorial(2 * n) for n in range(EXP_TERMS // 2)]
_C_ODD = [1.0 / math.factorial(2 * n + 1) for n in range(EXP_TERMS // 2)]


# series exponential / logarithm ------------------------------------------
class SeriesOps:
    """Truncated products with an accumulated tail estimate."""

    def __init__(self, cap: float | None, h: float = 0.0):
        self.cap = cap
        self.h = h
        self.tail = 0.0

    def mul(self, f: FourierSeries, g: FourierSeries) -> FourierSeries:
        out, t = product(f, g, self.cap, self.h)
        self.tail += t
        return out


def _zeros_like(f: FourierSeries) -> FourierSeries:
    return FourierSeries.zeros(f.dim, "matrix")


def exp_parts(y: FourierSeries, ops: SeriesOps) -> tuple[FourierSeries, FourierSeries]:
    """``(T, R)`` with ``e^Y = I + T`` and ``R = T - Y`` for traceless ``Y``.

    Uses ``e^Y = C(q) I + S(q) Y`` with ``q = -det Y`` and 12 terms in total.
    """
    if len(y) == 0:
        z = _zeros_like(y)
        return z, z
    q = -(ops.mul(y.entry(0, 0), y.entry(1, 1)) - ops.mul(y.entry(0, 1), y.entry(1, 0)))
    c = q * _C_EVEN[1]
    s = q * _C_ODD[1]
    qn = q
    for n in range(2, EXP_TERMS // 2):
        qn = ops.mul(qn, q)
        c = c + qn * _C_EVEN[n]
        s = s + qn * _C_ODD[n]
    r = ops.mul(s, y) + c
    ny = wiener_norm(y, ops.h)
    if ny < EXP_TERMS + 1:
        ops.tail += ny ** EXP_TERMS / math.factorial(EXP_TERMS) / (1 - ny / (EXP_TERMS + 1))
    else:
        ops.tail = math.inf
    return y + r, r


def series_exp(y: FourierSeries, ops: SeriesOps | None = None) -> FourierSeries:
    ops = ops or SeriesOps(None)
    t, _ = exp_parts(y, ops)
    return t + np.eye(2)


def log_of_product(factors: list[FourierSeries], linear: FourierSeries,
                   ops: SeriesOps) -> FourierSeries:
    """``log(e^{S_1} ... e^{S_m})`` where ``linear`` equals ``sum S_i`` exactly.

    The product minus the identity is ``Q = L + H`` with ``H`` built only from
    second and higher order pieces; then ``log(I + Q) = f(t)(Q - tI)`` with
    ``t = tr Q / 2`` and ``f = mu / sinh mu``, ``cosh mu = 1 + t``.
    """
    q = h = None
    for s in factors:
        if len(s) == 0:
            continue
        t, r = exp_parts(s, ops)
        if q is None:
            q, h = t, r
        else:
            qt = ops.mul(q, t)
            h = h + r + qt
            q = q + t + qt
    if q is None:
        return linear
    qx = linear + h
    tr = qx.trace() * 0.5
    qmt = qx - tr
    tk = tr
    acc = tr * LOG_COEFFS[0]
    for c in LOG_COEFFS[1:]:
        if len(tk) == 0:
            break
        tk = ops.mul(tk, tr)
        acc = acc + tk * c
    return (linear + (h - tr) + ops.mul(acc, qmt)).traceless_part()


# resonance split and homological equation ----------------------------------
@dataclass(frozen=True)
class Eigenframe:
    p: np.ndarray
    pinv: np.ndarray
    rho: float
    cond: float

    @property
    def diag(self) -> np.ndarray:
        return np.diag([np.exp(1j * self.rho), np.exp(-1j * self.rho)])


def eigenframe(a, cond_max: float = COND_MAX) -> Eigenframe | None:
    """The SU(1,1) diagonalization of an elliptic ``a`` if it is well conditioned."""
    a = np.asarray(a, dtype=complex)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dg = diagonalize_elliptic(Mat2(a, DISC))
    except NotEllipticError:
        return None
    p = np.asarray(dg.p)
    pinv = inv2(p)
    cond = float(op_norm(p) * op_norm(pinv))
    if not np.isfinite(cond) or cond > cond_max:
        return None
    return Eigenframe(p, pinv, float(dg.rho), cond)


@dataclass(frozen=True)
class ResonanceSplit:
    nre: FourierSeries
    re: FourierSeries
    resonant_site: ResonanceSite | None
    eta: float
    n_bound: float
    frame: Eigenframe | None = None
    g_nre: FourierSeries | None = None  # parts in the working frame; sum exactly to g
    g_re: FourierSeries | None = None

    @property
    def multiple(self) -> bool:
        return self.resonant_site is not None and self.resonant_site.multiple


def _integer_keys(f: FourierSeries) -> FourierSeries:
    f = f.reduced()
    if f.denom != 1:
        raise ValueError("series with fractional frequencies cannot be split")
    return f


def split_resonant(f: FourierSeries, a, eta: float, n_bound: float, alpha,
                   search_bound: float | None = None) -> ResonanceSplit:
    """Entry-wise split of ``f`` into eliminable and resonant parts.

    For elliptic ``a`` the split is made in its eigenframe: entry (p, q) of
    mode ``k`` is eliminable when ``0 < |k| < n_bound``, ``|<k,alpha>| >= eta``
    and, off the diagonal, ``|<k,alpha> -+ 2 rho| >= eta``.  Otherwise only the
    first condition is used, mode by mode.
    """
    f = _integer_keys(f)
    a = np.asarray(a, dtype=complex)
    fr = eigenframe(a)
    g = f.conjugate_by(fr.p, fr.pinv) if fr is not None else f
    if len(g) == 0:
        z = FourierSeries.zeros(f.dim, "matrix")
        return ResonanceSplit(z, z, None, eta, n_bound, fr, z, z)
    ph = np.atleast_1d(phase(g.keys, alpha))
    size = g.abs_k()
    low = (size > 0) & (size < n_bound) & (np.atleast_1d(angle_dist(ph)) >= eta)
    mask = np.zeros(g.vals.shape, dtype=bool)
    mask[:, 0, 0] = mask[:, 1, 1] = low
    if fr is not None:
        mask[:, 0, 1] = low & (np.atleast_1d(angle_dist(ph - 2 * fr.rho)) >= eta)
        mask[:, 1, 0] = low & (np.atleast_1d(angle_dist(ph + 2 * fr.rho)) >= eta)
    else:
        mask[:, 0, 1] = mask[:, 1, 0] = low
    g_nre = FourierSeries(g.keys, np.where(mask, g.vals, 0), 1)
    g_re = FourierSeries(g.keys, np.where(mask, 0, g.vals), 1)
    if fr is not None:
        nre = g_nre.conjugate_by(fr.pinv, fr.p)
        re = f - nre
        bound = n_bound if search_bound is None else min(n_bound, search_bound)
        site = find_resonance(fr.rho, alpha, bound, eta)
    else:
        nre, re, site = g_nre, g_re, None
    return ResonanceSplit(nre, re, site, eta, n_bound, fr, g_nre, g_re)


def _solve_diagonal(g: FourierSeries, rho: float, alpha) -> FourierSeries:
    """Solve ``Z - D^{-1} Z(. + alpha) D = G`` for ``D = diag(e^{i rho}, e^{-i rho})``."""
    if len(g) == 0:
        return g
    ph = np.atleast_1d(phase(g.keys, alpha))
    lam = np.array([np.exp(1j * rho), np.exp(-1j * rho)])
    ratio = lam[None, :] / lam[:, None]  # lam_q / lam_p
    div = 1.0 - np.exp(1j * ph)[:, None, None] * ratio[None]
    live = g.vals != 0
    if np.any(live & (np.abs(div) < LEAK_TOL)):
        raise ResonantLeak("resonant mode leaked into the eliminable part")
    out = np.where(live, g.vals / np.where(live, div, 1.0), 0)
    return FourierSeries(g.keys, out, g.denom, True)


def _solve_kron(a: np.ndarray, f: FourierSeries, alpha) -> FourierSeries:
    """Mode-wise 4x4 solve of ``Y - e^{i<k,alpha>} A^{-1} Y A = F`` (row-major vec)."""
    if len(f) == 0:
        return f
    ph = np.atleast_1d(phase(f.keys, alpha))
    kron = np.kron(inv2(a), a.T)
    mats = np.eye(4)[None] - np.exp(1j * ph)[:, None, None] * kron[None]
    smin = np.linalg.svd(mats, compute_uv=False)[:, -1]
    if np.any(smin < LEAK_TOL):
        raise ResonantLeak("resonant mode leaked into the eliminable part")
    vec = np.linalg.solve(mats, f.vals.reshape(-1, 4, 1))
    return FourierSeries(f.keys, vec.reshape(-1, 2, 2), f.denom, True)


def solve_homological(a, f_nre: FourierSeries, alpha) -> FourierSeries:
    """``Y`` with ``Y - A^{-1} Y(. + alpha) A = F`` for non-resonant ``F``.

    Elliptic, well conditioned ``A`` is handled entry-wise in its eigenframe;
    otherwise each mode is solved as a 4x4 linear system.
    """
    a = np.asarray(a, dtype=complex)
    f_nre = _integer_keys(f_nre)
    fr = eigenframe(a)
    if fr is None:
        return _solve_kron(a, f_nre, alpha)
    g = f_nre.conjugate_by(fr.p, fr.pinv)
    # rounding-level entries created by the frame change are not modes
    scale = max(wiener_norm(f_nre), 1e-300)
    g = FourierSeries(g.keys, np.where(np.abs(g.vals) > 1e-15 * scale, g.vals, 0), 1)
    return _solve_diagonal(g, fr.rho, alpha).conjugate_by(fr.pinv, fr.p)


def homological_residual(a, f: FourierSeries, y: FourierSeries, alpha, h: float = 0.0) -> float:
    a = np.asarray(a, dtype=complex)
    lhs = y - y.shift(alpha).conjugate_by(inv2(a), a)
    return wiener_norm(lhs - f, h)


def homological_check(a, f: FourierSeries, y: FourierSeries, alpha, h: float, eta: float) -> dict:
    fn = wiener_norm(f, h)
    yn = wiener_norm(y, h)
    res = homological_residual(a, f, y, alpha, h)
    bound = 2.0 / eta * fn
    return {"residual": res, "relative_residual": res / fn if fn else 0.0, "residual_ok": res <= 1e-10 * fn,
            "y_norm": yn, "bound": bound, "bound_ok": yn <= bound}


# steps ----------------------------------------------------------------------
@dataclass(frozen=True)
class KamParams:
    eta: float | None = None          # default eps^eta_power
    eta_power: float = 0.1
    n_trunc: float | None = None      # default 2|ln eps| / (h - h')
    degree_cap: float | None = None   # products drop |k| above this
    search_bound: float | None = None  # resonance search radius, default min(n_trunc, cap)
    gate_max: float = 1e-4
    gate_const: float = 1e3
    gate_power: float = 4.0
    tau: float = 1.0
    check_points: int = 8
    seed: int = 0
    residual_tol: float = 1e-8
    max_steps: int = 12
    stop_tol: float = 1e-60
    verify_rotation: bool = False
    rotation_n: int = 20000

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class KamState:
    alpha: tuple[float, ...]
    a: np.ndarray
    tail: FourierSeries
    btilde: FourierSeries
    j: int = 1
    h: float = 0.0
    h_next: float = 0.0
    k_tilde: tuple[int, ...] = ()
    history: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.alpha)


@dataclass
class BoundCheck:
    name: str
    bound: float
    measured: float
    passed: bool

    def to_json(self):
        return {"name": self.name, "bound": _num(self.bound), "measured": _num(self.measured),
                "pass": bool(self.passed)}


@dataclass
class StepReport:
    j: int
    case: str
    eps: float
    eps_out: float
    widths: tuple[float, float]
    eta: float
    n_trunc: float
    site: tuple[int, ...] | None
    residual: float
    checks: list[BoundCheck] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def check(self, name: str, measured: float, bound: float):
        self.checks.append(BoundCheck(name, float(bound), float(measured), bool(measured <= bound)))

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {"j": self.j, "case": self.case, "eps": _num(self.eps), "eps_out": _num(self.eps_out),
                "widths": [_num(x) for x in self.widths], "eta": _num(self.eta),
                "n_trunc": _num(self.n_trunc), "site": list(self.site) if self.site else None,
                "residual": _num(self.residual), "checks": [c.to_json() for c in self.checks],
                "info": {k: _jsonable(v) for k, v in sorted(self.info.items())}}


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _jsonable(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in sorted(v.items())}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, complex):
        return [_num(v.real), _num(v.imag)]
    return str(v)


def _half_phase(k, alpha) -> float:
    """``<k, alpha> / 2`` reduced mod 2pi, accumulated in extended precision."""
    x = (np.asarray(k, dtype=np.longdouble) * np.asarray(alpha, dtype=np.longdouble)).sum() / 2
    return float(x - TWO_PI_LD * np.round(x / TWO_PI_LD))


def _constant(m, dim: int) -> FourierSeries:
    return FourierSeries.constant(np.asarray(m, dtype=complex), dim)


def rotate_entries(f: FourierSeries, k) -> FourierSeries:
    """``Z F Z^{-1}`` for ``Z = diag(e^{-i<k,theta>/2}, e^{i<k,theta>/2})``."""
    k = np.asarray(k, dtype=np.int64) * f.denom
    z = np.zeros_like(k)
    return f.modulate_entries([[z, -k], [k, z]])


def right_half_rotation(f: FourierSeries, k) -> FourierSeries:
    """``F Z^{-1}``: column 0 times ``e^{i<k,theta>/2}``, column 1 times its inverse."""
    g = f.with_denom(2 * f.denom // math.gcd(2, f.denom)) if f.denom % 2 else f
    k = np.asarray(k, dtype=np.int64) * (g.denom // 2)
    return g.modulate_entries([[k, -k], [k, -k]])


def _pointwise_residual(b: FourierSeries, a, f: FourierSeries, a_plus, f_plus: FourierSeries,
                        alpha, thetas) -> float:
    alpha = np.asarray(alpha, dtype=float)
    worst = 0.0
    for th in thetas:
        bt = np.asarray(b(th))
        bs = np.asarray(b(th + alpha))
        lhs = inv2(bs) @ (a @ exp_sl2(np.asarray(f(th)))) @ bt
        rhs = a_plus @ exp_sl2(np.asarray(f_plus(th)))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def smallness_gate(a, h: float, h_next: float, params: KamParams) -> float:
    d = params.gate_power
    return min(params.gate_max, (h - h_next) ** (d * params.tau) / (params.gate_const * float(op_norm(a)) ** d))


def kam_step(state: KamState, params: KamParams = KamParams()) -> tuple[KamState, StepReport]:
    """One reducibility step on ``(alpha, A e^{F})`` with ``F = state.tail``."""
    alpha = np.asarray(state.alpha, dtype=float)
    dim = state.dim
    a = np.asarray(state.a, dtype=complex)
    f = _integer_keys(state.tail)
    h, h1 = state.h, state.h_next
    eps = wiener_norm(f, h)
    k_tilde = state.k_tilde or (0,) * dim
    if eps == 0.0:
        rep = StepReport(state.j, "non-resonant", 0.0, 0.0, (h, h1), 0.0, 0.0, None, 0.0)
        rep.info["trivial"] = True
        eye = _constant(np.eye(2), dim)
        new = replace(state, btilde=state.btilde if len(state.btilde) else eye, h=h1,
                      history=state.history + ("non-resonant",))
        return new, rep
    gate = smallness_gate(a, h, h1, params)
    if eps > gate:
        raise StepRejected("smallness gate failed", eps / gate, {"eps": eps, "gate": gate})
    eta = params.eta if params.eta is not None else eps ** params.eta_power
    n_trunc = params.n_trunc if params.n_trunc is not None else 2 * abs(math.log(eps)) / (h - h1)
    cap = params.degree_cap if params.degree_cap is not None else 6 * max(f.degree(), 1.0)
    search = params.search_bound if params.search_bound is not None else min(n_trunc, cap)
    split = split_resonant(f, a, eta, n_trunc, alpha, search)
    ops = SeriesOps(cap, h1)
    fr = split.frame
    g, g_nre, g_re = split.g_nre + split.g_re, split.g_nre, split.g_re
    site = split.resonant_site
    info: dict = {"frame": "eigen" if fr else "kron", "cap": cap}
    if fr is not None:
        info["rho"] = fr.rho
        info["cond"] = fr.cond
    if site is None:
        case = "non-resonant"
        if fr is not None:
            a_w, pinv, p = fr.diag, fr.pinv, fr.p
            y_w = _solve_diagonal(g_nre, fr.rho, alpha)
        else:
            a_w = a
            pinv = p = np.eye(2)
            y_w = _solve_kron(a, g_nre, alpha)
        x_w = y_w.shift(alpha).conjugate_by(inv2(a_w), a_w)
        c_w = np.asarray(g_re.coeff((0,) * dim) if len(g_re) else np.zeros((2, 2)), dtype=complex)
        lin = g_re.select(g_re.abs_k() > 0) if len(g_re) else g_re
        fplus_w = log_of_product([_constant(-c_w, dim), x_w, g, -y_w], lin, ops)
        e_w = series_exp(-y_w, ops)
        b = e_w.conjugate_by(pinv, p)
        a_plus = pinv @ (a_w @ exp_sl2(c_w)) @ p
        f_plus = fplus_w.conjugate_by(pinv, p)
        y = y_w.conjugate_by(pinv, p)
        new_k = k_tilde
    else:
        case = "resonant"
        kb = site.k
        d = fr.diag
        y_w = _solve_diagonal(g_nre, fr.rho, alpha)
        x_w = y_w.shift(alpha).conjugate_by(np.conj(d), d)
        gz = rotate_entries(g_re, kb)
        hmat = np.asarray(gz.coeff((0,) * dim), dtype=complex)
        lin = gz.select(gz.abs_k() > 0)
        f_plus = log_of_product([_constant(-hmat, dim), rotate_entries(x_w, kb), rotate_entries(g, kb),
                                 -rotate_entries(y_w, kb)], lin, ops)
        hp = _half_phase(kb, alpha)
        d_tilde = d @ np.diag([np.exp(-1j * hp), np.exp(1j * hp)])
        a_plus = d_tilde @ exp_sl2(hmat)
        e_w = series_exp(-y_w, ops)
        b = right_half_rotation(e_w, kb).lmul(fr.pinv)
        y = y_w.conjugate_by(fr.pinv, fr.p)
        new_k = tuple(int(x + z) for x, z in zip(k_tilde, kb))
        info["site"] = list(kb)
        info["site_distance"] = site.distance
        info["multiple_sites"] = site.count
        info["H"] = [hmat[0, 0], hmat[0, 1]]
        info["g_site"] = complex(g_re.coeff(kb)[0, 1])
    rng = np.random.default_rng(params.seed + state.j)
    thetas = rng.uniform(0, 2 * np.pi, size=(params.check_points, dim))
    residual = _pointwise_residual(b, a, f, a_plus, f_plus, alpha, thetas)
    eps_out = wiener_norm(f_plus, h1)
    rep = StepReport(state.j, case, eps, eps_out, (h, h1), eta, n_trunc,
                     tuple(site.k) if site else None, residual, info=info)
    info["truncation_tail"] = ops.tail
    norm_a = float(op_norm(a))
    if residual > params.residual_tol * (1 + norm_a):
        raise StepRejected("conjugation identity residual above budget",
                           residual / (params.residual_tol * (1 + norm_a)), rep.to_json())
    _step_monitors(rep, a, a_plus, f, f_plus, b, y, split, eps, eta, h, h1, alpha, case)
    new = replace(state, a=a_plus, tail=f_plus, btilde=b, h=h1, k_tilde=new_k,
                  history=state.history + (case,))
    return new, rep


def _step_monitors(rep: StepReport, a, a_plus, f, f_plus, b, y, split, eps, eta, h, h1, alpha, case):
    nre_norm = wiener_norm(split.nre, h)
    yn = wiener_norm(y, h)
    rep.check("|Y|_h <= 2 eta^-1 |F|_h", yn, 2.0 / eta * eps)
    hm = homological_residual(a, split.nre, y, alpha, h) if case == "non-resonant" else None
    if hm is not None:
        rep.check("homological residual <= 1e-10 |F|_h", hm, 1e-10 * max(nre_norm, eps))
    lin = f_plus - (split.re - np.asarray(split.re.coeff((0,) * f.dim)) if len(split.re) else split.re)
    if case == "non-resonant":
        rep.check("|F'^re - P_re F|_h <= 2 eta^-7 |F|_h^2", wiener_norm(lin, h1), 2.0 * eta ** -7 * eps * eps)
        rep.check("|B - I|_h' <= eps^(1/2)", wiener_norm(b - np.eye(2), h1), math.sqrt(eps))
        rep.check("|F+|_h' <= 4 eps^2", wiener_norm(f_plus, h1), 4 * eps * eps)
        rep.check("||A e^<F> - A|| <= 2 ||A|| eps", float(op_norm(a_plus - a)), 2 * float(op_norm(a)) * eps)
        try:
            from .algebra2 import trc_norm
            rep.check("|A|_trc <= eps^(-1/10) / 4", trc_norm(a), 0.25 * eps ** -0.1)
        except ArithmeticError:
            pass
    else:
        ratio = h1 / (h - h1)
        rep.check("|B|_h' <= eps^(-1/1600) eps^(-h'/(h-h'))", wiener_norm(b, h1),
                  eps ** (-1 / 1600) * eps ** (-ratio))
        rep.check("|F+|_h' <= 2 eps", wiener_norm(f_plus, h1), 2 * eps)
        tr = float(np.real(np.trace(a_plus))) / 2
        a2 = log_sl2(a_plus) if tr > -1 + 1e-12 else np.full((2, 2), np.inf)
        rep.check("||A''|| <= 2 eps^(1/10)", float(op_norm(a2)), 2 * eps ** 0.1)
        kb = rep.site
        ks = sum(abs(x) for x in kb)
        b_plus = abs(a2[0, 1]) if np.all(np.isfinite(a2)) else math.inf
        rep.check("|b+| <= 20 eps^(-1/10) |F|_h e^(-|k|h')", b_plus, 20 * eps ** -0.1 * eps * math.exp(-ks * h1))
        gsite = complex(rep.info["g_site"])
        hv = rep.info["H"]
        rep.check("|a+|^2 + |b+|^2 <= 4 |F|_h", abs(hv[0]) ** 2 + abs(hv[1]) ** 2, 4 * eps)
        rep.check("|b+ - g(k)| <= 400 eps^(-3/10) |F|_h^2 e^(-|k|h)", abs(hv[1] - gsite),
                  400 * eps ** -0.3 * eps * eps * math.exp(-ks * h))


# diagnostics ------------------------------------------------------------------
def conjugated_direction(btilde: FourierSeries, cap: float | None = None) -> FourierSeries:
    """``W_j = B~^{-1} W_E B~``, the potential direction in the current frame."""
    w = _constant(W_E, btilde.dim)
    bw, _ = product(btilde.adjugate(), w, cap)
    out, _ = product(bw, btilde, cap)
    return out.reduced()


def diagnostics(btilde: FourierSeries, k_tilde, h: float, cap: float | None = None) -> dict:
    """``xi = |w^(0)|``, ``M = |w|_h + |u|_h`` and ``m = sup_{|k|>|k~|} (|w^(k)| + |u^(k)|)/2``
    for ``W_j = [[iu, w e^{-i<k~,theta>}], [., -iu]]``."""
    wj = conjugated_direction(btilde, cap)
    dim = btilde.dim
    u = wj.entry(0, 0) * (-1j)
    kt = np.asarray(k_tilde if k_tilde else (0,) * dim, dtype=np.int64) * wj.denom
    w = wj.entry(0, 1).modulate(kt)
    xi = abs(complex(w.coeff((0,) * dim))) if len(w) else 0.0
    big = wiener_norm(w, h) + wiener_norm(u, h)
    ksize = float(np.abs(kt).sum()) / wj.denom
    small = 0.0
    coeff: dict = {}
    for s in (w, u):
        for key, val in zip(map(tuple, s.keys), s.vals):
            if float(np.abs(key).sum()) / s.denom > ksize + 1e-12:
                coeff[key] = coeff.get(key, 0.0) + abs(val)
    if coeff:
        small = 0.5 * max(coeff.values())
    return {"xi": xi, "M": big, "m": small}


# driver -------------------------------------------------------------------------
def grid_log_factorization(energy: float, lam: float, block: FourierSeries, grid: int = 64):
    """``log(A_E^{-1}(A_E + F_0))`` sampled on a grid and re-expanded on the block's modes.

    Returns the disc-frame exponent and the max deviation from the exact
    nilpotent form ``lam v W_E``.
    """
    dim = block.dim
    if len(block) == 0 or lam == 0:
        return FourierSeries.zeros(dim, "matrix"), 0.0
    th = np.zeros((grid, dim))
    th[:, 0] = 2 * np.pi * np.arange(grid) / grid
    if dim > 1:
        th[:, 1:] = np.mod(th[:, :1] * np.sqrt(np.arange(2, dim + 1))[None, :], 2 * np.pi)
    ae = np.array([[energy, -1.0], [1.0, 0.0]])
    v = np.real(block(th))
    f0 = np.zeros((grid, 2, 2))
    f0[:, 0, 0] = -lam * v
    logs = log_sl2(np.linalg.solve(ae[None], ae[None] + f0).astype(complex))
    # re-expand on the block's modes by least squares
    ph = np.exp(1j * (th @ block.keys.T.astype(float)))
    coef, *_ = np.linalg.lstsq(ph, logs.reshape(grid, 4), rcond=None)
    f_real = FourierSeries(block.keys, coef.reshape(-1, 2, 2), 1)
    exact = (block * lam)._lift_kind("matrix").lmul(W_TILDE)
    dev = wiener_norm(f_real - exact)
    return f_real.conjugate_by(P_DIAMOND, P_DIAMOND_INV), dev


@dataclass
class KamRun:
    state: KamState
    reports: list[StepReport]
    stop_reason: str
    monitors: list[dict]
    factorization_residual: float = 0.0

    def trace_lines(self) -> str:
        out = []
        for rep, mon in zip(self.reports, self.monitors):
            rec = rep.to_json()
            rec["monitors"] = _jsonable(mon)
            out.append(json.dumps(rec, sort_keys=True))
        out.append(json.dumps({"stop": self.stop_reason, "k_tilde": list(self.state.k_tilde),
                               "A": _jsonable([complex(x) for x in np.asarray(self.state.a).ravel()]),
                               "factorization_residual": _num(self.factorization_residual)},
                              sort_keys=True))
        return "\n".join(out) + "\n"

    @property
    def tails(self) -> list[float]:
        return [r.eps for r in self.reports if not r.info.get("trivial")]

    def predicted_rotation(self) -> float:
        """Rotation number (turns, folded into [0, 1/2]) implied by the final
        constant and the accumulated degree.

        In the real frame each resonant step at ``k`` lowers the rotation
        number of the conjugated cocycle by ``<k, alpha>/4pi`` turns, so the
        original one is ``rho(A_inf) - <k~, alpha>/4pi``.
        """
        shift = float(np.dot(self.state.k_tilde, self.state.alpha)) if self.state.k_tilde else 0.0
        raw = _center_turns(self.state.a) - shift / (4 * math.pi)
        return float(abs(raw - round(raw)))


def _regime_case(a, scales_obj, j: int, alpha, s: float) -> str:
    """Classification of ``A_j`` against the scale thresholds (recorded only)."""
    fr = eigenframe(a)
    if fr is None:
        return "NR"
    n_base = scales_obj.base
    bound = 40 * n_base ** s * scales_obj.upper(j) if j < scales_obj.count else 40 * n_base ** s * scales_obj.n(j) * 3
    delta = math.exp(-scales_obj.n(j) ** s / 50)
    bound = min(bound, 4000.0)
    hit = find_resonance(fr.rho, alpha, bound, delta)
    return "RS" if hit is not None else "NR"


def kam_iterate(alpha, lam: float, energy: float, kset: KSet, params: KamParams = KamParams(),
                max_steps: int | None = None) -> KamRun:
    """Run the step sequence: incorporate block j, reduce, repeat."""
    alpha_t = tuple(float(x) for x in np.atleast_1d(alpha))
    dim = len(alpha_t)
    sc = kset.scales
    s = kset.params.s
    max_steps = max_steps or params.max_steps
    a0 = schrodinger_constant(energy)
    eye = _constant(np.eye(2), dim)
    state = KamState(alpha_t, a0, FourierSeries.zeros(dim, "matrix"), eye, 1, sc.width(1), 0.75 * sc.width(1),
                     (0,) * dim)
    labels = [lab for lab in kset.labels if lab.j <= max_steps]
    if lam == 0 or not labels:
        return KamRun(state, [], "zero tail at entry", [])
    kmax = max(lab.size for lab in labels)
    cap = params.degree_cap if params.degree_cap is not None else 8 * kmax
    params = replace(params, degree_cap=cap)
    fact_res = 0.0
    reports: list[StepReport] = []
    monitors: list[dict] = []
    incorporated = FourierSeries.zeros(dim)
    stop = "max_steps"
    xi_ref = None
    resonant_js: list[int] = []
    rng = np.random.default_rng(params.seed)
    h_prev = sc.width(1)
    for j in range(1, max_steps + 1):
        ops = SeriesOps(cap, 0.0)
        block = kset.block(j)
        h_j = sc.width(j)
        h_tilde = h_j if kset.label_in(j) is not None or j == 1 else 0.75 * h_prev
        mon: dict = {"h_j": h_j, "h_tilde": h_tilde}
        if len(block):
            f0, dev = grid_log_factorization(energy, lam, block)
            fact_res = max(fact_res, dev)
            w = (block * lam)._lift_kind("matrix").rmul(W_E)
            x = ops.mul(ops.mul(state.btilde.adjugate(), w), state.btilde).reduced()
            tail = log_of_product([state.tail, x], state.tail + x, ops) if len(state.tail) else x
            incorporated = incorporated + block
            mon["block_norm"] = wiener_norm(x, h_tilde)
        else:
            tail = state.tail
        # global identity: B~^{-1}(th+a) A_E(I + lam v W_E) B~(th) = A_j e^{F~_j}
        pot = incorporated * lam
        gres = 0.0
        for th in rng.uniform(0, 2 * np.pi, size=(4, dim)):
            s_th = a0 @ (np.eye(2) + complex(pot(th) if len(pot) else 0.0) * W_E)
            bt = np.asarray(state.btilde(th))
            bs = np.asarray(state.btilde(th + np.asarray(alpha_t)))
            lhs = inv2(bs) @ s_th @ bt
            rhs = np.asarray(state.a) @ exp_sl2(np.asarray(tail(th)))
            gres = max(gres, float(np.max(np.abs(lhs - rhs))))
        mon["global_residual"] = gres
        mon["regime_case"] = _regime_case(state.a, sc, j, alpha_t, s)
        eps = wiener_norm(tail, h_tilde)
        if eps <= params.stop_tol and not any(lab.j > j for lab in labels):
            stop = "tail below threshold"
            state = replace(state, tail=tail)
            break
        n_j = sc.n(j) if j <= sc.count else sc.n(sc.count) * 3 ** (j - sc.count)
        btn = wiener_norm(state.btilde, h_j)
        mon["|B~_j|_h_j"] = btn
        mon["|B~_j|_h_j <= e^(N_j^s/40)"] = btn <= math.exp(n_j ** s / 40)
        step_state = replace(state, tail=tail, j=j, h=h_tilde, h_next=0.75 * h_j)
        try:
            new, rep = kam_step(step_state, params)
        except StepRejected as exc:
            stop = str(exc)
            reports.append(StepReport(j, "rejected", eps, math.nan, (h_tilde, 0.75 * h_j), math.nan,
                                      math.nan, None, math.nan, info={"margin": exc.margin}))
            monitors.append(mon)
            state = step_state
            break
        btilde = ops.mul(state.btilde, new.btilde).reduced()
        new = replace(new, btilde=btilde)
        dg = diagnostics(btilde, new.k_tilde, h_j, cap)
        mon.update(dg)
        if rep.case == "resonant":
            resonant_js.append(j)
            prev = state.diagnostics
            if prev:
                lhs = dg["xi"]
                rhs = prev["xi"] - 3 * prev["m"] - prev["M"] * math.exp(-n_j ** s / 10)
                mon["xi_step_shape"] = lhs >= rhs
            if params.verify_rotation:
                mon["rotation_shift"] = resonant_rotation_shift(step_state, new, params.rotation_n)
        if xi_ref is None and resonant_js:
            xi_ref = dg["xi"]
        elif xi_ref is not None:
            mon["xi >= 10 m + 2^-j xi_ref"] = dg["xi"] >= 10 * dg["m"] + 2.0 ** (-j) * xi_ref
        if resonant_js:
            jj = resonant_js[-1]
            nj1 = sc.n(jj + 1) if jj + 1 <= sc.count else n_j * 3
            dist = float(op_norm(np.asarray(new.a) - np.eye(2)))
            mon["||A-I||"] = dist
            mon["||A_J+1 - I|| >= lam e^(-6/5 N^s)"] = dist >= abs(lam) * math.exp(-1.2 * nj1 ** s)
            mon["window"] = (abs(lam) * math.exp(-2 * nj1 ** s) <= dist <= abs(lam) * math.exp(-0.1 * nj1 ** s))
        new = replace(new, diagnostics=dg)
        reports.append(rep)
        monitors.append(mon)
        state = new
        h_prev = h_j
    return KamRun(state, reports, stop, monitors, fact_res)


def cocycle_function(a, f: FourierSeries):
    """Real-frame pointwise values of ``A e^{F(theta)}`` for the rotation-number code."""
    a = np.asarray(a, dtype=complex)

    def fn(th):
        vals = np.asarray(f(np.atleast_2d(th))) if len(f) else np.zeros((np.atleast_2d(th).shape[0], 2, 2))
        m = a[None] @ exp_sl2(vals)
        return np.real(P_DIAMOND_INV[None] @ m @ P_DIAMOND[None])

    return fn


def _center_turns(a) -> float:
    ar = np.real(to_real(a))
    t = max(-1.0, min(1.0, 0.5 * (ar[0, 0] + ar[1, 1])))
    sign = 1.0 if ar[1, 0] >= 0 else -1.0
    return sign * math.acos(t) / (2 * math.pi)


def resonant_rotation_shift(before: KamState, after: KamState, n: int = 20000) -> dict:
    """Measured fibred rotation numbers (real frame, turns) before and after a
    resonant step against the predicted shift ``<k, alpha>/2`` radians.

    With the disc-frame orientation the real-frame lift satisfies
    ``rho_before = rho_after - <k, alpha>/4pi``; the comparison is mod 1/2
    because the half-angle conjugation only lives on the double cover.
    """
    from .cocycle import rotation_number
    alpha = np.asarray(before.alpha)
    r0 = rotation_number(cocycle_function(before.a, before.tail), n, 8, alpha, _center_turns(before.a))
    r1 = rotation_number(cocycle_function(after.a, after.tail), n, 8, alpha, _center_turns(after.a))
    kb = np.asarray(after.k_tilde) - np.asarray(before.k_tilde or (0,) * len(alpha))
    pred = -float(np.dot(kb, alpha)) / (4 * math.pi)
    diff = r0.raw - r1.raw - pred
    err = abs(diff * 2 - round(diff * 2)) / 2
    return {"before": r0.raw, "after": r1.raw, "predicted": pred, "error": err,
            "error_bar": max(r0.error_bar, r1.error_bar)}
