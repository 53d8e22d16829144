"""Frequency label sets, scale schedules and the Gevrey potential.

Labels are placed one per double annulus ``N_j <= |k| < N_{j+2}`` with the
gap ``21 N_j / 10 <= |k| < N_{j+1}`` left empty, and each carries the
coefficient ``e^{-|k|^s}`` of ``v(theta) = sum e^{-|k|^s} cos<k, theta>``.

Exact-mode schedules only exist as logarithms; toy-mode schedules are small
integers so that the labels can actually be enumerated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .diophantine import DCParams, l1_ball
from .fourier import FourierSeries

Mode = Literal["exact", "toy"]
LOG_FLOAT_MAX = 709.0


@dataclass(frozen=True)
class GevreyParams:
    s: float
    lam: float

    def __post_init__(self):
        if not 0 < self.s < 0.5:
            raise ValueError("s must lie in (0, 1/2)")
        if not 0 < abs(self.lam) <= 1:
            raise ValueError("lambda must satisfy 0 < |lambda| <= 1")


@dataclass(frozen=True)
class NStar:
    log_value: float
    value: int | None
    terms: dict
    dominant: str
    mode: Mode
    theorem_constants_satisfied: bool


def n_star(params: GevreyParams, alpha, dc: DCParams, override: int | None = None) -> NStar:
    """``max{200^{1/(1-2s)}, e^{100/s^2}, ln(|alpha|+1), gamma, tau}`` in log space.

    With ``override`` the toy value is returned verbatim and flagged.
    """
    s = params.s
    a = float(np.abs(np.atleast_1d(alpha)).sum())

    def safe_log(x: float) -> float:
        return math.log(x) if x > 0 else -math.inf

    terms = {
        "200^(1/(1-2s))": math.log(200.0) / (1 - 2 * s),
        "e^(100/s^2)": 100.0 / s**2,
        "ln(|alpha|+1)": safe_log(math.log(a + 1)),
        "gamma": safe_log(dc.gamma),
        "tau": safe_log(dc.tau),
    }
    dominant = max(terms, key=terms.get)
    log_exact = terms[dominant]
    if override is not None:
        ok = math.log(override) >= log_exact
        return NStar(math.log(override), int(override), terms, dominant, "toy", ok)
    value = math.ceil(math.exp(log_exact)) if log_exact <= LOG_FLOAT_MAX else None
    return NStar(log_exact, value, terms, dominant, "exact", True)


@dataclass(frozen=True)
class ScaleSequence:
    base: int
    s: float
    mode: Mode
    log_n: tuple[float, ...]
    values: tuple[int, ...] | None = None

    @property
    def count(self) -> int:
        return len(self.log_n)

    def n(self, j: int) -> float:
        """``N_j`` for 1-based ``j`` (float; exact mode may overflow to inf)."""
        if self.values is not None:
            return float(self.values[j - 1])
        lv = self.log_n[j - 1]
        return math.exp(lv) if lv <= LOG_FLOAT_MAX else math.inf

    def upper(self, j: int) -> float:
        return self.n(j + 1) if j < self.count else math.inf

    def width(self, j: int) -> float:
        """``h_j = N_{j+1}^{s-1} / 10``; the last scale extrapolates by the final ratio."""
        if j < self.count:
            return 0.1 * math.exp((self.s - 1) * self.log_n[j])
        step = self.log_n[-1] - self.log_n[-2] if self.count > 1 else math.log(self.base)
        return 0.1 * math.exp((self.s - 1) * (self.log_n[-1] + step * (j + 1 - self.count)))

    def ratio_checks(self) -> list[dict]:
        out = []
        bound = math.log(200.0) / self.s
        for j in range(1, self.count):
            d = self.log_n[j] - self.log_n[j - 1]
            out.append({"j": j, "log_ratio": d,
                        "ratio_is_base": abs(d - math.log(self.base)) <= 1e-12 * max(1.0, d),
                        "ratio_ge_200^(1/s)": d >= bound})
        return out

    def to_json(self):
        if self.values is not None:
            return list(self.values)
        return [{"log": v} for v in self.log_n]


def scales(n: int, s: float, count: int, mode: Mode = "toy", sequence=None) -> ScaleSequence:
    """Exact: ``log N_j = (12/s + j - 1) log n``.  Toy: ``sequence`` or ``n 3^{j-1}``."""
    if n < 2 and sequence is None:
        raise ValueError("base must be at least 2")
    if count < 1:
        raise ValueError("count must be positive")
    if mode == "exact":
        logs = tuple((12.0 / s + j - 1) * math.log(n) for j in range(1, count + 1))
        return ScaleSequence(n, s, "exact", logs)
    vals = list(sequence) if sequence is not None else [n * 3 ** (j - 1) for j in range(1, count + 1)]
    vals = [int(v) for v in vals]
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError("toy scale sequence must be strictly increasing")
    if vals[0] < 1:
        raise ValueError("toy scales must be positive")
    return ScaleSequence(n, s, "toy", tuple(math.log(v) for v in vals), tuple(vals))


@dataclass(frozen=True)
class KLabel:
    j: int
    k: tuple[int, ...]
    coeff: float

    @property
    def size(self) -> int:
        return int(sum(abs(x) for x in self.k))


@dataclass
class KSet:
    labels: list[KLabel]
    params: GevreyParams
    scales: ScaleSequence
    alpha: tuple[float, ...]
    covering_radius: float = 0.5
    window: tuple[float, float] = (0.0, 1.0)
    radius_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def label_in(self, j: int) -> KLabel | None:
        for lab in self.labels:
            if lab.j == j:
                return lab
        return None

    def block(self, j: int) -> FourierSeries:
        """``v_j``: the single-mode cosine of annulus j, zero if annulus j is empty."""
        lab = self.label_in(j)
        if lab is None:
            return FourierSeries.zeros(self.dim)
        return FourierSeries.cosine(lab.k, lab.coeff)

    def potential(self) -> FourierSeries:
        out = FourierSeries.zeros(self.dim)
        for lab in self.labels:
            out = out + FourierSeries.cosine(lab.k, lab.coeff)
        return out

    def ids_labels(self) -> np.ndarray:
        return ids_label_values([lab.k for lab in self.labels], self.alpha)

    def coefficient_checks(self) -> list[dict]:
        """``|v^(+-k_j)| = e^{-|k_j|^s}/2`` and ``|v_j|_{h_j} <= e^{-(9/10)|k_j|^s}``."""
        s = self.params.s
        out = []
        for lab in self.labels:
            v = self.block(lab.j)
            half = 0.5 * math.exp(-lab.size ** s)
            c_plus, c_minus = abs(v.coeff(lab.k)), abs(v.coeff([-x for x in lab.k]))
            norm = v.norm(self.scales.width(lab.j))
            bound = math.exp(-0.9 * lab.size ** s)
            out.append({"j": lab.j, "k": list(lab.k),
                        "coeff_ok": abs(c_plus - half) <= 1e-15 and abs(c_minus - half) <= 1e-15,
                        "width_norm": norm, "width_bound": bound, "width_ok": norm <= bound})
        return out

    def to_json(self) -> dict:
        return {"s": self.params.s, "lambda": self.params.lam, "mode": self.scales.mode,
                "scales": self.scales.to_json(), "alpha": list(self.alpha),
                "covering_radius": self.covering_radius, "window": list(self.window),
                "labels": [{"j": lab.j, "k": list(lab.k), "coeff": lab.coeff} for lab in self.labels]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, data: dict) -> "KSet":
        params = GevreyParams(data["s"], data["lambda"])
        sc = data["scales"]
        if data["mode"] == "toy":
            seq = scales(max(2, int(sc[0])), params.s, len(sc), "toy", sc)
        else:
            logs = tuple(x["log"] for x in sc)
            seq = ScaleSequence(2, params.s, "exact", logs)
        labels = [KLabel(int(x["j"]), tuple(int(v) for v in x["k"]), float(x["coeff"]))
                  for x in data["labels"]]
        return cls(labels, params, seq, tuple(data.get("alpha", ())),
                   data.get("covering_radius", 0.5), tuple(data.get("window", (0.0, 1.0))))


def ids_label_values(ks, alpha) -> np.ndarray:
    """``<k, alpha> / 2pi mod 1`` for each k."""
    ks = np.asarray(ks, dtype=np.longdouble).reshape(-1, len(np.atleast_1d(alpha)))
    x = (ks * np.asarray(np.atleast_1d(alpha), dtype=np.longdouble)).sum(axis=1)
    two_pi = np.longdouble("6.28318530717958647692528676655900577")
    return np.mod(x / two_pi, 1).astype(float)


def covering_radius(points, window=(0.0, 1.0)) -> float:
    """``sup_{x in window} dist_{R/Z}(x, points)`` computed exactly."""
    a, b = float(window[0]), float(window[1])
    pts = np.sort(np.mod(np.asarray(points, dtype=float), 1.0))
    if pts.size == 0:
        return 0.5 if b - a >= 1 else (b - a)
    ext = np.concatenate([pts - 1, pts, pts + 1])
    cand = [a, b]
    mids = 0.5 * (ext[1:] + ext[:-1])
    mids = mids[(mids >= a) & (mids <= b)]
    cand = np.concatenate([np.array(cand), mids])
    d = np.abs(cand[:, None] - ext[None, :]).min(axis=1)
    return float(d.max())


def _shell(d: int, lo: float, hi: float) -> np.ndarray:
    """Integer vectors with ``lo <= |k|_1 < hi``, one representative of each +-k pair."""
    top = math.ceil(hi) - 1
    ball = l1_ball(d, top)
    size = np.abs(ball).sum(axis=1)
    ball = ball[(size >= lo) & (size < hi)]
    first = np.array([next((x for x in row if x != 0), 0) for row in ball]) if ball.size else np.zeros(0)
    return ball[first > 0] if ball.size else ball


def build_kset(alpha, sc: ScaleSequence, params: GevreyParams, target_epsilon: float,
               window=(0.0, 1.0), floor: float | None = None) -> KSet:
    """Greedy epsilon-net of IDS labels ``+-<k,alpha>/2pi mod 1``.

    Annulus j admits ``N_j <= |k| < min(21 N_j/10, N_{j+1})``; after a pick
    the next annulus is skipped so each double annulus holds at most one
    label.  Stops at the target radius or when the scales run out.
    """
    if sc.mode != "toy":
        raise ValueError("label construction needs enumerable toy scales")
    alpha = tuple(float(x) for x in np.atleast_1d(alpha))
    d = len(alpha)
    floor = sc.n(1) if floor is None else floor
    labels: list[KLabel] = []
    pts: list[float] = []
    radius = covering_radius(pts, window)
    history = [radius]
    j = 1
    while j <= sc.count and radius > target_epsilon:
        lo = max(sc.n(j), floor)
        hi = min(2.1 * sc.n(j), sc.upper(j))
        cands = _shell(d, lo, hi)
        if cands.shape[0] == 0:
            j += 1
            continue
        xs = ids_label_values(cands, alpha)
        best, best_r = 0, math.inf
        for i, x in enumerate(xs):
            r = covering_radius(pts + [x, 1.0 - x], window)
            if r < best_r - 1e-15:
                best, best_r = i, r
        k = tuple(int(v) for v in cands[best])
        size = sum(abs(v) for v in k)
        labels.append(KLabel(j, k, math.exp(-size ** params.s)))
        pts += [float(xs[best]), 1.0 - float(xs[best])]
        radius = best_r
        history.append(radius)
        j += 2
    return KSet(labels, params, sc, alpha, radius, tuple(window), history)


@dataclass
class ValidationReport:
    checks: dict  # name -> (passed, offending labels)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def lines(self) -> list[str]:
        return [f"{name}\t{'pass' if ok else 'FAIL'}\t{bad}" for name, (ok, bad) in self.checks.items()]


def validate_kset(kset: KSet, sc: ScaleSequence | None = None, floor: float | None = None) -> ValidationReport:
    """One-per-double-annulus, vacancy of ``[21N_j/10, N_{j+1})``, the floor,
    and annulus membership of each label."""
    sc = kset.scales if sc is None else sc
    floor = sc.n(1) if floor is None else floor
    sizes = [(lab, lab.size) for lab in kset.labels]
    checks = {}
    bad = []
    for lab, m in sizes:
        if not (sc.n(lab.j) <= m < sc.upper(lab.j)):
            bad.append(list(lab.k))
    checks["annulus_membership"] = (not bad, bad)
    bad = []
    for j in range(1, sc.count + 1):
        hi = sc.n(j + 2) if j + 2 <= sc.count else math.inf
        inside = [list(lab.k) for lab, m in sizes if sc.n(j) <= m < hi]
        if len(inside) > 1:
            bad.append(inside)
    checks["one_per_double_annulus"] = (not bad, bad)
    bad = []
    for j in range(1, sc.count + 1):
        lo, hi = 2.1 * sc.n(j), sc.upper(j)
        bad += [list(lab.k) for lab, m in sizes if lo <= m < hi]
    checks["vacancy_21/10"] = (not bad, bad)
    bad = [list(lab.k) for lab, m in sizes if m < floor]
    checks["floor"] = (not bad, bad)
    return ValidationReport(checks)
