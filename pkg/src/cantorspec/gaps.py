"""Spectral gaps: detection on an energy grid, labelling, edge refinement and
the determinant probe that brackets gap widths at a parabolic edge.

Gaps are found as plateaus of the IDS ``N = 1 - 2 rho`` whose midpoint is
confirmed uniformly hyperbolic; their edges are refined by k-section on the
hyperbolicity verdict and each gap is labelled by the nearest value
``<k, alpha>/2pi mod 1``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .algebra2 import NotParabolicError, P_DIAMOND, P_DIAMOND_INV, classify, parabolic_normalize
from .algebra2 import parabolic_orientation, rotation_turns
from .cocycle import (SchrodingerCocycle, ids_scan, label_candidates, nearest_label, uh_batch)
from .fourier import FourierSeries

LABEL_TOL = 1e-3


# determinant probe -----------------------------------------------------------
@dataclass(frozen=True)
class MoserPoschelData:
    zeta: float
    averages: tuple[float, float, float]  # [B11^2], [B11 B12], [B12^2]
    b0: np.ndarray
    b1: np.ndarray
    conj_norm: float

    @property
    def gram(self) -> float:
        a, x, c = self.averages
        return a * c - x * x


def c_tau(tau: float) -> float:
    """``2^8 Gamma(4 tau + 2)``."""
    return math.exp(8 * math.log(2.0) + math.lgamma(4 * tau + 2))


def quadratic_averages(btilde: FourierSeries) -> tuple[float, float, float]:
    """Zero modes of ``B11^2``, ``B11 B12`` and ``B12^2``."""
    b11, b12 = btilde.entry(0, 0), btilde.entry(0, 1)
    z = (0,) * btilde.dim
    out = []
    for f, g in ((b11, b11), (b11, b12), (b12, b12)):
        out.append(float(np.real((f * g).reduced().coeff(z))))
    return tuple(out)


def mp_reduce(btilde: FourierSeries, zeta: float, h: float = 0.0) -> MoserPoschelData:
    """Averages and the constant pair ``b0 = [[0, zeta], [0, 0]]``, ``b1`` for a
    real-frame conjugator ``btilde`` to the normal form ``[[1, zeta], [0, 1]]``."""
    if not np.isfinite(zeta) or zeta < 0:
        raise NotParabolicError(classify(np.array([[1.0, zeta], [0.0, 1.0]])))
    a, x, c = quadratic_averages(btilde)
    b0 = np.array([[0.0, zeta], [0.0, 0.0]])
    b1 = np.array([[x - zeta / 2 * a, -zeta * x + c],
                   [-a, -x + zeta / 2 * a]])
    return MoserPoschelData(float(zeta), (a, x, c), b0, b1, btilde.norm(h))


def mp_synthetic(zeta: float, averages, conj_norm: float = 1.0) -> MoserPoschelData:
    a, x, c = (float(v) for v in averages)
    b0 = np.array([[0.0, zeta], [0.0, 0.0]])
    b1 = np.array([[x - zeta / 2 * a, -zeta * x + c], [-a, -x + zeta / 2 * a]])
    return MoserPoschelData(float(zeta), (a, x, c), b0, b1, conj_norm)


def mp_det(data: MoserPoschelData, delta: float) -> tuple[float, float]:
    """``(d(delta), det(b0 - delta b1))`` with
    ``d(delta) = -delta [B11^2] zeta + delta^2 ([B11^2][B12^2] - [B11 B12]^2)``."""
    a, x, c = data.averages
    d = -delta * a * data.zeta + delta * delta * (a * c - x * x)
    m = data.b0 - delta * data.b1
    return float(d), float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def theorem_window(lam: float, k_size: float, s: float) -> tuple[float, float]:
    """``(|lam|^2 e^{-(13/6)|k|^{2s}}, sqrt|lam| e^{-(3/20)|k|^s})``."""
    lo = lam * lam * math.exp(-13.0 / 6.0 * k_size ** (2 * s))
    hi = math.sqrt(abs(lam)) * math.exp(-0.15 * k_size ** s)
    return lo, hi


@dataclass(frozen=True)
class GapBounds:
    delta1: float
    delta2: float
    d1: float
    d2: float
    det1: float
    det2: float
    upper_ok: bool
    lower_ok: bool
    perturbation_bound: float
    gate: float
    gate_bound: float
    hypotheses: dict
    window: tuple[float, float] | None
    theorem_window: tuple[float, float]
    verdict: str

    def to_json(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window) if self.window else None
        out["theorem_window"] = list(self.theorem_window)
        return out


def mp_probe(data: MoserPoschelData, lam: float, k_size: float, s: float, gamma: float = 1.0,
             tau: float = 1.0, h_tilde: float | None = None) -> GapBounds:
    """Sign tests of the determinant at ``delta1 = zeta^{16/17}`` and
    ``delta2 = zeta^{18/17}`` with the hypotheses that make them meaningful."""
    z = data.zeta
    if not z > 0:
        raise ValueError("zeta must be positive")
    d1v, d2v = z ** (16 / 17), z ** (18 / 17)
    d1, det1 = mp_det(data, d1v)
    d2, det2 = mp_det(data, d2v)
    a, x, c = data.averages
    bn = data.conj_norm
    ct = c_tau(tau)
    hyp = {
        "gram_positive": data.gram > 0,
        "lower_average": a >= (2 * bn) ** -2,
        "cauchy_schwarz": data.gram >= -1e-14 * max(1.0, a * c),
    }
    gate = bn ** 14 * z ** (1 / 17)
    gate_bound = 1e-11 * ct ** -4 * gamma ** 12
    hyp["gate"] = gate <= gate_bound
    width_factor = 1.0 if h_tilde is None else h_tilde ** (-2 * (4 * tau + 1))
    hyp["width_given"] = h_tilde is not None
    pert = 680 * math.sqrt(5) * ct ** 2 * gamma ** -6 * bn ** 5 * math.sqrt(z) * width_factor
    upper = d1 > 0 and det1 > 0
    lower = d2 < 0 and pert <= -d2
    if not hyp["gram_positive"]:
        verdict, window = "inconclusive", None
    elif d1 > 0 and d2 < 0:
        verdict, window = "window", (d2v, d1v)
    else:
        verdict, window = "inconclusive", None
    return GapBounds(d1v, d2v, d1, d2, det1, det2, upper, lower, pert, gate, gate_bound, hyp, window,
                     theorem_window(lam, k_size, s), verdict)


def real_conjugator(btilde_disc: FourierSeries, a_disc) -> tuple[FourierSeries, float, int]:
    """Real-frame conjugator to ``[[1, zeta], [0, 1]]`` from a disc-frame ``B~``
    and parabolic endpoint; returns (B, zeta, orientation)."""
    a_real = np.real(P_DIAMOND_INV @ np.asarray(a_disc) @ P_DIAMOND)
    phi, zeta = parabolic_normalize(a_real, tol=1e-6)
    orient = parabolic_orientation(a_real)
    b = btilde_disc.conjugate_by(P_DIAMOND_INV, P_DIAMOND).rmul(rotation_turns(phi))
    return b, zeta, orient


def edge_probe(kset, energy: float, params=None, gamma: float = 1.0, tau: float = 1.0) -> dict:
    """Run the KAM scheme at an edge energy and apply the determinant probe to
    its parabolic endpoint; hyperbolic or elliptic endpoints skip the probe."""
    from .kam import KamParams, kam_iterate

    params = KamParams() if params is None else params
    run = kam_iterate(kset.alpha, kset.params.lam, energy, kset, params)
    a_real = np.real(P_DIAMOND_INV @ np.asarray(run.state.a) @ P_DIAMOND)
    out = {"energy": energy, "stop_reason": run.stop_reason, "steps": len(run.reports),
           "endpoint_kind": classify(a_real).kind, "endpoint_trace": float(np.trace(a_real))}
    try:
        b, zeta, orient = real_conjugator(run.state.btilde, run.state.a)
    except NotParabolicError as exc:
        out.update(verdict="skipped", reason=str(exc))
        return out
    if zeta == 0:
        out.update(verdict="skipped", reason="identity endpoint")
        return out
    data = mp_reduce(b, zeta, run.state.h_next)
    lab = max(kset.labels, key=lambda x: x.j) if kset.labels else None
    size = lab.size if lab else 0
    bounds = mp_probe(data, kset.params.lam, size, kset.params.s, gamma, tau, run.state.h_next)
    out.update(verdict=bounds.verdict, zeta=zeta, orientation=orient, averages=list(data.averages),
               bounds=bounds.to_json())
    return out


# gap scan -------------------------------------------------------------------------
@dataclass
class GapRecord:
    label: tuple[int, ...] | None
    e_minus: float
    e_plus: float
    ids_value: float
    label_distance: float
    pred_lower: float = math.nan
    pred_upper: float = math.nan
    flags: list[str] = field(default_factory=list)

    @property
    def width(self) -> float:
        return self.e_plus - self.e_minus

    def to_json(self) -> dict:
        return {"label_k": list(self.label) if self.label else None, "E_minus": self.e_minus,
                "E_plus": self.e_plus, "width": self.width, "ids_value": self.ids_value,
                "label_distance": self.label_distance, "pred_lower": _num(self.pred_lower),
                "pred_upper": _num(self.pred_upper), "hypothesis_flags": list(self.flags)}


def _num(x):
    return "nan" if isinstance(x, float) and math.isnan(x) else x


@dataclass
class GapScan:
    records: list[GapRecord]
    unlabelled: list[GapRecord]
    grid: dict

    def to_json(self) -> dict:
        return {"grid": self.grid, "gaps": [r.to_json() for r in self.records],
                "unlabelled": [r.to_json() for r in self.unlabelled]}

    @property
    def labels(self) -> list[tuple[int, ...]]:
        return [r.label for r in self.records]


def _plateaus(ids: np.ndarray, err: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive grid points with equal IDS within 3 error bars."""
    runs = []
    i = 0
    n = ids.size
    while i < n - 1:
        j = i
        while j + 1 < n and abs(ids[j + 1] - ids[i]) <= 3 * max(err[i], err[j + 1]):
            j += 1
        if j > i:
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    return runs


def _refine_edge(c: SchrodingerCocycle, outside: float, inside: float, target: float, n_max: int,
                 phases: int, labels: np.ndarray, points: int = 15) -> float:
    """k-section between a spectral point and a hyperbolic point; inconclusive
    verdicts count as spectral, so the gap is never overstated."""
    a, b = outside, inside
    while abs(b - a) > target:
        xs = a + (b - a) * np.arange(1, points + 1) / (points + 1)
        vs = uh_batch(c, xs, n_max, None, phases, labels)
        uh = np.array([v.verdict == "uniformly-hyperbolic" for v in vs])
        # first hyperbolic point walking from a towards b
        idx = np.nonzero(uh)[0]
        if idx.size == 0:
            a = xs[-1]
            continue
        k = idx[0]
        b_new = xs[k]
        a = xs[k - 1] if k > 0 else a
        b = b_new
    return float(0.5 * (a + b))


def scan_gaps(c: SchrodingerCocycle, window: tuple[float, float], resolution: float,
              kset=None, n: int = 20000, phases: int = 8, threads: int | None = None,
              label_bound: int = 8, refine: bool = True, s: float | None = None) -> GapScan:
    """Gaps of ``c`` inside ``window`` seen on a grid of spacing ``resolution``."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    e0, e1 = float(window[0]), float(window[1])
    m = int(math.floor((e1 - e0) / resolution + 1e-9)) + 1
    grid = e0 + resolution * np.arange(m)
    extra = [lab.k for lab in kset.labels] if kset is not None else []
    ks = label_candidates(c.alpha, label_bound, extra)
    s_val = s if s is not None else (kset.params.s if kset is not None else None)
    _, ids, err = ids_scan(c, grid, n, phases, threads)
    runs = _plateaus(ids, err)
    records, unlabelled = [], []
    mids = [0.5 * (grid[i] + grid[j]) for i, j in runs]
    checks = uh_batch(c, mids, n, None, phases, ks) if mids else []
    for (i, j), chk in zip(runs, checks):
        if chk.verdict != "uniformly-hyperbolic":
            continue
        value = float(np.mean(ids[i:j + 1]))
        lab, dist = nearest_label(value, c.alpha, ks)
        if dist <= LABEL_TOL and not any(lab):
            continue  # resolvent set below or above the whole spectrum
        if refine:
            target = resolution * 1e-2
            lo = _refine_edge(c, grid[i - 1], grid[i], target, n, phases, ks) if i > 0 else grid[i]
            hi = _refine_edge(c, grid[j + 1], grid[j], target, n, phases, ks) if j + 1 < m else grid[j]
        else:
            lo, hi = grid[i], grid[j]
        flags = []
        if i == 0 or j + 1 == m:
            flags.append("touches-window")
        rec = GapRecord(lab if dist <= LABEL_TOL else None, float(lo), float(hi), value, dist)
        if s_val is not None and rec.label is not None and any(rec.label):
            size = float(sum(abs(x) for x in rec.label))
            rec.pred_lower, rec.pred_upper = theorem_window(c.lam, size, s_val)
            flags.append("toy-monitor")
        rec.flags = flags
        (records if rec.label is not None else unlabelled).append(rec)
    info = {"window": [e0, e1], "resolution": resolution, "points": m, "n": n, "phases": phases,
            "label_bound": label_bound}
    return GapScan(records, unlabelled, info)


# output ----------------------------------------------------------------------------
CSV_COLUMNS = ["label_k", "E_minus", "E_plus", "width", "ids_value", "pred_lower", "pred_upper",
               "hypothesis_flags"]


def gaps_csv(scan: GapScan, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in scan.records + scan.unlabelled:
        lab = " ".join(str(x) for x in r.label) if r.label else ""
        w.writerow([lab, repr(r.e_minus), repr(r.e_plus), repr(r.width), repr(r.ids_value),
                    repr(r.pred_lower), repr(r.pred_upper), ";".join(r.flags)])
    return buf.getvalue()


def gaps_json(scan: GapScan, meta: dict | None = None) -> str:
    data = scan.to_json()
    if meta:
        data["meta"] = meta
    return json.dumps(data, indent=2, sort_keys=True)
