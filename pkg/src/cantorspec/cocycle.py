"""Schrödinger cocycle dynamics and an independent finite-section oracle.

The cocycle is ``(theta, x) -> (theta + alpha, S_E(theta) x)`` with
``S_E(theta) = [[E - lam v(theta), -1], [1, 0]]``.  Rotation numbers are
reported in turns with representative in ``[0, 1/2]`` so that the IDS is
``N = 1 - 2 rho``.  All energy and phase loops are vectorised with numpy;
scans over many energies are chunked with a fixed chunk size so the result
never depends on the number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Literal

import numpy as np

from .diophantine import TWO_PI_LD, l1_ball
from .fourier import FourierSeries

CHUNK = 64
RENORM_EVERY = 16
Verdict = Literal["uniformly-hyperbolic", "not-UH", "inconclusive"]


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("CANTORSPEC_THREADS", "1") or 1)
    return max(1, int(threads))


def map_ordered(fn, items: list, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` on a worker pool; output order is input order."""
    t = thread_count(threads)
    if t == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=t) as ex:
        return list(ex.map(fn, items))


def chunked(values: np.ndarray, size: int = CHUNK) -> list[np.ndarray]:
    return [values[i:i + size] for i in range(0, len(values), size)]


def phase_lattice(phases: int, dim: int) -> np.ndarray:
    """Equidistributed starting phases ``theta_0 = 2 pi i / phases`` on the diagonal."""
    th = 2 * np.pi * np.arange(phases) / phases
    if dim == 1:
        return th[:, None]
    # spread the other coordinates with distinct irrational offsets
    offs = np.array([1.0] + [math.sqrt(p) for p in (2, 3, 5, 7, 11, 13)][: dim - 1])
    return np.mod(th[:, None] * offs[None, :], 2 * np.pi)


@dataclass(frozen=True)
class SchrodingerCocycle:
    alpha: tuple[float, ...]
    lam: float
    potential: FourierSeries
    energy: float = 0.0

    def __post_init__(self):
        if len(self.alpha) != self.potential.dim:
            raise ValueError("frequency and potential dimension differ")

    @classmethod
    def make(cls, alpha, lam: float, potential: FourierSeries, energy: float = 0.0):
        return cls(tuple(float(a) for a in np.atleast_1d(alpha)), float(lam), potential, float(energy))

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def at(self, energy: float) -> "SchrodingerCocycle":
        return replace(self, energy=float(energy))

    def potential_orbit(self, theta0: np.ndarray, n: int) -> np.ndarray:
        """``lam v(theta0 + j alpha)`` for j < n; shape (n, phases)."""
        th = np.atleast_2d(np.asarray(theta0, dtype=float))
        f = self.potential
        out = np.zeros((n, th.shape[0]))
        if len(f) == 0 or self.lam == 0:
            return out
        freqs = f.keys.astype(np.longdouble) / f.denom
        a = np.asarray(self.alpha, dtype=np.longdouble)
        step = np.mod(freqs @ a, TWO_PI_LD)  # (modes,)
        j = np.arange(n, dtype=np.longdouble)
        base = (f.keys.astype(float) / f.denom) @ th.T  # (modes, phases)
        for m in range(len(f)):
            ph = np.mod(j * step[m], TWO_PI_LD).astype(float)
            out += (f.vals[m] * np.exp(1j * (ph[:, None] + base[m][None, :]))).real
        return self.lam * out

    def matrices(self, theta) -> np.ndarray:
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        v = self.potential(th).real if len(self.potential) else np.zeros(th.shape[0])
        out = np.zeros((th.shape[0], 2, 2))
        out[:, 0, 0] = self.energy - self.lam * v
        out[:, 0, 1] = -1.0
        out[:, 1, 0] = 1.0
        return out


@dataclass(frozen=True)
class RotationNumberEstimate:
    value: float
    raw: float
    error_bar: float
    per_phase: tuple[float, ...]
    n: int

    @property
    def ids(self) -> float:
        return 1.0 - 2.0 * self.value


@dataclass(frozen=True)
class HyperbolicityVerdict:
    verdict: Verdict
    growth_rate: float
    iterations: int
    locked: bool
    ids: float
    label: tuple[int, ...] | None = None


def fold_half(x):
    """Representative of ``x mod 1`` reduced by ``x ~ -x`` into [0, 1/2]."""
    r = np.abs(np.asarray(x, dtype=float) - np.round(x))
    return float(r) if r.ndim == 0 else r


# Schrödinger kernel --------------------------------------------------------
def _schrodinger_run(energies: np.ndarray, lv: np.ndarray, checkpoints=()):
    """Angle lift and transfer-matrix growth for all (energy, phase) pairs.

    Returns (rho per (E, phase) in turns, dict checkpoint -> log-norm array).
    """
    n, p = lv.shape
    e = np.asarray(energies, dtype=float)[:, None] * np.ones((1, p))
    y0 = np.full(e.shape, np.pi / 4)
    y = y0.copy()
    turns = np.zeros(e.shape)
    want = set(int(c) for c in checkpoints)
    t00, t01 = np.ones(e.shape), np.zeros(e.shape)
    t10, t11 = np.zeros(e.shape), np.ones(e.shape)
    logs = np.zeros(e.shape)
    growth = {}
    track = bool(want)
    half = np.pi / 2
    for j in range(n):
        a = e - lv[j][None, :]
        c, s = np.cos(y), np.sin(y)
        turns += y >= half
        y = np.mod(np.arctan2(c, a * c - s), np.pi)
        if track:
            t00, t01, t10, t11 = a * t00 - t10, a * t01 - t11, t00, t01
            if (j + 1) % RENORM_EVERY == 0 or (j + 1) in want:
                nrm = np.sqrt(t00**2 + t01**2 + t10**2 + t11**2)
                logs += np.log(nrm)
                t00, t01, t10, t11 = t00 / nrm, t01 / nrm, t10 / nrm, t11 / nrm
            if (j + 1) in want:
                growth[j + 1] = logs + np.log(_opnorm_real(t00, t01, t10, t11))
    rho = (np.pi * turns + y - y0) / (2 * np.pi * max(n, 1))
    return rho, growth


def _opnorm_real(a, b, c, d):
    f = a * a + b * b + c * c + d * d
    det = a * d - b * c
    return np.sqrt(0.5 * (f + np.sqrt(np.maximum(f * f - 4 * det * det, 0.0))))


def transfer_product(c: SchrodingerCocycle, n: int, theta0) -> tuple[np.ndarray, float]:
    """``S(theta0 + (n-1) alpha) ... S(theta0)`` as (unit Frobenius matrix, log scale).

    Negative n gives ``A_{-n}(theta0) = A_n(theta0 - n alpha)^{-1}``.
    """
    theta0 = np.asarray(theta0, dtype=float).reshape(c.dim)
    if n < 0:
        m = -n
        start = theta0 - m * np.asarray(c.alpha)
        mat, lg = transfer_product(c, m, start)
        # det A = 1, so A^{-1} = e^{lg} adj(M) and adj keeps the Frobenius norm
        return np.array([[mat[1, 1], -mat[0, 1]], [-mat[1, 0], mat[0, 0]]]), lg
    lv = c.potential_orbit(theta0[None, :], n)[:, 0]
    t = np.eye(2)
    lg = 0.0
    for j in range(n):
        a = c.energy - lv[j]
        t = np.array([[a * t[0, 0] - t[1, 0], a * t[0, 1] - t[1, 1]], [t[0, 0], t[0, 1]]])
        if (j + 1) % RENORM_EVERY == 0:
            nrm = np.linalg.norm(t)
            lg += math.log(nrm)
            t = t / nrm
    nrm = np.linalg.norm(t)
    return t / nrm, lg + math.log(nrm)


def _rho_estimate(per_phase: np.ndarray, n: int) -> RotationNumberEstimate:
    raw = float(np.mean(per_phase))
    spread = float(np.max(per_phase) - np.min(per_phase)) if per_phase.size > 1 else 0.0
    return RotationNumberEstimate(fold_half(raw), raw, max(spread, 1.0 / max(n, 1)),
                                  tuple(float(x) for x in per_phase), n)


def rotation_scan(c: SchrodingerCocycle, energies, n: int = 20000, phases: int = 8,
                  threads: int | None = None) -> list[RotationNumberEstimate]:
    """Rotation numbers on an energy grid (chunked, thread-count independent)."""
    energies = np.asarray(energies, dtype=float).reshape(-1)
    lv = c.potential_orbit(phase_lattice(phases, c.dim), n)

    def work(chunk):
        rho, _ = _schrodinger_run(chunk, lv)
        return [_rho_estimate(r, n) for r in rho]

    out = []
    for part in map_ordered(work, chunked(energies), threads):
        out += part
    return out


def ids_scan(c: SchrodingerCocycle, energies, n: int = 20000, phases: int = 8,
             threads: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rho, N, error) arrays on an energy grid; the IDS error is twice the rho error."""
    est = rotation_scan(c, energies, n, phases, threads)
    rho = np.array([e.value for e in est])
    err = np.array([e.error_bar for e in est])
    return rho, 1.0 - 2.0 * rho, 2.0 * err


def ids(c: SchrodingerCocycle, n: int = 20000, phases: int = 8) -> float:
    """``N(E) = 1 - 2 rho(E)`` averaged over the full hull."""
    return rotation_number(c, n, phases).ids


# general cocycles -------------------------------------------------------------
MatrixCocycle = Callable[[np.ndarray], np.ndarray]


def as_matrix_cocycle(a, dim: int = 1) -> MatrixCocycle:
    """Accept a constant 2x2 array, a matrix FourierSeries, or a callable theta -> (m,2,2)."""
    if isinstance(a, SchrodingerCocycle):
        return a.matrices
    if isinstance(a, FourierSeries):
        return lambda th: np.asarray(a(th))
    if callable(a):
        return a
    m = np.asarray(a, dtype=complex if np.iscomplexobj(a) else float)
    return lambda th: np.broadcast_to(m, (np.atleast_2d(th).shape[0], 2, 2))


def _general_run(fn: MatrixCocycle, alpha, n: int, theta0: np.ndarray, center: float):
    """Lift of the fibre angle using principal increments relative to ``R_center``.

    Returns (rho per phase in turns, raw accumulated log-norm per phase).
    """
    alpha = np.asarray(alpha, dtype=float)
    th = np.array(theta0, dtype=float)
    p = th.shape[0]
    x = np.stack([np.ones(p), np.zeros(p)], axis=1)
    ang = np.zeros(p)
    lift = np.zeros(p)
    c0 = 2 * np.pi * center
    logs = np.zeros(p)
    t = np.broadcast_to(np.eye(2), (p, 2, 2)).copy()
    for j in range(n):
        m = np.real_if_close(fn(th)).real
        xn = np.einsum("pij,pj->pi", m, x)
        new = np.arctan2(xn[:, 1], xn[:, 0])
        lift += c0 + np.angle(np.exp(1j * (new - ang - c0)))
        nrm = np.linalg.norm(xn, axis=1)
        x = xn / nrm[:, None]
        ang = new
        t = np.einsum("pij,pjk->pik", m, t)
        if (j + 1) % RENORM_EVERY == 0:
            s = np.linalg.norm(t, axis=(1, 2))
            logs += np.log(s)
            t /= s[:, None, None]
        th = th + alpha
    s = np.sqrt(np.maximum(np.linalg.norm(t, ord=2, axis=(1, 2)), 1e-300))
    logs += np.log(s * s)
    return lift / (2 * np.pi * max(n, 1)), logs


def rotation_number(c, n: int = 20000, phases: int = 8, alpha=None, center: float = 0.0,
                    dim: int | None = None) -> RotationNumberEstimate:
    """Fibred rotation number in turns.

    Schrödinger cocycles use the monotone half-turn lift.  Other cocycles
    (constant matrices, matrix series, callables) need ``alpha`` and use
    principal angle increments around the rotation ``R_center``; ``raw``
    keeps the signed value mod 1 and ``value`` folds it into [0, 1/2].
    """
    if isinstance(c, SchrodingerCocycle):
        lv = c.potential_orbit(phase_lattice(phases, c.dim), n)
        rho, _ = _schrodinger_run(np.array([c.energy]), lv)
        return _rho_estimate(rho[0], n)
    if alpha is None:
        raise ValueError("alpha required for a general cocycle")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    d = alpha.size if dim is None else dim
    rho, _ = _general_run(as_matrix_cocycle(c, d), alpha, n, phase_lattice(phases, d), center)
    est = _rho_estimate(rho, n)
    raw = est.raw - math.floor(est.raw + 0.5)
    return replace(est, raw=raw)


def lyapunov_exponent(c, n: int = 4000, phases: int = 8, alpha=None) -> float:
    """Phase average of ``log ||A_n(theta)|| / n`` with renormalised products."""
    if isinstance(c, SchrodingerCocycle):
        lv = c.potential_orbit(phase_lattice(phases, c.dim), n)
        _, g = _schrodinger_run(np.array([c.energy]), lv, checkpoints=(n,))
        return float(np.mean(g[n][0]) / n)
    if alpha is None:
        raise ValueError("alpha required for a general cocycle")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    _, logs = _general_run(as_matrix_cocycle(c, alpha.size), alpha, n,
                           phase_lattice(phases, alpha.size), 0.0)
    return float(np.mean(logs) / n)


def label_candidates(alpha, bound: int = 8, extra=()) -> np.ndarray:
    """Integer labels with ``|k|_1 <= bound`` (including 0) plus ``extra``."""
    d = len(np.atleast_1d(alpha))
    ks = l1_ball(d, bound, include_zero=True)
    if len(extra):
        ex = np.asarray(extra, dtype=np.int64).reshape(-1, d)
        ks = np.concatenate([ks, ex, -ex])
        ks = np.unique(ks, axis=0)
    return ks


def nearest_label(value: float, alpha, ks: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Label k minimising the mod-1 distance of ``value`` to ``<k,alpha>/2pi``."""
    a = np.asarray(np.atleast_1d(alpha), dtype=np.longdouble)
    x = np.mod((ks.astype(np.longdouble) * a).sum(axis=1) / TWO_PI_LD, 1).astype(float)
    d = np.abs(value - x)
    d = np.minimum(d, 1 - d)
    size = np.abs(ks).sum(axis=1)
    i = np.lexsort((size, d))[0]
    return tuple(int(v) for v in ks[i]), float(d[i])


def ladder(n_max: int, n_min: int = 64) -> list[int]:
    out = []
    n = int(n_max)
    while n >= n_min:
        out.append(n)
        n //= 2
    return sorted(out) or [int(n_max)]


def default_zeta(n_max: int) -> float:
    """Growth threshold ``log zeta = 8 / n_max``: above bounded and linear growth."""
    return math.exp(8.0 / n_max)


def uh_batch(c: SchrodingerCocycle, energies, n_max: int = 20000, zeta_threshold: float | None = None,
             phases: int = 8, labels: np.ndarray | None = None, lock_tol: float | None = None
             ) -> list[HyperbolicityVerdict]:
    """Three-valued hyperbolicity verdicts on a batch of energies."""
    zeta = default_zeta(n_max) if zeta_threshold is None else zeta_threshold
    if zeta <= 1:
        raise ValueError("zeta threshold must exceed 1")
    lz = math.log(zeta)
    energies = np.asarray(energies, dtype=float).reshape(-1)
    steps = ladder(n_max)
    lv = c.potential_orbit(phase_lattice(phases, c.dim), n_max)
    rho, growth = _schrodinger_run(energies, lv, checkpoints=steps)
    ks = label_candidates(c.alpha) if labels is None else labels
    out = []
    for i in range(energies.size):
        est = _rho_estimate(rho[i], n_max)
        rates = np.array([growth[m][i] / m for m in steps])  # (ladder, phases)
        rate_min = float(rates.min())
        tol = 6.0 * est.error_bar if lock_tol is None else lock_tol
        lab, dist = nearest_label(est.ids, c.alpha, ks)
        locked = dist <= tol
        if rate_min > lz and locked:
            verdict = "uniformly-hyperbolic"
        elif float(rates[-1].max()) <= lz:
            verdict = "not-UH"
        else:
            verdict = "inconclusive"
        out.append(HyperbolicityVerdict(verdict, float(rates[-1].min()), n_max, locked, est.ids,
                                        lab if locked else None))
    return out


def uh_test(c: SchrodingerCocycle, n_max: int = 20000, zeta_threshold: float | None = None,
            phases: int = 8, labels: np.ndarray | None = None) -> HyperbolicityVerdict:
    return uh_batch(c, [c.energy], n_max, zeta_threshold, phases, labels)[0]


# finite sections -----------------------------------------------------------------
MAX_SECTION = 10_000


def section_diagonal(c: SchrodingerCocycle, n: int, theta) -> np.ndarray:
    if n > MAX_SECTION:
        raise ValueError(f"section size {n} exceeds {MAX_SECTION}")
    if n < 1:
        raise ValueError("section size must be positive")
    th = np.asarray(theta, dtype=float).reshape(1, c.dim)
    return c.potential_orbit(th, n)[:, 0]


def sturm_count(diag: np.ndarray, energies) -> np.ndarray:
    """Number of eigenvalues below each energy of the tridiagonal matrix with
    the given diagonal and unit off-diagonal (negative LDL^T pivots)."""
    e = np.asarray(energies, dtype=float)
    shape = e.shape
    e = e.reshape(-1)
    count = np.zeros(e.size, dtype=np.int64)
    tiny = 1e-300
    d = diag[0] - e
    count += d < 0
    for a in diag[1:]:
        d = np.where(d == 0, tiny, d)
        d = a - e - 1.0 / d
        count += d < 0
    return count.reshape(shape)


def _bisect_eigs(diag: np.ndarray, idx: np.ndarray, lo: float, hi: float, iters: int = 60) -> np.ndarray:
    """Eigenvalues with the given 0-based indices by simultaneous bisection."""
    a = np.full(idx.size, lo)
    b = np.full(idx.size, hi)
    for _ in range(iters):
        m = 0.5 * (a + b)
        below = sturm_count(diag, m) <= idx
        a = np.where(below, m, a)
        b = np.where(below, b, m)
        if np.all(b - a <= 4e-16 * np.maximum(1.0, np.abs(a))):
            break
    return 0.5 * (a + b)


def finite_section_spectrum(c: SchrodingerCocycle, n: int, theta=None, count: int | None = None,
                            window: tuple[float, float] | None = None) -> np.ndarray:
    """Sorted eigenvalues of the n x n section with diagonal ``lam v(theta + j alpha)``.

    ``window`` restricts to eigenvalues inside [a, b]; ``count`` keeps the
    lowest ``count`` of those.
    """
    theta = np.zeros(c.dim) if theta is None else theta
    diag = section_diagonal(c, n, theta)
    lo = float(diag.min()) - 2.0 - 1e-9
    hi = float(diag.max()) + 2.0 + 1e-9
    if window is not None:
        w0, w1 = sturm_count(diag, np.array([window[0], window[1]]))
        idx = np.arange(w0, w1)
        lo, hi = max(lo, window[0]), min(hi, window[1])
    else:
        idx = np.arange(n)
    if count is not None:
        idx = idx[:count]
    if idx.size == 0:
        return np.zeros(0)
    return np.sort(_bisect_eigs(diag, idx, lo, hi))


def section_ids(c: SchrodingerCocycle, energies, n: int = 2000, phases: int = 8) -> np.ndarray:
    """Phase-averaged eigenvalue counting function ``#{eig < E} / n``."""
    energies = np.asarray(energies, dtype=float)
    th = phase_lattice(phases, c.dim)
    tot = np.zeros(energies.shape)
    for p in range(phases):
        tot += sturm_count(section_diagonal(c, n, th[p]), energies)
    return tot / (n * phases)


@dataclass(frozen=True)
class SectionGap:
    e_minus: float
    e_plus: float
    per_phase: tuple[tuple[float, float], ...]

    @property
    def width(self) -> float:
        return self.e_plus - self.e_minus


def section_gaps(c: SchrodingerCocycle, window: tuple[float, float], n: int = 2000, phases: int = 8,
                 factor: float = 20.0, min_width: float = 0.0) -> list[SectionGap]:
    """Gaps of the finite-section spectrum inside ``window``.

    Per phase, spacings above ``factor`` times the median spacing are gap
    candidates; consecutive large spacings are merged so that isolated
    boundary states inside a gap do not split it.  Gaps are matched across
    phases by overlap and their edges are the medians over phases.
    """
    th = phase_lattice(phases, c.dim)
    per = []
    for p in range(phases):
        e = finite_section_spectrum(c, n, th[p], window=window)
        if e.size < 3:
            per.append([])
            continue
        sp = np.diff(e)
        big = sp > factor * np.median(sp)
        runs = []
        i = 0
        while i < sp.size:
            if big[i]:
                j = i
                while j + 1 < sp.size and big[j + 1]:
                    j += 1
                runs.append((float(e[i]), float(e[j + 1])))
                i = j + 1
            else:
                i += 1
        per.append(runs)
    # match by overlap against the phase with the most gaps
    ref = max(per, key=len) if per else []
    out = []
    for g0, g1 in ref:
        lows, highs, pairs = [], [], []
        for runs in per:
            hit = [(a, b) for a, b in runs if a < g1 and b > g0]
            if hit:
                a = min(x for x, _ in hit)
                b = max(y for _, y in hit)
                lows.append(a)
                highs.append(b)
                pairs.append((a, b))
        if len(pairs) * 2 < phases:
            continue
        gap = SectionGap(float(np.median(lows)), float(np.median(highs)), tuple(pairs))
        if gap.width > min_width:
            out.append(gap)
    return out
