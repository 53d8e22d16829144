"""Small-divisor arithmetic: continued fractions, torus distances,
Diophantine margins and resonance search.

Two distances are provided and never mixed: ``torus_dist`` works mod 1 (IDS
labels, ``||q alpha||``) and ``angle_dist`` works mod 2pi (phases
``<k, alpha>``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

TWO_PI_LD = np.longdouble("6.28318530717958647692528676655900577")
TERMINATE_TOL = 1e-12


class TerminatingExpansion(ValueError):
    pass


class InsufficientDepth(ValueError):
    pass


@dataclass(frozen=True)
class DCParams:
    gamma: float
    tau: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class ContinuedFraction:
    alpha: Fraction
    partial_quotients: tuple[int, ...]
    convergents: tuple[tuple[int, int], ...]
    terminating: bool = False

    @property
    def q(self) -> list[int]:
        return [q for _, q in self.convergents]

    @property
    def p(self) -> list[int]:
        return [p for p, _ in self.convergents]

    def qnorm(self, q: int) -> Fraction:
        """Exact ``||q alpha||`` for the stored rational value of alpha."""
        x = q * self.alpha
        return abs(x - round(x))

    def tsv(self) -> str:
        rows = ["k\ta_k\tp_k\tq_k"]
        a = (0,) + self.partial_quotients
        for k, (p, q) in enumerate(self.convergents):
            rows.append(f"{k}\t{a[k]}\t{p}\t{q}")
        return "\n".join(rows) + "\n"


def cf_expand(alpha, depth: int) -> ContinuedFraction:
    """Expansion of the fractional part of ``alpha`` to ``depth`` quotients.

    Floats are expanded through their exact binary value; the expansion is
    flagged terminating as soon as a remainder drops below 1e-12 (floats) or
    hits zero (``Fraction`` input).
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    exact = isinstance(alpha, Fraction)
    x = Fraction(alpha) if exact else Fraction(float(alpha))
    x -= x.numerator // x.denominator
    tol = Fraction(0) if exact else Fraction(TERMINATE_TOL)
    conv = [(0, 1)]
    quotients: list[int] = []
    p2, q2, p1, q1 = 1, 0, 0, 1
    rem = x
    terminating = rem <= tol
    while not terminating and len(quotients) < depth:
        inv = 1 / rem
        a = inv.numerator // inv.denominator
        rem = inv - a
        quotients.append(a)
        p2, q2, p1, q1 = p1, q1, a * p1 + p2, a * q1 + q2
        conv.append((p1, q1))
        terminating = rem <= tol
    return ContinuedFraction(Fraction(x), tuple(quotients), tuple(conv), terminating)


def check_convergent_bounds(cf: ContinuedFraction) -> list[tuple[int, bool, bool]]:
    """For each n with q_{n+1} known: (n, upper ok, lower ok) for
    ``1/(q_n + q_{n+1}) < ||q_n alpha|| <= 1/q_{n+1}``.

    The lower bound is checked from n = 1 on; at n = 0 the nearest integer
    to alpha need not be p_0 = 0.
    """
    q = cf.q
    out = []
    for n in range(len(q) - 1):
        d = cf.qnorm(q[n])
        upper = d <= Fraction(1, q[n + 1])
        last = cf.terminating and n == len(q) - 2
        lower = last or n == 0 or d > Fraction(1, q[n] + q[n + 1])
        out.append((n, upper, lower))
    return out


def torus_dist(x):
    """Distance to the nearest integer, in [0, 1/2]."""
    x = np.asarray(x, dtype=float)
    r = np.abs(x - np.round(x))
    return float(r) if r.ndim == 0 else r


def angle_dist(x):
    """Distance to the nearest multiple of 2pi, in [0, pi]."""
    x = np.asarray(x, dtype=np.longdouble)
    r = np.abs(x - TWO_PI_LD * np.round(x / TWO_PI_LD))
    r = r.astype(float)
    return float(r) if r.ndim == 0 else r


def phase(keys, alpha):
    """``<n, alpha>`` reduced to (-pi, pi], accumulated in extended precision."""
    n = np.asarray(keys, dtype=np.longdouble)
    a = np.asarray(alpha, dtype=np.longdouble).reshape(-1)
    if n.ndim == 1 and a.size > 1:
        n = n[None, :]
    x = (n * a).sum(axis=-1) if n.ndim > 1 else n * a[0]
    r = x - TWO_PI_LD * np.round(x / TWO_PI_LD)
    r = r.astype(float)
    return float(r) if r.ndim == 0 else r


def l1_ball(d: int, radius: float, include_zero: bool = False) -> np.ndarray:
    """All integer vectors with ``0 < |n|_1 <= radius``, sorted by |n| then lexicographically."""
    r = int(np.floor(radius + 1e-12))
    if r < 0:
        return np.zeros((0, d), np.int64)
    axis = np.arange(-r, r + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    size = np.abs(grid).sum(axis=1)
    keep = (size <= r) & (include_zero | (size > 0))
    grid, size = grid[keep], size[keep]
    order = np.lexsort(tuple(grid[:, i] for i in reversed(range(d))) + (size,))
    return grid[order]


def dc_margin(alpha, params: DCParams, k_max: int) -> float:
    """``min_{0<|n|<=k_max} |n|^tau dist(<n,alpha>, 2piZ) / gamma``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    ns = l1_ball(alpha.size, k_max)
    if ns.shape[0] == 0:
        return float("inf")
    dist = angle_dist(np.abs(phase(ns, alpha)))
    size = np.abs(ns).sum(axis=1).astype(float)
    return float(np.min(size ** params.tau * np.atleast_1d(dist) / params.gamma))


@dataclass(frozen=True)
class ResonanceSite:
    k: tuple[int, ...]
    distance: float
    count: int

    @property
    def multiple(self) -> bool:
        return self.count > 1

    @property
    def size(self) -> int:
        return int(sum(abs(x) for x in self.k))


def find_resonance(rho: float, alpha, bound: float, eta: float) -> ResonanceSite | None:
    """The k with ``0<|k|<=bound`` and ``|2rho - <k,alpha>|_{2pi} < eta``.

    Several hits signal a non-Diophantine regime; the smallest |k| is
    returned (closest on ties) and ``count`` records the multiplicity.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    ks = l1_ball(alpha.size, bound)
    if ks.shape[0] == 0:
        return None
    ph = np.asarray(phase(ks, alpha), dtype=np.longdouble)
    dist = np.atleast_1d(angle_dist(np.longdouble(2 * rho) - ph))
    hits = np.nonzero(dist < eta)[0]
    if hits.size == 0:
        return None
    size = np.abs(ks[hits]).sum(axis=1)
    best = hits[np.lexsort((dist[hits], size))[0]]
    return ResonanceSite(tuple(int(x) for x in ks[best]), float(dist[best]), int(hits.size))


@dataclass(frozen=True)
class ReturnTime:
    q: int
    kind: str  # single, sum or intermediate
    q_nj: int
    window: tuple[float, float]
    in_window: bool
    distance: float
    bound: float
    small: bool
    parts: tuple[int, ...] = field(default=())


def best_return_time(cf: ContinuedFraction, n_j: int) -> ReturnTime:
    """A return time ``q*`` in ``[21N/20, 41N/20]`` with ``||q* alpha|| < 3/q_{n_j}``.

    Denominators are tried first, then sums of consecutive denominators, then
    the remaining intermediate fractions ``r q_m + q_{m-1}``; the kind used
    is recorded.
    """
    if cf.terminating:
        raise TerminatingExpansion("terminating expansion: alpha is rational at working precision")
    q = cf.q
    lo, hi = Fraction(21 * n_j, 20), Fraction(41 * n_j, 20)
    below = [x for x in q if x < n_j]
    reached = [x for x in q if x >= n_j]
    if not below or not reached:
        raise InsufficientDepth("insufficient expansion depth for this scale")
    q_nj = max(below)
    bound = Fraction(3, q_nj)

    def make(val, kind, parts):
        d = cf.qnorm(val)
        return ReturnTime(val, kind, q_nj, (float(lo), float(hi)), lo <= val <= hi,
                          float(d), float(bound), d < bound, parts)

    singles = [(x, "single", (x,)) for x in sorted(set(q))]
    sums = [(q[m] + q[m + 1], "sum", (q[m], q[m + 1])) for m in range(1, len(q) - 1)]
    inter = []
    for m in range(1, len(q) - 1):
        a_next = cf.partial_quotients[m] if m < len(cf.partial_quotients) else 0
        for r in range(2, a_next):
            inter.append((r * q[m] + q[m - 1], "intermediate", (r, q[m], q[m - 1])))
    for val, kind, parts in itertools.chain(singles, sums, inter):
        if lo <= val <= hi:
            rec = make(val, kind, parts)
            if rec.small:
                return rec
    if q[-1] <= hi:
        raise InsufficientDepth("insufficient expansion depth: window not reached")
    raise InsufficientDepth("no denominator, consecutive sum or intermediate fraction fits the window")
