"""Sparse trigonometric series on the torus (R/2piZ)^d.

A series stores integer keys ``K`` and coefficients ``V``; the frequency of
key ``k`` is ``k / denom`` so that half-integer frequencies (needed by the
half-angle rotations of the reducibility scheme) are exact.  Coefficients are
complex scalars or complex 2x2 matrices.  The multi-index size ``|k|`` is the
l1 norm everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .algebra2 import inv2, op_norm

Kind = Literal["scalar", "matrix"]
Part = Literal["low", "high"]


def kdot(keys: np.ndarray, x) -> np.ndarray:
    return np.asarray(keys, dtype=float) @ np.asarray(x, dtype=float)


class FourierSeries:
    """Immutable finite trigonometric series."""

    __slots__ = ("keys", "vals", "denom")

    def __init__(self, keys, vals, denom: int = 1, _canonical: bool = False):
        keys = np.asarray(keys, dtype=np.int64)
        vals = np.asarray(vals, dtype=complex)
        if keys.ndim != 2:
            raise ValueError("keys must be an (n, d) integer array")
        if vals.shape[0] != keys.shape[0] or vals.ndim not in (1, 3):
            raise ValueError("vals must be (n,) or (n, 2, 2) matching keys")
        if not _canonical:
            keys, vals = _canonical_form(keys, vals)
        keys.setflags(write=False)
        vals.setflags(write=False)
        self.keys = keys
        self.vals = vals
        self.denom = int(denom)

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, dim: int, kind: Kind = "scalar") -> "FourierSeries":
        shape = (0,) if kind == "scalar" else (0, 2, 2)
        return cls(np.zeros((0, dim), np.int64), np.zeros(shape, complex), 1, True)

    @classmethod
    def constant(cls, value, dim: int) -> "FourierSeries":
        v = np.asarray(value, dtype=complex)
        return cls(np.zeros((1, dim), np.int64), v[None, ...])

    @classmethod
    def from_dict(cls, mapping: dict, dim: int | None = None, kind: Kind | None = None,
                  denom: int = 1) -> "FourierSeries":
        items = list(mapping.items())
        if not items:
            if dim is None:
                raise ValueError("dim required for an empty series")
            return cls.zeros(dim, kind or "scalar")
        keys = np.array([np.atleast_1d(k) for k, _ in items], dtype=np.int64)
        vals = np.array([np.asarray(v, dtype=complex) for _, v in items])
        return cls(keys, vals, denom)

    @classmethod
    def cosine(cls, k, coeff: float = 1.0) -> "FourierSeries":
        """``coeff * cos<k, theta>``."""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if not np.any(k):
            return cls.constant(coeff, k.size)
        return cls(np.stack([k, -k]), np.array([0.5 * coeff, 0.5 * coeff], complex))

    # basic properties ---------------------------------------------------
    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @property
    def kind(self) -> Kind:
        return "scalar" if self.vals.ndim == 1 else "matrix"

    def __len__(self) -> int:
        return self.keys.shape[0]

    def __repr__(self) -> str:
        return f"FourierSeries(dim={self.dim}, kind={self.kind}, modes={len(self)}, denom={self.denom})"

    def freqs(self) -> np.ndarray:
        return self.keys / self.denom

    def abs_k(self) -> np.ndarray:
        return np.abs(self.keys).sum(axis=1) / self.denom

    def degree(self) -> float:
        return float(self.abs_k().max()) if len(self) else 0.0

    def coef_norms(self) -> np.ndarray:
        return np.abs(self.vals) if self.kind == "scalar" else op_norm(self.vals)

    def to_dict(self) -> dict:
        return {tuple(int(x) for x in k): v.copy() if v.ndim else complex(v)
                for k, v in zip(self.keys, self.vals)}

    def coeff(self, k):
        """Coefficient at frequency ``k`` (given in units of 1/denom)."""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        hit = np.nonzero(np.all(self.keys == k, axis=1))[0]
        if hit.size:
            v = self.vals[hit[0]]
            return v.copy() if v.ndim else complex(v)
        return np.zeros((2, 2), complex) if self.kind == "matrix" else 0j

    def mean(self):
        return self.coeff(np.zeros(self.dim, np.int64))

    # arithmetic ---------------------------------------------------------
    def with_denom(self, denom: int) -> "FourierSeries":
        if denom == self.denom:
            return self
        if denom % self.denom:
            raise ValueError("denominator must be a multiple of the current one")
        return FourierSeries(self.keys * (denom // self.denom), self.vals, denom, True)

    def reduced(self) -> "FourierSeries":
        """Smallest denominator representing the same frequencies."""
        keys, d = self.keys, self.denom
        while d % 2 == 0 and not np.any(keys % 2):
            keys, d = keys // 2, d // 2
        return self if d == self.denom else FourierSeries(keys, self.vals, d, True)

    def modulate_entries(self, shifts) -> "FourierSeries":
        """Shift the frequencies of each matrix entry (i, j) by ``shifts[i][j]``
        (integer key vectors in units of 1/denom)."""
        parts = []
        dim = self.dim
        for i in range(2):
            for j in range(2):
                e = self.entry(i, j)
                sh = np.asarray(shifts[i][j], dtype=np.int64).reshape(dim)
                unit = np.zeros((2, 2), complex)
                unit[i, j] = 1.0
                parts.append((e.keys + sh, e.vals[:, None, None] * unit))
        keys = np.concatenate([k for k, _ in parts]).reshape(-1, dim)
        vals = np.concatenate([v for _, v in parts]).reshape(-1, 2, 2)
        return FourierSeries(keys, vals, self.denom)

    def _aligned(self, other: "FourierSeries"):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        d = math.lcm(self.denom, other.denom)
        return self.with_denom(d), other.with_denom(d), d

    def _lift_kind(self, kind: Kind) -> "FourierSeries":
        if self.kind == kind:
            return self
        if kind == "matrix":
            return FourierSeries(self.keys, self.vals[:, None, None] * np.eye(2), self.denom, True)
        raise ValueError("cannot demote a matrix series")

    def __add__(self, other):
        if not isinstance(other, FourierSeries):
            other = FourierSeries.constant(other, self.dim)
        a, b, d = self._aligned(other)
        kind = "matrix" if "matrix" in (a.kind, b.kind) else "scalar"
        a, b = a._lift_kind(kind), b._lift_kind(kind)
        return FourierSeries(np.concatenate([a.keys, b.keys]), np.concatenate([a.vals, b.vals]), d)

    __radd__ = __add__

    def __neg__(self):
        return FourierSeries(self.keys, -self.vals, self.denom, True)

    def __sub__(self, other):
        return self + (-other if isinstance(other, FourierSeries) else -np.asarray(other))

    def __mul__(self, c):
        if isinstance(c, FourierSeries):
            return product(self, c)[0]
        c = complex(c)
        if c == 0:
            return FourierSeries.zeros(self.dim, self.kind)
        return FourierSeries(self.keys, self.vals * c, self.denom, True)

    __rmul__ = __mul__

    def lmul(self, p) -> "FourierSeries":
        """Constant matrix times series."""
        p = np.asarray(p, dtype=complex)
        return FourierSeries(self.keys, np.einsum("ij,njk->nik", p, self._lift_kind("matrix").vals),
                             self.denom)

    def rmul(self, q) -> "FourierSeries":
        q = np.asarray(q, dtype=complex)
        return FourierSeries(self.keys, np.einsum("nij,jk->nik", self._lift_kind("matrix").vals, q),
                             self.denom)

    def conjugate_by(self, p, pinv=None) -> "FourierSeries":
        """Coefficient-wise ``P F(k) P^{-1}``."""
        p = np.asarray(p, dtype=complex)
        pinv = np.linalg.inv(p) if pinv is None else np.asarray(pinv, dtype=complex)
        return FourierSeries(self.keys, np.einsum("ij,njk,kl->nil", p, self.vals, pinv), self.denom)

    def shift(self, alpha) -> "FourierSeries":
        """The series of ``theta -> F(theta + alpha)``."""
        ph = np.exp(1j * kdot(self.keys, alpha) / self.denom)
        v = self.vals * (ph if self.kind == "scalar" else ph[:, None, None])
        return FourierSeries(self.keys, v, self.denom, True)

    def modulate(self, k) -> "FourierSeries":
        """Multiply by ``e^{i<k, theta>}``; ``k`` in units of 1/denom."""
        k = np.asarray(k, dtype=np.int64)
        return FourierSeries(self.keys + k, self.vals, self.denom, True)

    def entry(self, i: int, j: int) -> "FourierSeries":
        return FourierSeries(self.keys, self.vals[:, i, j], self.denom)

    @staticmethod
    def from_entries(e00, e01, e10, e11) -> "FourierSeries":
        parts = []
        for (i, j), e in zip(((0, 0), (0, 1), (1, 0), (1, 1)), (e00, e01, e10, e11)):
            unit = np.zeros((2, 2), complex)
            unit[i, j] = 1.0
            parts.append((e, unit))
        dim = parts[0][0].dim
        d = math.lcm(*(e.denom for e, _ in parts))
        keys = np.concatenate([e.with_denom(d).keys for e, _ in parts])
        vals = np.concatenate([e.vals[:, None, None] * u for e, u in parts])
        return FourierSeries(keys.reshape(-1, dim), vals, d)

    def trace(self) -> "FourierSeries":
        return FourierSeries(self.keys, self.vals[:, 0, 0] + self.vals[:, 1, 1], self.denom)

    def adjugate(self) -> "FourierSeries":
        """Adjugate; equals the inverse for determinant-one values."""
        v = self.vals
        out = np.empty_like(v)
        out[:, 0, 0], out[:, 1, 1] = v[:, 1, 1], v[:, 0, 0]
        out[:, 0, 1], out[:, 1, 0] = -v[:, 0, 1], -v[:, 1, 0]
        return FourierSeries(self.keys, out, self.denom, True)

    def traceless_part(self) -> "FourierSeries":
        t = 0.5 * (self.vals[:, 0, 0] + self.vals[:, 1, 1])
        return FourierSeries(self.keys, self.vals - t[:, None, None] * np.eye(2), self.denom)

    def select(self, mask) -> "FourierSeries":
        mask = np.asarray(mask, dtype=bool)
        return FourierSeries(self.keys[mask], self.vals[mask], self.denom, True)

    def prune(self, tol: float) -> "FourierSeries":
        return self.select(self.coef_norms() > tol)

    # analysis -----------------------------------------------------------
    def norm(self, h: float = 0.0) -> float:
        return wiener_norm(self, h)

    def __call__(self, theta):
        return evaluate(self, theta)

    def is_real_symmetric(self, tol: float = 1e-12) -> bool:
        """``F(-k) = conj(F(k))``, i.e. the series takes real values."""
        other = FourierSeries(-self.keys, np.conj(self.vals), self.denom)
        return (self - other).norm() <= tol * max(1.0, self.norm())

    def is_su11(self, tol: float = 1e-12) -> bool:
        """Coefficient symmetry of [[iu, w], [conj(w), -iu]] with real ``u``."""
        if self.kind != "matrix":
            return False
        scale = tol * max(1.0, self.norm())
        d00, d11 = self.entry(0, 0), self.entry(1, 1)
        u = d00 * (-1j)
        u_conj = FourierSeries(-u.keys, np.conj(u.vals), u.denom)
        w = self.entry(0, 1)
        wbar = FourierSeries(-w.keys, np.conj(w.vals), w.denom)
        return ((d00 + d11).norm() <= scale and (u - u_conj).norm() <= scale
                and (self.entry(1, 0) - wbar).norm() <= scale)

    def dumps(self) -> str:
        return dumps(self)


def _canonical_form(keys: np.ndarray, vals: np.ndarray):
    if keys.shape[0] == 0:
        return keys.copy(), vals.copy()
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    out = np.zeros((uniq.shape[0],) + vals.shape[1:], complex)
    np.add.at(out, inv, vals)
    nz = np.abs(out).reshape(out.shape[0], -1).max(axis=1) > 0
    return np.ascontiguousarray(uniq[nz]), out[nz]


def _kind_pair(f: FourierSeries, g: FourierSeries):
    if f.kind == "scalar" and g.kind == "scalar":
        return "ss"
    if f.kind == "scalar":
        return "sm"
    if g.kind == "scalar":
        return "ms"
    return "mm"


def wiener_norm(f: FourierSeries, h: float = 0.0) -> float:
    """``sum_k ||F(k)|| e^{|k| h}`` with the operator norm on matrix coefficients."""
    if h < 0:
        raise ValueError("width must be nonnegative")
    if len(f) == 0:
        return 0.0
    return float(np.sum(f.coef_norms() * np.exp(f.abs_k() * h)))


def truncate(f: FourierSeries, n: float, part: Part = "low") -> FourierSeries:
    """``low`` keeps ``|k| < n`` (T_N); ``high`` keeps ``|k| >= n`` (R_N)."""
    if n <= 0:
        raise ValueError("truncation order must be positive")
    low = f.abs_k() < n
    return f.select(low if part == "low" else ~low)


def product(f: FourierSeries, g: FourierSeries, max_degree: float | None = None,
            h: float = 0.0) -> tuple[FourierSeries, float]:
    """Pointwise product by convolution.

    Modes with ``|k| > max_degree`` are dropped and their Wiener mass at
    width ``h`` is returned as the tail bound.
    """
    f, g, d = f._aligned(g)
    if len(f) == 0 or len(g) == 0:
        kind = "matrix" if "matrix" in (f.kind, g.kind) else "scalar"
        return FourierSeries.zeros(f.dim, kind), 0.0
    keys = (f.keys[:, None, :] + g.keys[None, :, :]).reshape(-1, f.dim)
    pair = _kind_pair(f, g)
    if pair == "ss":
        vals = (f.vals[:, None] * g.vals[None, :]).reshape(-1)
    elif pair == "sm":
        vals = (f.vals[:, None, None, None] * g.vals[None, :]).reshape(-1, 2, 2)
    elif pair == "ms":
        vals = (f.vals[:, None] * g.vals[None, :, None, None]).reshape(-1, 2, 2)
    else:
        vals = np.einsum("aij,bjk->abik", f.vals, g.vals).reshape(-1, 2, 2)
    out = FourierSeries(keys, vals, d)
    if max_degree is None:
        return out, 0.0
    keep = out.abs_k() <= max_degree + 1e-12
    tail = wiener_norm(out.select(~keep), h)
    return out.select(keep), tail


def evaluate(f: FourierSeries, theta):
    """Value at one point (shape (d,)) or many points (shape (m, d))."""
    th = np.asarray(theta, dtype=float)
    single = th.ndim <= 1
    th = th.reshape(-1, f.dim)
    if len(f) == 0:
        shape = (th.shape[0],) if f.kind == "scalar" else (th.shape[0], 2, 2)
        out = np.zeros(shape, complex)
    else:
        ph = np.exp(1j * (th @ f.keys.T.astype(float)) / f.denom)
        out = ph @ f.vals if f.kind == "scalar" else np.einsum("mn,nij->mij", ph, f.vals)
    return out[0] if single else out


@dataclass(frozen=True)
class AdjointReport:
    b_minus_id: float
    w_norm: float
    change: float
    bound: float | None
    bound_ok: bool | None
    tail_bound: float


def adjoint_action(b: FourierSeries, w: FourierSeries, max_degree: float | None = None,
                   h: float = 0.0) -> tuple[FourierSeries, AdjointReport]:
    """``B W B^{-1}`` for a group-valued ``B`` (determinant one).

    When ``|B - I|_h <= 1/2`` the bound ``|BWB^{-1} - W|_h <= 4|B - I|_h |W|_h``
    is evaluated and reported.
    """
    bw, t1 = product(b, w, max_degree, h)
    out, t2 = product(bw, b.adjugate(), max_degree, h)
    bmi = wiener_norm(b - np.eye(2), h)
    wn = wiener_norm(w, h)
    change = wiener_norm(out - w, h)
    bound = ok = None
    if bmi <= 0.5:
        bound = 4.0 * bmi * wn
        ok = change <= bound * (1 + 1e-12) + 1e-15
    return out, AdjointReport(bmi, wn, change, bound, ok, t1 + t2)


def adjoint_inverse(b: FourierSeries, w: FourierSeries, max_degree: float | None = None,
                    h: float = 0.0) -> FourierSeries:
    """``B^{-1} W B`` for determinant-one ``B``."""
    return adjoint_action(b.adjugate(), w, max_degree, h)[0]


def const_inverse(p) -> np.ndarray:
    return inv2(p)


# serialisation ----------------------------------------------------------
def _fmt_key(k, denom: int) -> list[str]:
    if denom == 1:
        return [str(int(x)) for x in k]
    return [repr(x / denom) for x in k]


def dumps(f: FourierSeries) -> str:
    lines = [f"# fourier dim={f.dim} kind={f.kind} denom={f.denom}"]
    for k, v in zip(f.keys, f.vals):
        flat = [v] if f.kind == "scalar" else list(v.reshape(-1))
        nums = []
        for z in flat:
            nums += [repr(float(z.real)), repr(float(z.imag))]
        lines.append(" ".join(_fmt_key(k, f.denom) + nums))
    return "\n".join(lines) + "\n"


def loads(text: str, dim: int | None = None, kind: Kind | None = None) -> FourierSeries:
    denom = 1
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    if key == "dim":
                        dim = int(val)
                    elif key == "kind":
                        kind = val  # type: ignore[assignment]
                    elif key == "denom":
                        denom = int(val)
            continue
        rows.append(line.split())
    if not rows:
        if dim is None:
            raise ValueError("empty series without a dim header")
        return FourierSeries.zeros(dim, kind or "scalar")
    ncol = len(rows[0])
    if kind is None:
        kind = "matrix" if dim is not None and ncol == dim + 8 else "scalar"
    nval = 2 if kind == "scalar" else 8
    if dim is None:
        dim = ncol - nval
    keys, vals = [], []
    for r in rows:
        if len(r) != dim + nval:
            raise ValueError(f"malformed series line: {' '.join(r)}")
        keys.append([round(float(x) * denom) for x in r[:dim]])
        nums = [float(x) for x in r[dim:]]
        z = np.array(nums[0::2]) + 1j * np.array(nums[1::2])
        vals.append(z[0] if kind == "scalar" else z.reshape(2, 2))
    return FourierSeries(np.array(keys, np.int64), np.array(vals), denom)
