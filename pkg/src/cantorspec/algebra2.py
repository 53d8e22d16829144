"""Closed-form kernel for 2x2 matrices in SL(2,R) and SU(1,1).

Two frames are used throughout.  The real frame holds SL(2,R) and sl(2,R);
the disc frame holds SU(1,1) = {[[a, b], [conj(b), conj(a)]]} and su(1,1).
They are exchanged by the fixed unitary ``P_DIAMOND``:
``disc = P_DIAMOND @ real @ P_DIAMOND^{-1}``.
"""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

Frame = Literal["real", "disc"]
REAL: Frame = "real"
DISC: Frame = "disc"

CLASSIFY_TOL = 1e-8
_SERIES_CUTOFF = 1e-4

P_DIAMOND = np.array([[-1j, -1.0], [-1j, 1.0]], dtype=complex) / cmath.sqrt(-2j)
P_DIAMOND_INV = np.linalg.inv(P_DIAMOND)
# swap inside SL(2,C); used so that a real rotation by t gets rho = +t
_SWAP = np.array([[0, 1j], [1j, 0]], dtype=complex)


@dataclass(frozen=True)
class Mat2:
    """A 2x2 complex matrix tagged with the frame it lives in."""

    m: np.ndarray
    frame: Frame = REAL

    def __post_init__(self):
        arr = np.array(self.m, dtype=complex).reshape(2, 2)
        arr.setflags(write=False)
        object.__setattr__(self, "m", arr)
        if self.frame not in (REAL, DISC):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __array__(self, dtype=None, copy=None):
        return self.m if dtype is None else self.m.astype(dtype)

    def det(self) -> complex:
        return det2(self.m)


class SpectralData(NamedTuple):
    eigenvalues: tuple[complex, complex]
    rho: float | None
    kind: Literal["elliptic", "hyperbolic", "parabolic"]


class NotEllipticError(ValueError):
    def __init__(self, data: SpectralData):
        super().__init__(f"not elliptic ({data.kind}, eigenvalues {data.eigenvalues})")
        self.data = data


class NotParabolicError(ValueError):
    def __init__(self, data: SpectralData):
        super().__init__(f"not parabolic ({data.kind}, eigenvalues {data.eigenvalues})")
        self.data = data


class Diagonalization(NamedTuple):
    p: Mat2
    rho: float


def _arr(a) -> np.ndarray:
    return np.asarray(a, dtype=complex)


def _frame_of(a, default: Frame = REAL) -> Frame:
    return a.frame if isinstance(a, Mat2) else default


def det2(a) -> np.ndarray:
    a = _arr(a)
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def inv2(a) -> np.ndarray:
    """Inverse via the adjugate (exact for determinant-one input)."""
    a = _arr(a)
    out = np.empty_like(a)
    d = det2(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / d[..., None, None]


def op_norm(a) -> np.ndarray:
    """Spectral norm of 2x2 matrices (vectorised over leading axes)."""
    a = _arr(a)
    fro2 = np.sum(np.abs(a) ** 2, axis=(-2, -1))
    d = np.abs(det2(a))
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * d * d, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def convert_frame(m, target: Frame, source: Frame | None = None) -> Mat2:
    """Move ``m`` to the ``target`` frame; ``source`` is needed for bare arrays."""
    src = source if source is not None else _frame_of(m)
    a = _arr(m)
    if src == target:
        return Mat2(a, target)
    if target == DISC:
        return Mat2(P_DIAMOND @ a @ P_DIAMOND_INV, DISC)
    return Mat2(P_DIAMOND_INV @ a @ P_DIAMOND, REAL)


def eigenvalues(a) -> tuple[complex, complex]:
    """Roots of the characteristic quadratic, larger modulus first."""
    a = _arr(a)
    t = complex(a[0, 0] + a[1, 1])
    d = complex(det2(a))
    disc = cmath.sqrt(t * t - 4.0 * d)
    mu1 = 0.5 * (t + disc) if abs(t + disc) >= abs(t - disc) else 0.5 * (t - disc)
    mu2 = d / mu1 if mu1 != 0 else 0.5 * (t - disc)
    return mu1, mu2


def classify(a, tol: float = CLASSIFY_TOL) -> SpectralData:
    ev = eigenvalues(a)
    t = float(np.real(_arr(a)[0, 0] + _arr(a)[1, 1]))
    if abs(abs(t) - 2.0) <= tol:
        return SpectralData(ev, 0.0 if t > 0 else math.pi, "parabolic")
    if abs(t) < 2.0:
        return SpectralData(ev, math.acos(t / 2.0), "elliptic")
    return SpectralData(ev, None, "hyperbolic")


def trc_norm(a) -> float:
    """Corner |c| of a unitary triangularisation, via the Frobenius identity.

    ``|c|^2 = ||A||_F^2 - |mu_1|^2 - |mu_2|^2`` is evaluated in the rearranged
    form ``(|x|^2 + 2|b|^2 + 2|c|^2 - |x^2 + 4bc|) / 2`` with ``x = a - d``,
    using ``|mu_1|^2 + |mu_2|^2 = (|tr|^2 + |tr^2 - 4 det|) / 2``; this avoids
    cancelling the trace part.
    """
    a = _arr(a)
    x = a[0, 0] - a[1, 1]
    b, c = a[0, 1], a[1, 0]
    pos = abs(x) ** 2 + 2 * abs(b) ** 2 + 2 * abs(c) ** 2
    r = 0.5 * (pos - abs(x * x + 4 * b * c))
    if r < 0:
        if r < -1e-10 * max(1.0, pos):
            raise ArithmeticError(f"negative corner radicand {r:.3e}: eigenvalue failure")
        r = 0.0
    return math.sqrt(r)


def _diagonalize_disc(a: np.ndarray) -> tuple[np.ndarray, float]:
    t = float(np.real(a[0, 0] + a[1, 1]))
    r0 = math.acos(max(-1.0, min(1.0, t / 2.0)))
    best = None
    for sgn in (1.0, -1.0):
        lam = cmath.exp(1j * sgn * r0)
        # two candidate eigenvectors, take the better conditioned one
        c1 = np.array([a[0, 1], lam - a[0, 0]])
        c2 = np.array([lam - a[1, 1], a[1, 0]])
        v = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
        if np.linalg.norm(v) == 0:
            v = np.array([1.0, 0.0]) if abs(a[0, 0] - lam) < abs(a[1, 1] - lam) else np.array([0.0, 1.0])
        q = abs(v[0]) ** 2 - abs(v[1]) ** 2
        if best is None or q > best[0]:
            best = (q, v, sgn * r0)
    q, v, rho = best
    if q <= 0:
        raise NotEllipticError(classify(a))
    x, y = v / math.sqrt(q)
    p = np.array([[np.conj(x), -np.conj(y)], [-y, x]])
    # fix the phase so that the (0,0) entry is real and positive
    ph = np.exp(-1j * np.angle(p[0, 0])) if abs(p[0, 0]) > 0 else 1.0
    p = np.array([[p[0, 0] * ph, p[0, 1] * ph], [p[1, 0] * np.conj(ph), p[1, 1] * np.conj(ph)]])
    return p, rho


def diagonalize_elliptic(a, tol: float = CLASSIFY_TOL) -> Diagonalization:
    """Return ``P`` and ``rho`` with ``P A P^{-1} = diag(e^{i rho}, e^{-i rho})``.

    For disc-frame input ``P`` lies in SU(1,1).  For real-frame input ``P`` is
    an SU(1,1) matrix composed with the (unitary) frame change, and the
    ordering is chosen so that the rotation by angle ``t`` in the plane gets
    ``rho = t``.  The norm bound ``||P||^2 <= 2 ||A|| / |rho|`` is checked and
    a warning is emitted on violation.
    """
    frame = _frame_of(a)
    arr = _arr(a)
    data = classify(arr, tol)
    if data.kind != "elliptic":
        raise NotEllipticError(data)
    if frame == DISC:
        p, rho = _diagonalize_disc(arr)
        out = p
    else:
        disc = P_DIAMOND @ arr @ P_DIAMOND_INV
        p, rho = _diagonalize_disc(disc)
        out = _SWAP @ p @ P_DIAMOND
        rho = -rho
    bound = 2.0 * float(op_norm(arr)) / abs(rho) + 1e-8
    if float(op_norm(out)) ** 2 > bound:
        warnings.warn(f"conjugator norm bound violated: {float(op_norm(out))**2:.3e} > {bound:.3e}")
    return Diagonalization(Mat2(out, DISC), rho)


def _cosh_sinhc(mu2: complex) -> tuple[complex, complex]:
    """cosh(mu) and sinh(mu)/mu as functions of mu^2."""
    if abs(mu2) < _SERIES_CUTOFF ** 2:
        return 1 + mu2 / 2 + mu2 * mu2 / 24, 1 + mu2 / 6 + mu2 * mu2 / 120
    mu = cmath.sqrt(mu2)
    return cmath.cosh(mu), cmath.sinh(mu) / mu


def exp_su11(c) -> Mat2:
    """Exponential of [[ia, b], [conj(b), -ia]] in closed form."""
    arr = _arr(c)
    a = float(np.imag(arr[0, 0]))
    b = complex(arr[0, 1])
    ch, sc = _cosh_sinhc(abs(b) ** 2 - a * a)
    out = np.array([[ch + 1j * a * sc, b * sc], [np.conj(b) * sc, ch - 1j * a * sc]])
    if b == 0:
        out[0, 1] = out[1, 0] = 0.0
    return Mat2(out, DISC)


def exp_sl2(x) -> np.ndarray:
    """Exponential of traceless 2x2 matrices: cosh(mu) I + sinh(mu)/mu X, mu^2 = -det X."""
    x = _arr(x)
    mu2 = -det2(x)
    mu = np.sqrt(mu2)
    small = np.abs(mu2) < _SERIES_CUTOFF ** 2
    safe = np.where(small, 1.0, mu)
    ch = np.where(small, 1 + mu2 / 2 + mu2 * mu2 / 24, np.cosh(safe))
    sc = np.where(small, 1 + mu2 / 6 + mu2 * mu2 / 120, np.sinh(safe) / safe)
    eye = np.broadcast_to(np.eye(2), x.shape)
    return ch[..., None, None] * eye + sc[..., None, None] * x


def log_sl2(g) -> np.ndarray:
    """Principal logarithm of a determinant-one matrix with trace away from -2."""
    g = _arr(g)
    t = 0.5 * (g[..., 0, 0] + g[..., 1, 1])
    mu = np.arccosh(t.astype(complex))
    sh = np.sinh(mu)
    small = np.abs(mu) < _SERIES_CUTOFF
    fac = np.where(small, 1 - mu * mu / 6, mu / np.where(small, 1.0, sh))
    eye = np.broadcast_to(np.eye(2), g.shape)
    return fac[..., None, None] * (g - t[..., None, None] * eye)


def rotation_turns(phi: float) -> np.ndarray:
    """Rotation by ``phi`` turns: [[cos 2 pi phi, -sin 2 pi phi], [sin, cos]]."""
    return rotation_radians(2.0 * math.pi * phi)


def rotation_radians(t) -> np.ndarray:
    """Rotation by angle ``t`` (radians, broadcast over arrays of angles)."""
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t), np.sin(t)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def parabolic_orientation(a) -> int:
    """Sign of the corner of the rotation normal form (+1, -1, or 0 at the identity)."""
    _, _, c = _parabolic_parts(a)
    return 0 if c == 0 else (1 if c > 0 else -1)


def _parabolic_parts(a, tol: float = CLASSIFY_TOL):
    arr = convert_frame(a, REAL, _frame_of(a)).m
    data = classify(arr, tol)
    if data.kind != "parabolic" or np.real(arr[0, 0] + arr[1, 1]) < 0:
        raise NotParabolicError(data)
    n = np.real(arr) - np.eye(2)
    if np.max(np.abs(n)) <= tol:
        return 0.0, np.array([1.0, 0.0]), 0.0
    j = int(np.argmax(np.linalg.norm(n, axis=0)))
    u = n[:, j] / np.linalg.norm(n[:, j])
    w = np.array([-u[1], u[0]])
    c = float(u @ n @ w)
    phi = (math.atan2(u[1], u[0]) / (2.0 * math.pi)) % 0.5
    return phi, u, c


def parabolic_normalize(a, tol: float = CLASSIFY_TOL) -> tuple[float, float]:
    """Return ``(phi, zeta)`` with ``R_{-phi} A R_phi = [[1, zeta], [0, 1]]``.

    ``phi`` is in turns, in [0, 1/2).  Parabolic elements of the opposite
    orientation satisfy the identity with corner ``-zeta``; see
    :func:`parabolic_orientation`.
    """
    phi, _, c = _parabolic_parts(a, tol)
    return phi, abs(c)
