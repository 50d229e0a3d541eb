"""Geometry of the torus bundle: metric data, deck maps, phase points.

The configuration space is T^n x R with coordinates (xbar, s).  A real
n x n coupling matrix A determines the fibre metric through the factor
E(s) = exp(s A):

    Q(s)    = E(s)^T E(s)           (metric block on the torus fibre)
    Qinv(s) = E(-s) E(-s)^T
    d/ds Qinv(s) = -(A Qinv + Qinv A^T)

When exp(A) has integer entries and determinant +-1 the translation
s -> s - 1 descends to the mapping torus of that automorphism; the deck
transformation implemented here is the corresponding bundle map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import MetricRangeError, NotAnAutomorphismError

TWO_PI = 2.0 * np.pi

# exp(350) squares to just under the float64 overflow threshold.
_RANGE_LIMIT = 350.0

# Spectral evaluation kinds, shared with the compiled kernels.
KIND_ZERO = 0
KIND_SYM = 1
KIND_NILPOTENT = 2
KIND_DIAG = 3
KIND_GENERAL = 4


def matrix_exp(M) -> np.ndarray:
    """Matrix exponential of a real square matrix.

    Symmetric input goes through an eigendecomposition; everything else is
    delegated to the scaling-and-squaring Pade routine.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")
    scale = np.abs(M).max()
    if scale == 0.0:
        return np.eye(M.shape[0])
    if np.abs(M - M.T).max() <= 1e-13 * scale:
        Ms = 0.5 * (M + M.T)
        w, U = np.linalg.eigh(Ms)
        out = (U * np.exp(w)) @ U.T
        return 0.5 * (out + out.T)
    return scipy.linalg.expm(M)


class CouplingMatrix:
    """Real n x n matrix A plus cached spectral data for fast exp(s A).

    The spectral kind records how exp(s A) is evaluated: identity for A = 0,
    orthogonal eigendecomposition for symmetric A, a finite polynomial for
    nilpotent A, a complex eigenbasis for generic diagonalisable A, and a
    per-call Pade exponential otherwise.
    """

    def __init__(self, entries):
        arr = np.asarray(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("coupling matrix must be square")
        if arr.shape[0] < 1:
            raise ValueError("coupling matrix must be at least 1 x 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coupling matrix entries must be finite")
        self.entries = arr.copy()
        self.entries.flags.writeable = False
        self.n = arr.shape[0]
        self.spectral_norm = float(np.linalg.norm(arr, 2))
        self._build_spectral()

    def _build_spectral(self) -> None:
        A, n = self.entries, self.n
        scale = np.abs(A).max()
        eye = np.eye(n)
        zc = np.zeros((n, n), dtype=np.complex128)
        # Defaults: every representation slot is populated so the compiled
        # kernels can take a uniform argument tuple.
        self.kind = KIND_GENERAL
        self._sym_U = eye.copy()
        self._sym_lam = np.zeros(n)
        self._nil_powers = eye[None, :, :].copy()
        self._cplx_W = zc.copy()
        self._cplx_mu = np.zeros(n, dtype=np.complex128)
        self._cplx_Winv = zc.copy()

        if scale == 0.0:
            self.kind = KIND_ZERO
        elif np.abs(A - A.T).max() <= 1e-13 * scale:
            w, U = np.linalg.eigh(0.5 * (A + A.T))
            self.kind = KIND_SYM
            self._sym_U = np.ascontiguousarray(U)
            self._sym_lam = w
        else:
            # Nilpotency test by exact powering.
            powers = [np.eye(n)]
            P = np.eye(n)
            nilpotent = False
            for j in range(1, n + 1):
                P = P @ A
                if np.abs(P).max() <= 1e-14 * max(1.0, scale) ** j:
                    nilpotent = True
                    break
                powers.append(P / math.factorial(j))
            if nilpotent:
                self.kind = KIND_NILPOTENT
                self._nil_powers = np.ascontiguousarray(np.stack(powers))
            else:
                mu, W = np.linalg.eig(A)
                cond = np.linalg.cond(W)
                if np.isfinite(cond) and cond < 1e12:
                    Winv = np.linalg.inv(W)
                    recon = (W * mu) @ Winv
                    if np.abs(recon.real - A).max() <= 1e-12 * max(1.0, scale):
                        self.kind = KIND_DIAG
                        self._cplx_W = np.ascontiguousarray(W.astype(np.complex128))
                        self._cplx_mu = mu.astype(np.complex128)
                        self._cplx_Winv = np.ascontiguousarray(
                            Winv.astype(np.complex128)
                        )

    def kernel_args(self):
        """Flat argument tuple consumed by the compiled kernels."""
        return (
            self.kind,
            self.entries,
            self._sym_U,
            self._sym_lam,
            self._nil_powers,
            self._cplx_W,
            self._cplx_mu,
            self._cplx_Winv,
        )

    def exp_at(self, s: float) -> np.ndarray:
        """exp(s A) through the cached spectral representation."""
        s = float(s)
        n = self.n
        if self.kind == KIND_ZERO or s == 0.0:
            return np.eye(n)
        if self.kind == KIND_SYM:
            U, lam = self._sym_U, self._sym_lam
            out = (U * np.exp(s * lam)) @ U.T
            return 0.5 * (out + out.T)
        if self.kind == KIND_NILPOTENT:
            out = np.zeros((n, n))
            sj = 1.0
            for j in range(self._nil_powers.shape[0]):
                out += sj * self._nil_powers[j]
                sj *= s
            return out
        if self.kind == KIND_DIAG:
            W, mu, Winv = self._cplx_W, self._cplx_mu, self._cplx_Winv
            return np.real((W * np.exp(s * mu)) @ Winv)
        return matrix_exp(s * self.entries)

    def __repr__(self) -> str:
        return f"CouplingMatrix({self.entries.tolist()!r})"


def as_coupling(A) -> CouplingMatrix:
    return A if isinstance(A, CouplingMatrix) else CouplingMatrix(A)


class PhasePoint:
    """Point of the phase space T*(T^n x R): (xbar, s, pbar, p_s).

    Arrays are copied on construction and frozen; angle coordinates are kept
    as given (use ``normalize`` for torus-reduced angles).
    """

    __slots__ = ("x", "s", "p", "p_s")

    def __init__(self, x, s, p, p_s):
        x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(p, dtype=float)).copy()
        if x.ndim != 1 or p.ndim != 1 or x.size != p.size:
            raise ValueError("x and p must be vectors of equal length")
        if not (
            np.all(np.isfinite(x))
            and np.all(np.isfinite(p))
            and np.isfinite(s)
            and np.isfinite(p_s)
        ):
            raise ValueError("phase point coordinates must be finite")
        x.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", float(s))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_s", float(p_s))

    def __setattr__(self, name, value):
        raise AttributeError("PhasePoint is immutable")

    @property
    def n(self) -> int:
        return self.x.size

    def normalize(self) -> "PhasePoint":
        """Reduce the torus angles to [0, 2 pi)."""
        return PhasePoint(np.mod(self.x, TWO_PI), self.s, self.p, self.p_s)

    def flat(self) -> np.ndarray:
        """Coordinates as a single vector (x, s, p, p_s)."""
        return np.concatenate([self.x, [self.s], self.p, [self.p_s]])

    @staticmethod
    def from_flat(v, n: int) -> "PhasePoint":
        v = np.asarray(v, dtype=float)
        if v.size != 2 * n + 2:
            raise ValueError("flat vector has wrong length")
        return PhasePoint(v[:n], v[n], v[n + 1 : 2 * n + 1], v[2 * n + 1])

    def __repr__(self) -> str:
        return (
            f"PhasePoint(x={self.x.tolist()!r}, s={self.s!r}, "
            f"p={self.p.tolist()!r}, p_s={self.p_s!r})"
        )


@dataclass(frozen=True)
class MetricEvaluation:
    """Metric data at a fixed fibre coordinate s."""

    s: float
    Q: np.ndarray
    Qinv: np.ndarray
    dQinv_ds: np.ndarray
    exp_sA: np.ndarray
    exp_neg_sA: np.ndarray


def metric_at(A, s: float) -> MetricEvaluation:
    """Evaluate Q, Qinv and d/ds Qinv at the fibre coordinate s.

    Raises MetricRangeError when |s| * norm(A) is large enough that the
    exponential factors would overflow.
    """
    A = as_coupling(A)
    s = float(s)
    if abs(s) * A.spectral_norm > _RANGE_LIMIT:
        raise MetricRangeError(s, A.spectral_norm, _RANGE_LIMIT)
    E = A.exp_at(s)
    Einv = A.exp_at(-s)
    Q = E.T @ E
    Qinv = Einv @ Einv.T
    Q = 0.5 * (Q + Q.T)
    Qinv = 0.5 * (Qinv + Qinv.T)
    M = A.entries @ Qinv
    dQinv = -(M + M.T)
    return MetricEvaluation(s, Q, Qinv, dQinv, E, Einv)


def hamiltonian(A, V, z: PhasePoint) -> float:
    """Total energy (1/2) p^T Qinv(s) p + (1/2) p_s^2 + V(s)."""
    m = metric_at(A, z.s)
    return float(0.5 * z.p @ m.Qinv @ z.p + 0.5 * z.p_s**2 + V(z.s))


def riemannian_norm(m: MetricEvaluation, dx, ds: float, dp, dp_s: float) -> float:
    """Norm of a phase-space tangent in the metric block Q(s) + Qinv(s).

    Computed through the exponential factors, which is better conditioned
    than forming Q itself: |E dx|^2 + ds^2 + |E(-s)^T dp|^2 + dp_s^2.
    """
    dx = np.asarray(dx, dtype=float)
    dp = np.asarray(dp, dtype=float)
    a = m.exp_sA @ dx
    b = m.exp_neg_sA.T @ dp
    return float(np.sqrt(a @ a + float(ds) ** 2 + b @ b + float(dp_s) ** 2))


@dataclass(frozen=True)
class AutomorphismCheck:
    """Outcome of the integer-unimodularity test on exp(A)."""

    ok: bool
    rounded: np.ndarray
    max_entry_residual: float
    det_residual: float

    def __bool__(self) -> bool:
        return self.ok


def check_integer_automorphism(A, tol: float = 1e-9) -> AutomorphismCheck:
    """Test whether exp(A) is an integer matrix with |det| = 1."""
    A = as_coupling(A)
    E = A.exp_at(1.0)
    R = np.round(E)
    entry_res = float(np.abs(E - R).max())
    det_res = float(abs(abs(np.linalg.det(R)) - 1.0))
    ok = entry_res <= tol and det_res <= tol
    R = R.copy()
    R.flags.writeable = False
    return AutomorphismCheck(ok, R, entry_res, det_res)


def _integer_inverse(R: np.ndarray) -> np.ndarray:
    """Exact inverse of an integer unimodular matrix (entries stay integral)."""
    Rinv = np.round(np.linalg.inv(R))
    if np.abs(R @ Rinv - np.eye(R.shape[0])).max() != 0.0:
        raise NotAnAutomorphismError(
            "rounded inverse is not exact; matrix is not unimodular"
        )
    return Rinv


def _integer_power(R: np.ndarray, k: int) -> np.ndarray:
    out = np.linalg.matrix_power(R, k)
    if np.abs(out).max() >= 2.0**52:
        raise OverflowError(
            f"deck power {k} produces entries beyond exact float range"
        )
    return out


def deck_transform(A, z: PhasePoint, k: int = 1) -> PhasePoint:
    """Apply the k-th power of the deck transformation.

    With R = exp(A):  xbar -> R^k xbar (mod 2 pi), s -> s - k,
    pbar -> R^{-k T} pbar, p_s -> p_s.  Requires R integer and unimodular.
    The Hamiltonian and the metric are invariant under this map.
    """
    A = as_coupling(A)
    k = int(k)
    chk = check_integer_automorphism(A)
    if not chk:
        raise NotAnAutomorphismError(
            f"exp(A) is not an integer unimodular matrix "
            f"(entry residual {chk.max_entry_residual:.3g}, "
            f"det residual {chk.det_residual:.3g})"
        )
    if k == 0:
        return z
    R = chk.rounded
    Rinv = _integer_inverse(R)
    M = _integer_power(R, k) if k > 0 else _integer_power(Rinv, -k)
    N = _integer_power(Rinv, k) if k > 0 else _integer_power(R, -k)
    return PhasePoint(np.mod(M @ z.x, TWO_PI), z.s - k, N.T @ z.p, z.p_s)


def wrap_to_fundamental(A, z: PhasePoint) -> PhasePoint:
    """Deck-translate z so that the fibre coordinate lands in [0, 1)."""
    k = int(np.floor(z.s))
    if k == 0:
        return z
    return deck_transform(A, z, k)
