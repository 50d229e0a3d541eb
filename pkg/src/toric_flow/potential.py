"""Periodic potentials on the fibre coordinate.

A potential is a real trigonometric polynomial with period one,

    V(s) = a0 + sum_k a_k cos(2 pi k s) + b_k sin(2 pi k s),  k = 1..K,

evaluated together with its first two derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

# Extrema are located on a uniform grid before Newton polishing; keeping the
# harmonic order well below the Nyquist limit of that grid guarantees no
# oscillation slips between grid points.
_EXTREMA_GRID = 4096
_MAX_ORDER = _EXTREMA_GRID // 8


class FourierPotential:
    """Trigonometric polynomial V(s) with period one."""

    def __init__(self, a0: float = 0.0, cos_coeffs=(), sin_coeffs=()):
        self.a0 = float(a0)
        ac = np.atleast_1d(np.asarray(cos_coeffs, dtype=float))
        bs = np.atleast_1d(np.asarray(sin_coeffs, dtype=float))
        if ac.ndim != 1 or bs.ndim != 1:
            raise ValueError("coefficient lists must be one-dimensional")
        order = max(ac.size, bs.size)
        self.cos_coeffs = np.zeros(order)
        self.sin_coeffs = np.zeros(order)
        self.cos_coeffs[: ac.size] = ac
        self.sin_coeffs[: bs.size] = bs
        if not np.all(np.isfinite(self.cos_coeffs)) or not np.all(
            np.isfinite(self.sin_coeffs)
        ) or not np.isfinite(self.a0):
            raise ValueError("potential coefficients must be finite")
        if order > _MAX_ORDER:
            raise ValueError(
                f"harmonic order {order} exceeds the supported maximum "
                f"{_MAX_ORDER} (extrema grid has {_EXTREMA_GRID} points)"
            )
        self.cos_coeffs.flags.writeable = False
        self.sin_coeffs.flags.writeable = False

    @property
    def order(self) -> int:
        return self.cos_coeffs.size

    def is_constant(self, tol: float = 0.0) -> bool:
        if self.order == 0:
            return True
        amp = np.abs(self.cos_coeffs).max() + np.abs(self.sin_coeffs).max()
        return amp <= tol

    def __call__(self, s, order: int = 0):
        """Evaluate V (order=0), V' (order=1) or V'' (order=2) at s.

        Accepts scalars or arrays and broadcasts over s.
        """
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        s_arr = np.asarray(s, dtype=float)
        scalar = s_arr.ndim == 0
        s_arr = np.atleast_1d(s_arr)
        K = self.order
        if K == 0:
            out = np.full(s_arr.shape, self.a0 if order == 0 else 0.0)
        else:
            k = np.arange(1, K + 1)
            ang = TWO_PI * np.outer(s_arr, k)
            c, sn = np.cos(ang), np.sin(ang)
            w = TWO_PI * k
            if order == 0:
                out = self.a0 + c @ self.cos_coeffs + sn @ self.sin_coeffs
            elif order == 1:
                out = sn @ (-w * self.cos_coeffs) + c @ (w * self.sin_coeffs)
            else:
                out = c @ (-w * w * self.cos_coeffs) + sn @ (
                    -w * w * self.sin_coeffs
                )
        return float(out[0]) if scalar else out

    def __repr__(self) -> str:
        return (
            f"FourierPotential(a0={self.a0!r}, "
            f"cos_coeffs={self.cos_coeffs.tolist()!r}, "
            f"sin_coeffs={self.sin_coeffs.tolist()!r})"
        )


@dataclass(frozen=True)
class PotentialExtrema:
    """Global extrema of a periodic potential over one period."""

    v_min: float
    v_max: float
    argmin: tuple
    argmax: tuple
    constant: bool


def _newton_polish(V: FourierPotential, s0: float, lo: float, hi: float) -> float:
    """Drive V' to zero starting from s0, staying inside [lo, hi]."""
    s = s0
    for _ in range(60):
        d1 = V(s, order=1)
        if abs(d1) < 1e-14:
            return s
        d2 = V(s, order=2)
        if d2 == 0.0:
            break
        step = d1 / d2
        s_new = s - step
        if not (lo <= s_new <= hi):
            break
        if abs(s_new - s) < 1e-16:
            return s_new
        s = s_new
    # Fall back to bisection on V' over the bracket if Newton stalls
    # (flat or inflected candidates).
    f_lo, f_hi = V(lo, order=1), V(hi, order=1)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        return s
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = V(mid, order=1)
        if f_mid == 0.0 or hi - lo < 1e-16:
            return mid
        if f_lo * f_mid < 0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def find_extrema(V: FourierPotential) -> PotentialExtrema:
    """Locate the global extrema of V over one period.

    Critical points are bracketed on a uniform grid and polished by Newton
    iteration on V'; every reported location satisfies |V'| < 1e-10 and the
    reported values match V at those locations to machine precision.
    """
    if V.is_constant():
        return PotentialExtrema(V.a0, V.a0, (), (), True)

    N = _EXTREMA_GRID
    grid = np.arange(N) / N
    vals = V(grid)
    h = 1.0 / N

    crit = []
    prev = np.roll(vals, 1)
    nxt = np.roll(vals, -1)
    for i in np.nonzero((vals <= prev) & (vals <= nxt))[0]:
        crit.append(_newton_polish(V, grid[i], grid[i] - h, grid[i] + h))
    for i in np.nonzero((vals >= prev) & (vals >= nxt))[0]:
        crit.append(_newton_polish(V, grid[i], grid[i] - h, grid[i] + h))

    crit = np.mod(np.asarray(crit), 1.0)
    crit = crit[np.abs(V(crit, order=1)) < 1e-10]
    if crit.size == 0:
        raise RuntimeError("no critical point survived polishing")

    # Deduplicate modulo 1 with a circular tolerance.
    crit.sort()
    keep = [crit[0]]
    for s in crit[1:]:
        if s - keep[-1] > 1e-8:
            keep.append(s)
    if len(keep) > 1 and (keep[0] + 1.0) - keep[-1] <= 1e-8:
        keep.pop()
    crit = np.asarray(keep)

    cv = V(crit)
    v_min, v_max = float(cv.min()), float(cv.max())
    argmin = tuple(float(s) for s in crit[np.abs(cv - v_min) < 1e-12])
    argmax = tuple(float(s) for s in crit[np.abs(cv - v_max) < 1e-12])
    return PotentialExtrema(v_min, v_max, argmin, argmax, False)
