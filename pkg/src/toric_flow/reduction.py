"""Reduction to the fibre: effective potential, leaves, periods.

Fixing the conserved torus momenta pbar = c reduces the flow to one degree
of freedom with effective potential

    V_eff(s) = (1/2) c^T Qinv(s) c + V(s).

Level sets of (pbar, H) are classified here, and for banded leaves the
period and the torus rotation frequencies are produced by Gauss-Legendre
quadrature with the square-root turning-point singularity absorbed by a
sine substitution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

from .errors import DegenerateLeafError
from .geometry import PhasePoint, as_coupling, metric_at
from .potential import FourierPotential

_QUAD_START = 25
_QUAD_MAX = 6400
_WINDOW = 12.0


def effective_potential(A, V, c, s, order: int = 0):
    """Evaluate V_eff (order 0) or its first two s-derivatives at s.

    Derivatives use d/ds Qinv = -(A Qinv + Qinv A^T), so
    V_eff' = -c^T A Qinv c + V' and V_eff'' = c^T (A^2 Qinv + A Qinv A^T) c
    + V''.  Accepts scalar or array s.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    A = as_coupling(A)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size != A.n:
        raise ValueError("momentum vector length does not match coupling matrix")
    s_arr = np.asarray(s, dtype=float)
    scalar = s_arr.ndim == 0
    s_flat = np.atleast_1d(s_arr).ravel()
    out = np.empty(s_flat.size)
    Aent = A.entries
    if not np.any(c):
        out[:] = 0.0
    else:
        for i, si in enumerate(s_flat):
            Qinv = metric_at(A, si).Qinv
            if order == 0:
                out[i] = 0.5 * c @ Qinv @ c
            elif order == 1:
                out[i] = -c @ (Aent @ (Qinv @ c))
            else:
                qc = Qinv @ c
                out[i] = float(c @ (Aent @ (Aent @ qc)) + (Aent.T @ c) @ (Aent @ qc))
    out += V(s_flat, order=order)
    if scalar:
        return float(out[0])
    return out.reshape(s_arr.shape)


def effective_critical_points(A, V, c, window=(0.0, 1.0)) -> np.ndarray:
    """Critical points of V_eff inside [window[0], window[1]).

    Roots of V_eff' are bracketed on a uniform grid and refined by Brent's
    method.  A flat effective potential (say c = 0 with constant V) has no
    isolated critical points and yields an empty array.
    """
    A = as_coupling(A)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError("window must have positive length")
    N = 2048
    grid = np.linspace(lo, hi, N + 1)
    g = effective_potential(A, V, c, grid, order=1)
    vals = effective_potential(A, V, c, grid)
    v_scale = max(1.0, float(np.abs(vals).max()))
    if np.abs(g).max() <= 1e-12 * v_scale:
        return np.empty(0)

    def g1(s):
        return effective_potential(A, V, c, s, order=1)

    roots = []
    for i in range(N):
        if g[i] == 0.0:
            roots.append(grid[i])
        elif g[i] * g[i + 1] < 0.0:
            roots.append(brentq(g1, grid[i], grid[i + 1], xtol=1e-14))
    out = []
    for r in sorted(roots):
        if r >= hi - 1e-12:
            continue
        if out and r - out[-1] < 1e-10:
            continue
        out.append(float(r))
    return np.asarray(out)


@dataclass(frozen=True)
class SingularityReport:
    """Rank diagnostics of the integral map (pbar, H) at a phase point.

    ``singular`` is the SVD rank verdict; ``closed_form_singular`` is the
    equivalent explicit condition p_s = 0 and V_eff'(s) = 0 with c = pbar,
    evaluated at the same relative tolerance.
    """

    singular: bool
    rank: int
    smin: float
    smax: float
    closed_form_singular: bool
    v_eff_grad: float
    p_s: float


def integral_map_jacobian(A, V, z: PhasePoint) -> np.ndarray:
    """Derivative of (pbar, H) in coordinates (x, s, p, p_s); shape (n+1, 2n+2)."""
    A = as_coupling(A)
    n = A.n
    m = metric_at(A, z.s)
    DF = np.zeros((n + 1, 2 * n + 2))
    DF[:n, n + 1 : 2 * n + 1] = np.eye(n)
    # dH row: H has no x-dependence; dH/ds = (1/2) p^T dQinv/ds p + V'.
    DF[n, n] = 0.5 * z.p @ m.dQinv_ds @ z.p + V(z.s, order=1)
    DF[n, n + 1 : 2 * n + 1] = m.Qinv @ z.p
    DF[n, 2 * n + 1] = z.p_s
    return DF


def classify_point(A, V, z: PhasePoint, tol: float = 1e-9) -> SingularityReport:
    """Decide whether z is a singular point of the integral map."""
    DF = integral_map_jacobian(A, V, z)
    sv = np.linalg.svd(DF, compute_uv=False)
    smax = float(sv[0])
    smin = float(sv[-1])
    full = DF.shape[0]
    rank = int(np.sum(sv > tol * smax))
    grad = effective_potential(A, V, z.p, z.s, order=1)
    closed = float(np.hypot(grad, z.p_s)) <= tol * smax
    return SingularityReport(
        singular=rank < full,
        rank=rank,
        smin=smin,
        smax=smax,
        closed_form_singular=closed,
        v_eff_grad=float(grad),
        p_s=z.p_s,
    )


@dataclass(frozen=True)
class TurningPoints:
    """Outcome of the band search at a fixed level h."""

    kind: str  # "band" | "unbounded" | "empty"
    s_lo: float
    s_hi: float


def _veff_argmin(A, V, c, window: float) -> float:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if not np.any(c):
        lo, hi = 0.0, 1.0
    else:
        lo, hi = -window, window
    grid = np.linspace(lo, hi, 4096, endpoint=False)
    vals = effective_potential(A, V, c, grid)
    s0 = float(grid[np.argmin(vals)])
    # Newton polish on V_eff'.
    s = s0
    for _ in range(60):
        d1 = effective_potential(A, V, c, s, order=1)
        d2 = effective_potential(A, V, c, s, order=2)
        if d2 <= 0 or not np.isfinite(d2):
            break
        s_new = s - d1 / d2
        if abs(s_new - s) < 1e-14:
            s = s_new
            break
        s = s_new
    lo_b, hi_b = s0 - 2 * (hi - lo) / 4096, s0 + 2 * (hi - lo) / 4096
    if lo_b <= s <= hi_b and abs(
        effective_potential(A, V, c, s, order=1)
    ) < abs(effective_potential(A, V, c, s0, order=1)):
        return s
    return s0


def turning_points(A, V, c, h: float, seed_s: float | None = None,
                   window: float = _WINDOW) -> TurningPoints:
    """Locate the component of {V_eff <= h} containing the seed.

    For c = 0 the potential is periodic and ``unbounded`` means h is at or
    above the potential ceiling; for c != 0 the search is confined to
    ``window`` fibre periods on either side of the seed and a component
    still open at the window edge is reported as unbounded.
    """
    A = as_coupling(A)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if seed_s is None:
        seed_s = _veff_argmin(A, V, c, window)
    seed_s = float(seed_s)

    def g(s):
        return h - effective_potential(A, V, c, s)

    if g(seed_s) < 0.0:
        return TurningPoints("empty", np.nan, np.nan)

    if not np.any(c):
        from .potential import find_extrema

        ext = find_extrema(V)
        if h >= ext.v_max - 1e-12:
            return TurningPoints("unbounded", np.nan, np.nan)
        half = 0.75
    else:
        half = window

    N = 4096
    # Walk outward from the seed on a fine grid until g changes sign.
    ds = half / N

    def walk(direction):
        s_prev = seed_s
        for k in range(1, N + 1):
            s_k = seed_s + direction * k * ds
            if g(s_k) < 0.0:
                a, b = (s_prev, s_k) if direction > 0 else (s_k, s_prev)
                return float(brentq(g, a, b, xtol=1e-14, rtol=8.9e-16))
            s_prev = s_k
        return None

    hi = walk(+1)
    lo = walk(-1)
    if hi is None or lo is None:
        return TurningPoints("unbounded", np.nan, np.nan)
    return TurningPoints("band", lo, hi)


def _gl_nodes(N: int):
    return leggauss(N)


def _band_integrals(A, V, c, h, s_lo, s_hi, rel_tol=1e-8):
    """Period and angle-advance integrals over one libration half-cycle.

    Returns (T, advance) with T = 2 * int ds / sqrt(2 (h - V_eff)) and
    advance_i = 2 * int (Qinv c)_i ds / sqrt(2 (h - V_eff)); the sine
    substitution s = m + r sin(theta) makes the integrand analytic so the
    Gauss-Legendre estimate converges geometrically under node doubling.
    """
    A = as_coupling(A)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.size
    m_mid = 0.5 * (s_lo + s_hi)
    r = 0.5 * (s_hi - s_lo)
    if r <= 0:
        raise DegenerateLeafError("band has zero width")

    grad_lo = effective_potential(A, V, c, s_lo, order=1)
    grad_hi = effective_potential(A, V, c, s_hi, order=1)
    scale = max(1.0, abs(h))
    if abs(grad_lo) < 1e-8 * scale or abs(grad_hi) < 1e-8 * scale:
        raise DegenerateLeafError(
            "level set touches a critical point of the effective potential; "
            "the libration period diverges"
        )

    def estimate(N):
        theta, w = _gl_nodes(N)
        theta = 0.5 * np.pi * theta
        w = 0.5 * np.pi * w
        s_nodes = m_mid + r * np.sin(theta)
        g = h - effective_potential(A, V, c, s_nodes)
        if np.any(g <= 0.0):
            raise DegenerateLeafError(
                "effective potential exceeds the level inside the band"
            )
        jac = r * np.cos(theta) / np.sqrt(2.0 * g)
        T = 2.0 * float(jac @ w)
        adv = np.zeros(n)
        if np.any(c):
            qc = np.empty((N, n))
            for i, si in enumerate(s_nodes):
                qc[i] = metric_at(A, si).Qinv @ c
            adv = 2.0 * (qc * (jac * w)[:, None]).sum(axis=0)
        return T, adv

    N = _QUAD_START
    T_prev, adv_prev = estimate(N)
    while N < _QUAD_MAX:
        N *= 2
        T_cur, adv_cur = estimate(N)
        err = abs(T_cur - T_prev) / max(abs(T_cur), 1e-300)
        err_adv = np.abs(adv_cur - adv_prev).max() / max(
            np.abs(adv_cur).max(), 1.0
        )
        T_prev, adv_prev = T_cur, adv_cur
        if err <= rel_tol and err_adv <= rel_tol:
            return T_cur, adv_cur
    raise DegenerateLeafError(
        "band quadrature did not converge; the leaf is too close to a "
        "separatrix"
    )


def _unit_period_time(A, V, c, h, s_ref: float = 0.0, rel_tol=1e-10) -> float:
    """Fibre transit time over one period for levels above the ceiling:
    T1 = int_{s_ref}^{s_ref+1} ds / sqrt(2 (h - V_eff))."""

    def estimate(N):
        u, w = _gl_nodes(N)
        s_nodes = s_ref + 0.5 * (u + 1.0)
        g = h - effective_potential(A, V, c, s_nodes)
        if np.any(g <= 0.0):
            raise DegenerateLeafError("level is not above the potential ceiling")
        return 0.5 * float(w @ (1.0 / np.sqrt(2.0 * g)))

    N = _QUAD_START
    prev = estimate(N)
    while N < _QUAD_MAX:
        N *= 2
        cur = estimate(N)
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def reduced_period_and_frequencies(A, V, c, h: float,
                                   seed_s: float | None = None):
    """Libration period T and mean torus frequencies on a banded leaf.

    omega_i = (2/T) int (Qinv(s) c)_i ds / sqrt(2 (h - V_eff(s))) over the
    band; raises DegenerateLeafError on separatrix-grazing levels and
    ValueError when the seed component is not a band.
    """
    tp = turning_points(A, V, c, h, seed_s=seed_s)
    if tp.kind != "band":
        raise ValueError(f"level h={h!r} gives a {tp.kind} component, not a band")
    T, adv = _band_integrals(A, V, c, h, tp.s_lo, tp.s_hi)
    return T, adv / T


@dataclass(frozen=True)
class LeafDescriptor:
    """Summary of the common level set of (pbar, H) through a seed well."""

    kind: str  # "band" | "unbounded" | "equilibrium" | "singular_flat" | "empty"
    h: float
    c: np.ndarray
    s_lo: float
    s_hi: float
    period: float
    omega: np.ndarray
    omega_reduced: float
    flat_velocity: np.ndarray
    s_star: float


def _nearest_critical(A, V, c, seed_s: float):
    """Polish the seed to a critical point of V_eff, or return None."""
    s = float(seed_s)
    for _ in range(80):
        d1 = effective_potential(A, V, c, s, order=1)
        d2 = effective_potential(A, V, c, s, order=2)
        if d2 == 0.0 or not np.isfinite(d2):
            return None
        s_new = s - d1 / d2
        if abs(s_new - s) > 0.6:
            return None
        if abs(s_new - s) < 1e-15:
            s = s_new
            break
        s = s_new
    if abs(effective_potential(A, V, c, s, order=1)) < 1e-10:
        return s
    return None


def leaf_classify(A, V, c, h: float, seed_s: float | None = None) -> LeafDescriptor:
    """Classify the leaf at level (c, h) near the seed fibre coordinate.

    A level pinned to a critical value of V_eff is an equilibrium (c = 0)
    or a flat invariant torus travelled at constant velocity Qinv(s*) c
    (c != 0); otherwise the leaf is a band with libration data, an
    unbounded component with the mean fibre drift 1/T1, or empty.
    """
    A = as_coupling(A)
    c = np.atleast_1d(np.asarray(c, dtype=float)).copy()
    n = A.n
    nanv = np.full(n, np.nan)
    if seed_s is None:
        seed_s = _veff_argmin(A, V, c, _WINDOW)

    s_star = _nearest_critical(A, V, c, seed_s)
    if s_star is not None:
        v_star = effective_potential(A, V, c, s_star)
        if abs(h - v_star) <= 1e-12 * max(1.0, abs(h), abs(v_star)):
            if np.any(c):
                vel = metric_at(A, s_star).Qinv @ c
                return LeafDescriptor(
                    "singular_flat", h, c, s_star, s_star, np.nan, nanv.copy(),
                    np.nan, vel, s_star,
                )
            return LeafDescriptor(
                "equilibrium", h, c, s_star, s_star, np.nan, nanv.copy(),
                np.nan, np.zeros(n), s_star,
            )

    tp = turning_points(A, V, c, h, seed_s=seed_s)
    if tp.kind == "empty":
        return LeafDescriptor(
            "empty", h, c, np.nan, np.nan, np.nan, nanv.copy(), np.nan,
            nanv.copy(), np.nan,
        )
    if tp.kind == "unbounded":
        T1 = _unit_period_time(A, V, c, h, s_ref=float(seed_s))
        omega = (
            np.zeros(n) if not np.any(c) else nanv.copy()
        )
        return LeafDescriptor(
            "unbounded", h, c, -np.inf, np.inf, T1, omega, 1.0 / T1,
            nanv.copy(), np.nan,
        )
    T, omega = reduced_period_and_frequencies(A, V, c, h, seed_s=seed_s)
    return LeafDescriptor(
        "band", h, c, tp.s_lo, tp.s_hi, T, omega, 2.0 * np.pi / T,
        nanv.copy(), np.nan,
    )
