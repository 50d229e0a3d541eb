"""Compiled inner loops for the implicit midpoint integrator.

Everything here works on flat float64 arrays so the hot loops stay inside
nopython code.  The coupling matrix arrives as the spectral argument pack
produced by ``CouplingMatrix.kernel_args``; the kind codes mirror the ones
in ``geometry``.  A pure-Python fallback (the reference implementations in
``dynamics``) covers the case where numba is unavailable, so this module
must stay import-safe without it.
"""

from __future__ import annotations

import os

import numpy as np

TWO_PI = 2.0 * np.pi

_DISABLED = os.environ.get("TORIC_FLOW_NO_NUMBA", "") not in ("", "0")

try:  # pragma: no cover - exercised implicitly by every kernel test
    if _DISABLED:
        raise ImportError("kernels disabled by TORIC_FLOW_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f

        return deco


KIND_ZERO = 0
KIND_SYM = 1
KIND_NILPOTENT = 2
KIND_DIAG = 3


@njit(cache=True, nogil=True)
def _e_into(out, s, kind, A, U, lam, Pw, W, mu, Winv):
    """Write exp(s A) into ``out`` using the cached spectral data."""
    n = out.shape[0]
    if kind == KIND_SYM:
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += U[i, k] * np.exp(s * lam[k]) * U[j, k]
                out[i, j] = acc
    elif kind == KIND_NILPOTENT:
        m = Pw.shape[0]
        for i in range(n):
            for j in range(n):
                acc = 0.0
                sj = 1.0
                for q in range(m):
                    acc += sj * Pw[q, i, j]
                    sj *= s
                out[i, j] = acc
    elif kind == KIND_DIAG:
        for i in range(n):
            for j in range(n):
                acc = 0.0 + 0.0j
                for k in range(n):
                    acc += W[i, k] * np.exp(s * mu[k]) * Winv[k, j]
                out[i, j] = acc.real
    else:  # KIND_ZERO
        for i in range(n):
            for j in range(n):
                out[i, j] = 1.0 if i == j else 0.0


@njit(cache=True, nogil=True)
def _v_at(s, a0, ac, bs, order):
    K = ac.shape[0]
    acc = a0 if order == 0 else 0.0
    for k in range(1, K + 1):
        w = TWO_PI * k
        ang = w * s
        c = np.cos(ang)
        sn = np.sin(ang)
        if order == 0:
            acc += ac[k - 1] * c + bs[k - 1] * sn
        elif order == 1:
            acc += w * (bs[k - 1] * c - ac[k - 1] * sn)
        else:
            acc += -w * w * (ac[k - 1] * c + bs[k - 1] * sn)
    return acc


@njit(cache=True, nogil=True)
def _qinv_apply(Einv, v, t, out):
    """out = Qinv v = Einv (Einv^T v)."""
    n = Einv.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Einv[j, i] * v[j]
        t[i] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += Einv[i, j] * t[j]
        out[i] = acc


@njit(cache=True, nogil=True)
def _kinetic_force(s, p, kind, A, U, lam, Pw, W, mu, Winv, Einv, t1, t2):
    """p^T A Qinv(s) p, the fibre pressure term in dp_s/dt."""
    _e_into(Einv, -s, kind, A, U, lam, Pw, W, mu, Winv)
    _qinv_apply(Einv, p, t1, t2)
    n = p.shape[0]
    acc = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += A[i, j] * t2[j]
        acc += p[i] * row
    return acc


@njit(cache=True, nogil=True)
def _energy(s, p, ps, kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs, Einv, t1):
    _e_into(Einv, -s, kind, A, U, lam, Pw, W, mu, Winv)
    n = p.shape[0]
    acc = 0.0
    for i in range(n):
        r = 0.0
        for j in range(n):
            r += Einv[j, i] * p[j]
        acc += r * r
    return 0.5 * acc + 0.5 * ps * ps + _v_at(s, a0, ac, bs, 0)


@njit(cache=True, nogil=True)
def _step(x, s, p, ps, dt, tol, maxit,
          kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
          Einv, t1, t2):
    """One implicit midpoint step.  Updates x in place.

    Returns (ok, s_mid, s_new, ps_new, residual).  The fixed point is solved
    only in (s, p_s): pbar is conserved exactly and xbar updates explicitly
    from the midpoint metric.
    """
    n = x.shape[0]
    ps_m = ps
    s_m = s + 0.5 * dt * ps
    resid = np.inf
    ok = False
    for _ in range(maxit):
        f = _kinetic_force(s_m, p, kind, A, U, lam, Pw, W, mu, Winv,
                           Einv, t1, t2) - _v_at(s_m, a0, ac, bs, 1)
        ps_m_new = ps + 0.5 * dt * f
        s_m_new = s + 0.5 * dt * ps_m_new
        resid = abs(s_m_new - s_m) + abs(ps_m_new - ps_m)
        s_m = s_m_new
        ps_m = ps_m_new
        if resid <= tol:
            ok = True
            break
        if not np.isfinite(resid):
            break
    s_new = 2.0 * s_m - s
    ps_new = 2.0 * ps_m - ps
    if ok:
        _e_into(Einv, -s_m, kind, A, U, lam, Pw, W, mu, Winv)
        _qinv_apply(Einv, p, t1, t2)
        for i in range(n):
            x[i] = x[i] + dt * t2[i]
    return ok, s_m, s_new, ps_new, resid


@njit(cache=True, nogil=True)
def _tan_step(xi, m, n, s_m, p, dt,
              kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
              Einv, t1, t2, gp, dq_p, atp):
    """Advance m tangent frames through the midpoint variational update.

    xi has shape (m, 2n+2) ordered (dx, ds, dp, dp_s).  The (ds, dp_s)
    block is an exact 2x2 linear solve at the midpoint; dp is constant and
    dx updates explicitly, mirroring the base step.
    """
    _e_into(Einv, -s_m, kind, A, U, lam, Pw, W, mu, Winv)
    # gp = (A Qinv + Qinv A^T) p ; dQinv/ds p = -gp
    _qinv_apply(Einv, p, t1, t2)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += A[i, j] * t2[j]
        gp[i] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += A[j, i] * p[j]
        atp[i] = acc
    _qinv_apply(Einv, atp, t1, t2)
    for i in range(n):
        gp[i] += t2[i]
        dq_p[i] = -gp[i]
    # g_s = p^T A (dQinv/ds) p - V''(s_m) = (A^T p) . dq_p - V''
    g_s = -_v_at(s_m, a0, ac, bs, 2)
    for i in range(n):
        g_s += atp[i] * dq_p[i]

    det = 1.0 - 0.25 * dt * dt * g_s
    for r in range(m):
        dx = xi[r, :n]
        ds = xi[r, n]
        dp = xi[r, n + 1:2 * n + 1]
        dps = xi[r, 2 * n + 1]
        fp = 0.0
        for i in range(n):
            fp += gp[i] * dp[i]
        a = ds + 0.5 * dt * dps
        b = dps + dt * fp + 0.5 * dt * g_s * ds
        ds_new = (a + 0.5 * dt * b) / det
        dps_new = (b + 0.5 * dt * g_s * a) / det
        ds_mid = 0.5 * (ds + ds_new)
        _qinv_apply(Einv, dp, t1, t2)
        for i in range(n):
            dx[i] = dx[i] + dt * (t2[i] + dq_p[i] * ds_mid)
        xi[r, n] = ds_new
        xi[r, 2 * n + 1] = dps_new


@njit(cache=True, nogil=True)
def _deck_apply(x, p, up, R, Rinv, RinvT, RT):
    """One deck translation of the fibre: up means s -> s - 1."""
    n = x.shape[0]
    t = np.empty(n)
    if up:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += R[i, j] * x[j]
            t[i] = acc % TWO_PI
        for i in range(n):
            x[i] = t[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += RinvT[i, j] * p[j]
            t[i] = acc
        for i in range(n):
            p[i] = t[i]
    else:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Rinv[i, j] * x[j]
            t[i] = acc % TWO_PI
        for i in range(n):
            x[i] = t[i]
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += RT[i, j] * p[j]
            t[i] = acc
        for i in range(n):
            p[i] = t[i]


@njit(cache=True, nogil=True)
def _deck_apply_tan(xi, m, n, up, R, Rinv, RinvT, RT):
    t = np.empty(n)
    for r in range(m):
        if up:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += R[i, j] * xi[r, j]
                t[i] = acc
            for i in range(n):
                xi[r, i] = t[i]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += RinvT[i, j] * xi[r, n + 1 + j]
                t[i] = acc
            for i in range(n):
                xi[r, n + 1 + i] = t[i]
        else:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += Rinv[i, j] * xi[r, j]
                t[i] = acc
            for i in range(n):
                xi[r, i] = t[i]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += RT[i, j] * xi[r, n + 1 + j]
                t[i] = acc
            for i in range(n):
                xi[r, n + 1 + i] = t[i]


@njit(cache=True, nogil=True)
def _tangent_norm(xi, n, s, norm_kind,
                  kind, A, U, lam, Pw, W, mu, Winv, Ebuf):
    """Riemannian (0) or coordinate (1) norm of one tangent frame."""
    if norm_kind == 1:
        acc = 0.0
        for i in range(2 * n + 2):
            acc += xi[i] * xi[i]
        return np.sqrt(acc)
    acc = xi[n] * xi[n] + xi[2 * n + 1] * xi[2 * n + 1]
    _e_into(Ebuf, s, kind, A, U, lam, Pw, W, mu, Winv)
    for i in range(n):
        r = 0.0
        for j in range(n):
            r += Ebuf[i, j] * xi[j]
        acc += r * r
    _e_into(Ebuf, -s, kind, A, U, lam, Pw, W, mu, Winv)
    for i in range(n):
        r = 0.0
        for j in range(n):
            r += Ebuf[j, i] * xi[n + 1 + j]
        acc += r * r
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def integrate_fused(x, s, p, ps, p_ref, nsteps, dt, stride, tol, maxit,
                    wrap, R, Rinv, RinvT, RT,
                    kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
                    t_out, x_out, s_out, p_out, ps_out, h_out, pd_out):
    """Fixed-step midpoint run with periodic recording.

    Returns (status, nrec, fail_step, residual, s_final, ps_final); status 0
    means every fixed point converged.  State arrays x, p, p_ref are updated
    in place; p_ref tracks the deck transport of the initial pbar so the
    recorded momentum drift stays meaningful across wraps.
    """
    n = x.shape[0]
    Einv = np.empty((n, n))
    t1 = np.empty(n)
    t2 = np.empty(n)
    H0 = _energy(s, p, ps, kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
                 Einv, t1)
    t_out[0] = 0.0
    for i in range(n):
        x_out[0, i] = x[i]
        p_out[0, i] = p[i]
    s_out[0] = s
    ps_out[0] = ps
    h_out[0] = 0.0
    pd_out[0] = 0.0
    rec = 1
    for k in range(1, nsteps + 1):
        ok, s_m, s_new, ps_new, resid = _step(
            x, s, p, ps, dt, tol, maxit,
            kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs, Einv, t1, t2)
        if not ok:
            return 1, rec, k, resid, s, ps
        s = s_new
        ps = ps_new
        if wrap:
            while s >= 1.0:
                _deck_apply(x, p, True, R, Rinv, RinvT, RT)
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += RinvT[i, j] * p_ref[j]
                    t1[i] = acc
                for i in range(n):
                    p_ref[i] = t1[i]
                s -= 1.0
            while s < 0.0:
                _deck_apply(x, p, False, R, Rinv, RinvT, RT)
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += RT[i, j] * p_ref[j]
                    t1[i] = acc
                for i in range(n):
                    p_ref[i] = t1[i]
                s += 1.0
        if k % stride == 0 or k == nsteps:
            if rec < t_out.shape[0]:
                t_out[rec] = k * dt
                for i in range(n):
                    x_out[rec, i] = x[i]
                    p_out[rec, i] = p[i]
                s_out[rec] = s
                ps_out[rec] = ps
                H = _energy(s, p, ps, kind, A, U, lam, Pw, W, mu, Winv,
                            a0, ac, bs, Einv, t1)
                h_out[rec] = abs(H - H0)
                dmax = 0.0
                for i in range(n):
                    d = abs(p[i] - p_ref[i])
                    if d > dmax:
                        dmax = d
                pd_out[rec] = dmax
                rec += 1
    return 0, rec, 0, 0.0, s, ps


@njit(cache=True, nogil=True)
def mle_fused(x, s, p, ps, xi, n_int, steps_per, dt, tol, maxit,
              norm_kind, wrap, R, Rinv, RinvT, RT,
              kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs, lam_out):
    """Benettin largest-exponent estimator with periodic renormalisation."""
    n = x.shape[0]
    Einv = np.empty((n, n))
    Ebuf = np.empty((n, n))
    t1 = np.empty(n)
    t2 = np.empty(n)
    gp = np.empty(n)
    dq_p = np.empty(n)
    atp = np.empty(n)
    xi2 = xi.reshape(1, 2 * n + 2)
    g0 = _tangent_norm(xi, n, s, norm_kind,
                       kind, A, U, lam, Pw, W, mu, Winv, Ebuf)
    if g0 == 0.0 or not np.isfinite(g0):
        return 2, 0, 0.0
    for i in range(2 * n + 2):
        xi[i] /= g0
    acc = 0.0
    for it in range(n_int):
        for k in range(steps_per):
            ok, s_m, s_new, ps_new, resid = _step(
                x, s, p, ps, dt, tol, maxit,
                kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs, Einv, t1, t2)
            if not ok:
                return 1, it * steps_per + k + 1, resid
            _tan_step(xi2, 1, n, s_m, p, dt,
                      kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
                      Einv, t1, t2, gp, dq_p, atp)
            s = s_new
            ps = ps_new
            if wrap:
                while s >= 1.0:
                    _deck_apply(x, p, True, R, Rinv, RinvT, RT)
                    _deck_apply_tan(xi2, 1, n, True, R, Rinv, RinvT, RT)
                    s -= 1.0
                while s < 0.0:
                    _deck_apply(x, p, False, R, Rinv, RinvT, RT)
                    _deck_apply_tan(xi2, 1, n, False, R, Rinv, RinvT, RT)
                    s += 1.0
        g = _tangent_norm(xi, n, s, norm_kind,
                          kind, A, U, lam, Pw, W, mu, Winv, Ebuf)
        if g == 0.0 or not np.isfinite(g):
            return 2, it + 1, g
        acc += np.log(g)
        for i in range(2 * n + 2):
            xi[i] /= g
        lam_out[it] = acc / ((it + 1.0) * steps_per * dt)
    return 0, n_int, 0.0


@njit(cache=True, nogil=True)
def series_chunk(x, s, p, ps, nsteps, dt, tol, maxit,
                 wrap, R, Rinv, RinvT, RT,
                 kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs,
                 x_out, s_out, p_out, ps_out):
    """Advance nsteps steps recording the state after every one of them.

    Used by the section-crossing scanner; outputs hold rows 0..nsteps-1 for
    the states after steps 1..nsteps.
    """
    n = x.shape[0]
    Einv = np.empty((n, n))
    t1 = np.empty(n)
    t2 = np.empty(n)
    for k in range(nsteps):
        ok, s_m, s_new, ps_new, resid = _step(
            x, s, p, ps, dt, tol, maxit,
            kind, A, U, lam, Pw, W, mu, Winv, a0, ac, bs, Einv, t1, t2)
        if not ok:
            return 1, k + 1, resid, s, ps
        s = s_new
        ps = ps_new
        if wrap:
            while s >= 1.0:
                _deck_apply(x, p, True, R, Rinv, RinvT, RT)
                s -= 1.0
            while s < 0.0:
                _deck_apply(x, p, False, R, Rinv, RinvT, RT)
                s += 1.0
        for i in range(n):
            x_out[k, i] = x[i]
            p_out[k, i] = p[i]
        s_out[k] = s
        ps_out[k] = ps
    return 0, nsteps, 0.0, s, ps
