"""Hamiltonian flow: vector field, variational equations, integrators.

The flow conserves pbar exactly (the torus angles are cyclic), so the
implicit midpoint step only has to solve a two-dimensional fixed point in
(s, p_s); the angle update is explicit once the midpoint fibre coordinate
is known.  Long runs dispatch to the compiled kernels in ``_kernels``;
a pure numpy reference path covers observers, RK4 and cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import StepFailure
from .geometry import (
    KIND_GENERAL,
    CouplingMatrix,
    PhasePoint,
    _integer_inverse,
    _integer_power,
    as_coupling,
    check_integer_automorphism,
    metric_at,
)
from .potential import FourierPotential

TWO_PI = 2.0 * np.pi


class FlowDerivative(NamedTuple):
    """Right-hand side of Hamilton's equations at a phase point."""

    dx: np.ndarray
    ds: float
    dp: np.ndarray
    dp_s: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dx, [self.ds], self.dp, [self.dp_s]])


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration parameters.

    ``fixed_point_tol`` bounds the increment of the midpoint iterate, and
    ``record_stride`` controls how many steps separate stored samples.
    """

    method: str = "implicit_midpoint"
    dt: float = 1e-3
    t_end: float = 1.0
    fixed_point_tol: float = 1e-13
    max_fixed_point_iters: int = 50
    record_stride: int = 1

    def __post_init__(self):
        if self.method not in ("implicit_midpoint", "rk4"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive and finite")
        if not (np.isfinite(self.t_end) and self.t_end >= 0):
            raise ValueError("t_end must be non-negative and finite")
        if not (np.isfinite(self.fixed_point_tol) and self.fixed_point_tol > 0):
            raise ValueError("fixed_point_tol must be positive")
        if self.max_fixed_point_iters < 1:
            raise ValueError("max_fixed_point_iters must be at least 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")

    def with_(self, **kw) -> "IntegratorConfig":
        return replace(self, **kw)

    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, abs(self.t_end)):
            raise ValueError(
                f"t_end={self.t_end!r} is not an integer multiple of dt={self.dt!r}"
            )
        return n


def vector_field(A, V, z: PhasePoint) -> FlowDerivative:
    """Hamilton's equations: dx = Qinv p, ds = p_s, dp = 0,
    dp_s = p^T A Qinv p - V'(s)."""
    A = as_coupling(A)
    m = metric_at(A, z.s)
    qp = m.Qinv @ z.p
    dp_s = float(z.p @ (A.entries @ qp) - V(z.s, order=1))
    return FlowDerivative(qp, z.p_s, np.zeros(A.n), dp_s)


def flow_jacobian(A, V, z: PhasePoint) -> np.ndarray:
    """Jacobian of the vector field at z, in coordinates (x, s, p, p_s)."""
    A = as_coupling(A)
    n = A.n
    m = metric_at(A, z.s)
    J = np.zeros((2 * n + 2, 2 * n + 2))
    gp = (A.entries @ m.Qinv + m.Qinv @ A.entries.T) @ z.p
    # dx-block: depends on s through Qinv and on p linearly.
    J[:n, n] = m.dQinv_ds @ z.p
    J[:n, n + 1 : 2 * n + 1] = m.Qinv
    # ds-block.
    J[n, 2 * n + 1] = 1.0
    # dp_s-block; note dQinv/ds p = -gp.
    J[2 * n + 1, n] = float(z.p @ (A.entries @ (m.dQinv_ds @ z.p))) - V(
        z.s, order=2
    )
    J[2 * n + 1, n + 1 : 2 * n + 1] = gp
    return J


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the flow.

    ``h_drift`` and ``p_drift`` record |H(t) - H(0)| and the max-norm
    deviation of pbar from its deck-transported initial value at the same
    sample times.
    """

    t: np.ndarray
    x: np.ndarray
    s: np.ndarray
    p: np.ndarray
    p_s: np.ndarray
    h_drift: np.ndarray
    p_drift: np.ndarray
    method: str
    dt: float
    wrapped: bool

    def __len__(self) -> int:
        return self.t.size

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(self.x[-1], self.s[-1], self.p[-1], self.p_s[-1])


def _deck_mats(A: CouplingMatrix):
    """Integer deck matrices (R, Rinv, Rinv^T, R^T) for wrapping runs."""
    chk = check_integer_automorphism(A)
    if not chk:
        from .errors import NotAnAutomorphismError

        raise NotAnAutomorphismError(
            "suspension wrapping requires exp(A) to be an integer "
            f"unimodular matrix (entry residual {chk.max_entry_residual:.3g})"
        )
    R = np.ascontiguousarray(chk.rounded)
    Rinv = _integer_inverse(R)
    return R, Rinv, np.ascontiguousarray(Rinv.T), np.ascontiguousarray(R.T)


def _wrap_inplace(x, s, p, others, R, Rinv, RinvT, RT):
    """Python-path deck wrapping; ``others`` are extra covectors to carry."""
    while s >= 1.0:
        x[:] = np.mod(R @ x, TWO_PI)
        p[:] = RinvT @ p
        for o in others:
            o[:] = RinvT @ o
        s -= 1.0
    while s < 0.0:
        x[:] = np.mod(Rinv @ x, TWO_PI)
        p[:] = RT @ p
        for o in others:
            o[:] = RT @ o
        s += 1.0
    return s


def _midpoint_step_arrays(A, V, x, s, p, ps, dt, tol, maxit):
    """Reference midpoint step on raw arrays; mirrors the compiled kernel.

    Returns (s_mid, s_new, ps_new); x is updated in place.
    """
    Aent = A.entries
    ps_m = ps
    s_m = s + 0.5 * dt * ps
    ok = False
    resid = np.inf
    for _ in range(maxit):
        m = metric_at(A, s_m)
        f = float(p @ (Aent @ (m.Qinv @ p))) - V(s_m, order=1)
        ps_m_new = ps + 0.5 * dt * f
        s_m_new = s + 0.5 * dt * ps_m_new
        resid = abs(s_m_new - s_m) + abs(ps_m_new - ps_m)
        s_m, ps_m = s_m_new, ps_m_new
        if resid <= tol:
            ok = True
            break
        if not np.isfinite(resid):
            break
    if not ok:
        raise StepFailure(resid, dt, maxit)
    m = metric_at(A, s_m)
    x += dt * (m.Qinv @ p)
    return s_m, 2.0 * s_m - s, 2.0 * ps_m - ps


def _rk4_step_arrays(A, V, x, s, p, ps, dt):
    """Classical RK4 on (x, s, p_s); pbar enters only as a parameter."""

    def rhs(s_loc):
        m = metric_at(A, s_loc)
        qp = m.Qinv @ p
        return qp, float(p @ (A.entries @ qp)) - V(s_loc, order=1)

    k1x, k1p = rhs(s)
    k1s = ps
    k2x, k2p = rhs(s + 0.5 * dt * k1s)
    k2s = ps + 0.5 * dt * k1p
    k3x, k3p = rhs(s + 0.5 * dt * k2s)
    k3s = ps + 0.5 * dt * k2p
    k4x, k4p = rhs(s + dt * k3s)
    k4s = ps + dt * k3p
    x += (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    s_new = s + (dt / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
    ps_new = ps + (dt / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    return s_new, ps_new


def step(A, V, z: PhasePoint, config: IntegratorConfig, dt: float | None = None) -> PhasePoint:
    """Advance one step of size ``dt`` (defaults to config.dt)."""
    A = as_coupling(A)
    h = config.dt if dt is None else float(dt)
    x = z.x.copy()
    if config.method == "rk4":
        s_new, ps_new = _rk4_step_arrays(A, V, x, z.s, z.p.copy(), z.p_s, h)
    else:
        _, s_new, ps_new = _midpoint_step_arrays(
            A, V, x, z.s, z.p.copy(), z.p_s, h,
            config.fixed_point_tol, config.max_fixed_point_iters,
        )
    return PhasePoint(x, s_new, z.p, ps_new)


def _record_count(nsteps: int, stride: int) -> int:
    nrec = nsteps // stride + 1
    if nsteps % stride != 0:
        nrec += 1
    return nrec


def integrate(
    A,
    V,
    z0: PhasePoint,
    config: IntegratorConfig,
    wrap: bool = False,
    observers: Sequence[Callable[[float, PhasePoint], None]] = (),
) -> Trajectory:
    """Integrate the flow over [0, t_end] with fixed steps.

    With ``wrap=True`` the state is deck-translated back into the
    fundamental domain s in [0, 1) after every step (the suspension
    picture); this requires exp(A) to be an integer unimodular matrix and
    keeps the exponential factors bounded on orbits with unbounded s.
    Observers are called as f(t, z) after every step and force the
    reference path.
    """
    A = as_coupling(A)
    from .geometry import hamiltonian  # local import to avoid cycle noise

    nsteps = config.n_steps()
    stride = config.record_stride
    nrec = _record_count(nsteps, stride)
    n = A.n
    if z0.n != n:
        raise ValueError("phase point dimension does not match coupling matrix")

    if wrap:
        R, Rinv, RinvT, RT = _deck_mats(A)
    else:
        R = Rinv = RinvT = RT = np.eye(n)

    use_kernel = (
        _kernels.HAVE_NUMBA
        and A.kind != KIND_GENERAL
        and config.method == "implicit_midpoint"
        and not observers
    )

    if use_kernel:
        x = z0.x.copy()
        p = z0.p.copy()
        p_ref = z0.p.copy()
        t_out = np.empty(nrec)
        x_out = np.empty((nrec, n))
        s_out = np.empty(nrec)
        p_out = np.empty((nrec, n))
        ps_out = np.empty(nrec)
        h_out = np.empty(nrec)
        pd_out = np.empty(nrec)
        status, rec, fail_step, resid, _, _ = _kernels.integrate_fused(
            x, z0.s, p, z0.p_s, p_ref, nsteps, config.dt, stride,
            config.fixed_point_tol, config.max_fixed_point_iters,
            wrap, R, Rinv, RinvT, RT,
            *A.kernel_args(), V.a0, V.cos_coeffs, V.sin_coeffs,
            t_out, x_out, s_out, p_out, ps_out, h_out, pd_out,
        )
        if status != 0:
            raise StepFailure(resid, config.dt, config.max_fixed_point_iters)
        sl = slice(0, rec)
        return Trajectory(
            t_out[sl], x_out[sl], s_out[sl], p_out[sl], ps_out[sl],
            h_out[sl], pd_out[sl], config.method, config.dt, wrap,
        )

    # Reference path.
    x = z0.x.copy()
    s = z0.s
    p = z0.p.copy()
    ps = z0.p_s
    p_ref = z0.p.copy()
    H0 = hamiltonian(A, V, z0)
    t_l, x_l, s_l, p_l, ps_l, h_l, pd_l = [], [], [], [], [], [], []

    def record(k):
        t_l.append(k * config.dt)
        x_l.append(x.copy())
        s_l.append(s)
        p_l.append(p.copy())
        ps_l.append(ps)
        if k == 0:
            h_l.append(0.0)
            pd_l.append(0.0)
        else:
            H = hamiltonian(A, V, PhasePoint(x, s, p, ps))
            h_l.append(abs(H - H0))
            pd_l.append(float(np.abs(p - p_ref).max()))

    record(0)
    for k in range(1, nsteps + 1):
        if config.method == "rk4":
            s, ps = _rk4_step_arrays(A, V, x, s, p, ps, config.dt)
        else:
            _, s, ps = _midpoint_step_arrays(
                A, V, x, s, p, ps, config.dt,
                config.fixed_point_tol, config.max_fixed_point_iters,
            )
        if wrap:
            s = _wrap_inplace(x, s, p, [p_ref], R, Rinv, RinvT, RT)
        if k % stride == 0 or k == nsteps:
            record(k)
        for obs in observers:
            obs(k * config.dt, PhasePoint(x, s, p, ps))

    return Trajectory(
        np.asarray(t_l), np.asarray(x_l), np.asarray(s_l), np.asarray(p_l),
        np.asarray(ps_l), np.asarray(h_l), np.asarray(pd_l),
        config.method, config.dt, wrap,
    )


def _tangent_midpoint_arrays(A, V, XI, s_m, p, dt):
    """Variational midpoint update for frames XI (m, 2n+2), in place."""
    n = p.size
    m = metric_at(A, s_m)
    Aent = A.entries
    gp = (Aent @ m.Qinv + m.Qinv @ Aent.T) @ p
    dq_p = m.dQinv_ds @ p
    g_s = float(p @ (Aent @ dq_p)) - V(s_m, order=2)
    det = 1.0 - 0.25 * dt * dt * g_s
    for r in range(XI.shape[0]):
        dx = XI[r, :n]
        ds = XI[r, n]
        dp = XI[r, n + 1 : 2 * n + 1]
        dps = XI[r, 2 * n + 1]
        a = ds + 0.5 * dt * dps
        b = dps + dt * float(gp @ dp) + 0.5 * dt * g_s * ds
        ds_new = (a + 0.5 * dt * b) / det
        dps_new = (b + 0.5 * dt * g_s * a) / det
        dx += dt * (m.Qinv @ dp + dq_p * 0.5 * (ds + ds_new))
        XI[r, n] = ds_new
        XI[r, 2 * n + 1] = dps_new


def _tangent_rk4_arrays(A, V, XI, x, s, p, ps, dt):
    """Variational RK4: J evaluated along the classical stage states."""
    n = p.size

    def jac(s_loc):
        return flow_jacobian(A, V, PhasePoint(x, s_loc, p, ps))

    # Stage fibre coordinates of the base RK4 step.
    m1 = metric_at(A, s)
    f1 = float(p @ (A.entries @ (m1.Qinv @ p))) - V(s, order=1)
    s2 = s + 0.5 * dt * ps
    f2 = float(p @ (A.entries @ (metric_at(A, s2).Qinv @ p))) - V(s2, order=1)
    s3 = s + 0.5 * dt * (ps + 0.5 * dt * f1)
    s4 = s + dt * (ps + 0.5 * dt * f2)
    J1, J2, J3, J4 = jac(s), jac(s2), jac(s3), jac(s4)
    for r in range(XI.shape[0]):
        v = XI[r]
        k1 = J1 @ v
        k2 = J2 @ (v + 0.5 * dt * k1)
        k3 = J3 @ (v + 0.5 * dt * k2)
        k4 = J4 @ (v + dt * k3)
        XI[r] = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_with_tangents(
    A,
    V,
    z0: PhasePoint,
    frames,
    config: IntegratorConfig,
    wrap: bool = False,
):
    """Integrate the flow together with tangent frames (no renormalisation).

    Returns (trajectory, history) where history has shape
    (n_samples, n_frames, 2n+2).  Frames must be linearly independent.
    """
    A = as_coupling(A)
    from .geometry import hamiltonian

    XI = np.array(frames, dtype=float, ndmin=2).copy()
    n = A.n
    d = 2 * n + 2
    if XI.shape[1] != d:
        raise ValueError(f"tangent frames must have length {d}")
    if np.linalg.matrix_rank(XI) < XI.shape[0]:
        raise ValueError("tangent frames are linearly dependent")

    nsteps = config.n_steps()
    stride = config.record_stride
    if wrap:
        R, Rinv, RinvT, RT = _deck_mats(A)

    x = z0.x.copy()
    s = z0.s
    p = z0.p.copy()
    ps = z0.p_s
    p_ref = z0.p.copy()
    H0 = hamiltonian(A, V, z0)

    t_l, x_l, s_l, p_l, ps_l, h_l, pd_l, xi_l = [], [], [], [], [], [], [], []

    def record(k):
        t_l.append(k * config.dt)
        x_l.append(x.copy())
        s_l.append(s)
        p_l.append(p.copy())
        ps_l.append(ps)
        xi_l.append(XI.copy())
        if k == 0:
            h_l.append(0.0)
            pd_l.append(0.0)
        else:
            H = hamiltonian(A, V, PhasePoint(x, s, p, ps))
            h_l.append(abs(H - H0))
            pd_l.append(float(np.abs(p - p_ref).max()))

    record(0)
    for k in range(1, nsteps + 1):
        if config.method == "rk4":
            _tangent_rk4_arrays(A, V, XI, x, s, p, ps, config.dt)
            s, ps = _rk4_step_arrays(A, V, x, s, p, ps, config.dt)
        else:
            s_m, s_new, ps_new = _midpoint_step_arrays(
                A, V, x, s, p, ps, config.dt,
                config.fixed_point_tol, config.max_fixed_point_iters,
            )
            _tangent_midpoint_arrays(A, V, XI, s_m, p, config.dt)
            s, ps = s_new, ps_new
        if wrap:
            while s >= 1.0:
                x[:] = np.mod(R @ x, TWO_PI)
                p[:] = RinvT @ p
                p_ref[:] = RinvT @ p_ref
                XI[:, :n] = XI[:, :n] @ R.T
                XI[:, n + 1 : 2 * n + 1] = XI[:, n + 1 : 2 * n + 1] @ Rinv
                s -= 1.0
            while s < 0.0:
                x[:] = np.mod(Rinv @ x, TWO_PI)
                p[:] = RT @ p
                p_ref[:] = RT @ p_ref
                XI[:, :n] = XI[:, :n] @ Rinv.T
                XI[:, n + 1 : 2 * n + 1] = XI[:, n + 1 : 2 * n + 1] @ R
                s += 1.0
        if k % stride == 0 or k == nsteps:
            record(k)

    traj = Trajectory(
        np.asarray(t_l), np.asarray(x_l), np.asarray(s_l), np.asarray(p_l),
        np.asarray(ps_l), np.asarray(h_l), np.asarray(pd_l),
        config.method, config.dt, wrap,
    )
    return traj, np.asarray(xi_l)
