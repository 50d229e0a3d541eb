"""Integrators: exactness, order, conservation, tangent dynamics."""

import numpy as np
import pytest

from toric_flow import (
    CouplingMatrix,
    FourierPotential,
    IntegratorConfig,
    PhasePoint,
    StepFailure,
    flow_jacobian,
    flow_with_tangents,
    hamiltonian,
    integrate,
    step,
    vector_field,
)

CAT_SCALE = np.log((3 + np.sqrt(5)) / 2) / np.sqrt(5)
A_CAT = CouplingMatrix(CAT_SCALE * np.array([[1.0, 2.0], [2.0, -1.0]]))
A_FLAT = CouplingMatrix(np.zeros((2, 2)))
V_COS = FourierPotential(0.0, [1.0])
V_NONE = FourierPotential(0.0)


def test_vector_field_closed_form():
    # At s = 0 the metric is euclidean, so xdot = p, sdot = p_s, pdot = 0
    # and p_s dot = p^T A p - V'(0).
    z = PhasePoint([0.0, 0.0], 0.0, [1.0, 2.0], 0.3)
    f = vector_field(A_CAT, V_COS, z)
    assert np.abs(f.dx - z.p).max() < 1e-14
    assert f.ds == z.p_s
    assert np.abs(f.dp).max() == 0.0
    expect = float(z.p @ (A_CAT.entries @ z.p))  # V'(0) = 0
    assert f.dp_s == pytest.approx(expect, rel=1e-14)


def test_free_flow_is_exact():
    z0 = PhasePoint([0.1, 0.4], -0.3, [0.3, -0.2], 1.0)
    cfg = IntegratorConfig(dt=1e-3, t_end=5.0, record_stride=500)
    traj = integrate(A_FLAT, V_NONE, z0, cfg)
    t = traj.t
    assert np.abs(traj.x - (z0.x + np.outer(t, z0.p))).max() < 1e-11
    assert np.abs(traj.s - (z0.s + t * z0.p_s)).max() < 1e-11
    assert traj.h_drift.max() == 0.0
    assert traj.p_drift.max() == 0.0


def test_midpoint_is_second_order():
    z0 = PhasePoint([0.0, 0.0], 0.35, [0.2, 0.1], 0.9)

    def final_state(dt):
        cfg = IntegratorConfig(dt=dt, t_end=1.0, record_stride=10**9)
        return integrate(A_CAT, V_COS, z0, cfg).final.flat()

    ref = final_state(1e-4)
    err1 = np.abs(final_state(8e-3) - ref).max()
    err2 = np.abs(final_state(4e-3) - ref).max()
    ratio = err1 / err2
    assert 3.4 < ratio < 4.6, f"expected ~4 for a second order method, got {ratio}"


def test_single_step_against_fine_reference():
    z0 = PhasePoint([0.2, 0.1], 0.4, [0.15, -0.1], 0.7)
    cfg = IntegratorConfig(dt=1e-4, t_end=1.0)
    one = step(A_CAT, V_COS, z0, cfg)
    fine = integrate(
        A_CAT, V_COS, z0, IntegratorConfig(dt=1e-6, t_end=1e-4, record_stride=10**9)
    ).final
    assert np.abs(one.flat() - fine.flat()).max() < 1e-11


def test_energy_drift_bounded_and_not_secular():
    z0 = PhasePoint([0.0, 0.0], 0.5, [0.1, -0.05], 1.2)
    cfg = IntegratorConfig(dt=1e-3, t_end=50.0, record_stride=50)
    traj = integrate(A_CAT, V_COS, z0, cfg)
    drift = traj.h_drift
    assert drift.max() < 100 * cfg.dt**2
    # symplectic behaviour: the error oscillates instead of accumulating
    half = drift[: len(drift) // 2].max()
    assert drift.max() <= 2.5 * half
    assert traj.p_drift.max() == 0.0


def test_kernel_and_reference_paths_agree():
    z0 = PhasePoint([0.3, 2.2], 0.45, [0.2, 0.15], 0.8)
    cfg = IntegratorConfig(dt=1e-3, t_end=0.2)
    fast = integrate(A_CAT, V_COS, z0, cfg)
    slow = integrate(A_CAT, V_COS, z0, cfg, observers=(lambda t, z: None,))
    assert np.abs(fast.x - slow.x).max() < 1e-12
    assert np.abs(fast.s - slow.s).max() < 1e-12
    assert np.abs(fast.p_s - slow.p_s).max() < 1e-12
    assert np.abs(fast.p - slow.p).max() == 0.0


def test_kernel_and_reference_paths_agree_wrapped():
    z0 = PhasePoint([0.3, 2.2], 0.45, [0.0, 0.0], 2.3)
    cfg = IntegratorConfig(dt=1e-3, t_end=2.0, record_stride=100)
    fast = integrate(A_CAT, V_COS, z0, cfg, wrap=True)
    slow = integrate(A_CAT, V_COS, z0, cfg, wrap=True,
                     observers=(lambda t, z: None,))
    assert np.abs(fast.s - slow.s).max() < 1e-12
    assert np.abs(fast.x - slow.x).max() < 1e-11
    assert fast.wrapped and slow.wrapped
    assert np.all(fast.s >= 0.0) and np.all(fast.s < 1.0)


def test_wrapped_momentum_drift_is_exactly_zero():
    # The deck transport of the reference momentum uses the same matrix
    # product as the state, so the drift must be bitwise zero even though
    # pbar itself changes at every wrap.
    z0 = PhasePoint([1.0, 2.0], 0.1, [0.4, -0.3], 2.0)
    cfg = IntegratorConfig(dt=2e-3, t_end=10.0, record_stride=100)
    traj = integrate(A_CAT, V_COS, z0, cfg, wrap=True)
    assert traj.p_drift.max() == 0.0
    assert traj.h_drift.max() < 100 * cfg.dt**2


def test_reversibility():
    z0 = PhasePoint([0.7, 0.2], 0.3, [0.25, 0.1], 1.1)
    cfg = IntegratorConfig(dt=1e-3, t_end=8.0, record_stride=10**9)
    fwd = integrate(A_CAT, V_COS, z0, cfg).final
    flipped = PhasePoint(fwd.x, fwd.s, -fwd.p, -fwd.p_s)
    back = integrate(A_CAT, V_COS, flipped, cfg).final
    assert np.abs(back.x - z0.x).max() < 1e-9
    assert abs(back.s - z0.s) < 1e-9
    assert np.abs(back.p + z0.p).max() == 0.0
    assert abs(back.p_s + z0.p_s) < 1e-9


def test_rk4_conserves_at_fourth_order():
    z0 = PhasePoint([0.0, 0.0], 0.5, [0.1, -0.05], 1.2)
    cfg = IntegratorConfig(method="rk4", dt=1e-2, t_end=10.0, record_stride=10)
    traj = integrate(A_CAT, V_COS, z0, cfg)
    assert traj.p_drift.max() == 0.0
    assert traj.h_drift.max() < 1e-6  # ~ dt^4 scale for this orbit


def test_step_failure_at_coarse_dt():
    # At dt = 0.5 the fixed point iteration has contraction factor
    # (dt/2)^2 |V''| ~ 2.5 near the potential minimum and cannot converge.
    z0 = PhasePoint([0.0, 0.0], 0.5, [0.0, 0.0], 0.1)
    cfg = IntegratorConfig(dt=0.5, t_end=2.0)
    with pytest.raises(StepFailure) as exc_info:
        step(A_CAT, V_COS, z0, cfg)
    assert exc_info.value.dt == 0.5
    with pytest.raises(StepFailure):
        integrate(A_CAT, V_COS, z0, cfg)


def test_flow_jacobian_matches_finite_differences():
    eps = 1e-6
    for trial in range(25):
        rng = np.random.default_rng(900 + trial)
        z = PhasePoint(
            rng.uniform(0, 2 * np.pi, 2), rng.uniform(-1, 1),
            rng.uniform(-1, 1, 2), rng.uniform(-2, 2),
        )
        J = flow_jacobian(A_CAT, V_COS, z)
        Jfd = np.empty_like(J)
        base = z.flat()
        for c in range(6):
            hi, lo = base.copy(), base.copy()
            hi[c] += eps
            lo[c] -= eps
            fp = vector_field(A_CAT, V_COS, PhasePoint.from_flat(hi, 2)).flat()
            fm = vector_field(A_CAT, V_COS, PhasePoint.from_flat(lo, 2)).flat()
            Jfd[:, c] = (fp - fm) / (2 * eps)
        rel = np.linalg.norm(J - Jfd) / max(1.0, np.linalg.norm(Jfd))
        assert rel < 1e-6


def test_equilibrium_jacobian_spectrum():
    # At (s*, p = 0, p_s = 0) with V'(s*) = 0 the spectrum is 2n zeros plus
    # +-sqrt(-V''(s*)); the unstable barrier top s* = 0 gives +-2 pi.
    z = PhasePoint([0.4, 1.1], 0.0, [0.0, 0.0], 0.0)
    ev = np.linalg.eigvals(flow_jacobian(A_CAT, V_COS, z))
    ev = np.sort_complex(ev)
    lead = 2.0 * np.pi
    assert sum(1 for e in ev if abs(e) < 1e-9) == 4
    assert min(abs(e - lead) for e in ev) < 1e-9
    assert min(abs(e + lead) for e in ev) < 1e-9


def test_tangent_flow_matches_variational_finite_difference():
    z0 = PhasePoint([0.3, 0.8], 0.45, [0.2, -0.1], 0.9)
    cfg = IntegratorConfig(dt=1e-3, t_end=2.0, record_stride=10**9)
    rng = np.random.default_rng(42)
    v = rng.standard_normal(6)
    _, hist = flow_with_tangents(A_CAT, V_COS, z0, [v], cfg)
    xi_final = hist[-1, 0]
    eps = 1e-6
    zp = PhasePoint.from_flat(z0.flat() + eps * v, 2)
    zm = PhasePoint.from_flat(z0.flat() - eps * v, 2)
    fp = integrate(A_CAT, V_COS, zp, cfg).final.flat()
    fm = integrate(A_CAT, V_COS, zm, cfg).final.flat()
    fd = (fp - fm) / (2 * eps)
    rel = np.abs(xi_final - fd).max() / max(1.0, np.abs(fd).max())
    assert rel < 1e-5, f"tangent flow disagrees with variational FD: {rel}"


def test_tangent_growth_at_unstable_equilibrium():
    # Eigenvector (ds, dp_s) = (1, 2 pi) of the linearisation at the barrier
    # top grows like exp(2 pi t); one time unit multiplies it by ~535.49.
    z0 = PhasePoint([0.4, 1.1], 0.0, [0.0, 0.0], 0.0)
    v0 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 2.0 * np.pi])
    v0 = v0 / np.linalg.norm(v0)
    cfg = IntegratorConfig(dt=1e-4, t_end=1.0, record_stride=10**9)
    traj, hist = flow_with_tangents(A_CAT, V_COS, z0, [v0], cfg)
    assert np.abs(traj.final.flat() - z0.flat()).max() < 1e-12
    ratio = np.linalg.norm(hist[-1, 0])
    expect = np.exp(2.0 * np.pi)
    assert abs(ratio / expect - 1.0) < 1e-3, f"{ratio} vs {expect}"


def test_tangent_rk4_path_also_tracks_fd():
    z0 = PhasePoint([0.3, 0.8], 0.45, [0.2, -0.1], 0.9)
    cfg = IntegratorConfig(method="rk4", dt=1e-3, t_end=1.0, record_stride=10**9)
    v = np.array([0.1, -0.2, 0.5, 0.3, 0.0, -0.4])
    _, hist = flow_with_tangents(A_CAT, V_COS, z0, [v], cfg)
    eps = 1e-6
    fp = integrate(A_CAT, V_COS, PhasePoint.from_flat(z0.flat() + eps * v, 2), cfg)
    fm = integrate(A_CAT, V_COS, PhasePoint.from_flat(z0.flat() - eps * v, 2), cfg)
    fd = (fp.final.flat() - fm.final.flat()) / (2 * eps)
    assert np.abs(hist[-1, 0] - fd).max() < 1e-5


def test_config_validation_and_recording():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=1e-3, t_end=0.0015).n_steps()
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(dt=-1e-3)
    A1 = CouplingMatrix(np.zeros((1, 1)))
    cfg = IntegratorConfig(dt=0.01, t_end=1.0, record_stride=7)
    traj = integrate(A1, V_NONE, PhasePoint([0.0], 0.0, [0.1], 0.2), cfg)
    # records at steps 0, 7, ..., 98 and the final step 100
    expect_steps = list(range(0, 101, 7)) + [100]
    assert np.abs(traj.t - 0.01 * np.asarray(expect_steps)).max() < 1e-15
    # zero-length runs record just the initial point
    single = integrate(
        A1, V_NONE, PhasePoint([0.0], 0.0, [0.1], 0.2),
        IntegratorConfig(dt=0.01, t_end=0.0),
    )
    assert len(single) == 1


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        integrate(
            A_CAT, V_COS, PhasePoint([0.0], 0.0, [0.1], 0.2),
            IntegratorConfig(dt=0.01, t_end=0.1),
        )
