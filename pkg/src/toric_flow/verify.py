"""Self-audit: invariant checks runnable against any scenario.

Each check produces a CheckResult row; a failed row means either a genuine
defect or a scenario pushed outside the integrator's validity (the energy
check at dt = 0.5, say).  Checks that need structure the scenario lacks
(a banded potential, an integer automorphism) report status "skip".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import SectionSpec, analytic_mle_oracle, find_section_crossings, mle_benettin
from .config import Scenario, initial_state
from .dynamics import IntegratorConfig, flow_jacobian, integrate, vector_field
from .errors import ToricFlowError
from .geometry import (
    CouplingMatrix,
    PhasePoint,
    check_integer_automorphism,
    deck_transform,
    hamiltonian,
    metric_at,
)
from .potential import find_extrema
from .reduction import effective_potential, reduced_period_and_frequencies, turning_points


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bound: float
    status: str  # "pass" | "fail" | "skip"
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


def _result(name, value, bound, note="") -> CheckResult:
    status = "pass" if value <= bound else "fail"
    return CheckResult(name, float(value), float(bound), status, note)


def _skip(name, note) -> CheckResult:
    return CheckResult(name, float("nan"), float("nan"), "skip", note)


def _random_couplings(sc: Scenario, rng, count):
    mats = [sc.coupling]
    n = sc.n
    for _ in range(count):
        mats.append(CouplingMatrix(rng.uniform(-1.0, 1.0, (n, n))))
    return mats


def _check_det_law(sc, rng) -> CheckResult:
    worst = 0.0
    for A in _random_couplings(sc, rng, 40):
        for _ in range(5):
            s = float(rng.uniform(-3.0, 3.0))
            m = metric_at(A, s)
            det = np.linalg.det(m.Q)
            expect = np.exp(2.0 * s * np.trace(A.entries))
            worst = max(worst, abs(det - expect) / abs(expect))
    return _result("exp_determinant_law", worst, 1e-10)


def _check_dqinv_fd(sc, rng) -> CheckResult:
    worst = 0.0
    eps = 1e-5
    for A in _random_couplings(sc, rng, 20):
        for _ in range(5):
            s = float(rng.uniform(-2.0, 2.0))
            m = metric_at(A, s)
            fd = (metric_at(A, s + eps).Qinv - metric_at(A, s - eps).Qinv) / (2 * eps)
            scale = max(1.0, np.abs(fd).max())
            worst = max(worst, np.abs(fd - m.dQinv_ds).max() / scale)
    return _result("qinv_derivative_fd", worst, 1e-6)


def _check_metric_deck(sc, rng) -> CheckResult:
    worst = 0.0
    for A in _random_couplings(sc, rng, 20):
        R = A.exp_at(1.0)
        for _ in range(5):
            s = float(rng.uniform(-2.0, 2.0))
            Q1 = metric_at(A, s - 1.0).Q
            Q0 = metric_at(A, s).Q
            dev = np.abs(R.T @ Q1 @ R - Q0).max() / max(1.0, np.abs(Q0).max())
            worst = max(worst, dev)
    return _result("metric_deck_invariance", worst, 1e-10)


def _check_energy_deck(sc, rng) -> CheckResult:
    A, V = sc.coupling, sc.potential
    if not check_integer_automorphism(A):
        return _skip("energy_deck_invariance", "skipped: exp(A) not an integer automorphism")
    worst = 0.0
    for _ in range(50):
        z = PhasePoint(
            rng.uniform(0, 2 * np.pi, sc.n), rng.uniform(-1.5, 1.5),
            rng.uniform(-1, 1, sc.n), rng.uniform(-2, 2),
        )
        H0 = hamiltonian(A, V, z)
        for k in (-2, -1, 1, 2):
            Hk = hamiltonian(A, V, deck_transform(A, z, k))
            worst = max(worst, abs(Hk - H0) / max(1.0, abs(H0)))
    return _result("energy_deck_invariance", worst, 1e-12)


def _check_jacobian_fd(sc, rng) -> CheckResult:
    A, V = sc.coupling, sc.potential
    n = sc.n
    d = 2 * n + 2
    worst = 0.0
    eps = 1e-6
    for _ in range(100):
        z = PhasePoint(
            rng.uniform(0, 2 * np.pi, n), rng.uniform(-1.0, 1.0),
            rng.uniform(-1, 1, n), rng.uniform(-2, 2),
        )
        J = flow_jacobian(A, V, z)
        Jfd = np.empty_like(J)
        base = z.flat()
        for c in range(d):
            hi = base.copy()
            lo = base.copy()
            hi[c] += eps
            lo[c] -= eps
            fp = vector_field(A, V, PhasePoint.from_flat(hi, n)).flat()
            fm = vector_field(A, V, PhasePoint.from_flat(lo, n)).flat()
            Jfd[:, c] = (fp - fm) / (2 * eps)
        scale = max(1.0, np.linalg.norm(Jfd))
        worst = max(worst, np.linalg.norm(J - Jfd) / scale)
    return _result("jacobian_fd", worst, 1e-6)


def _drift_checks(sc, z0) -> list:
    A, V = sc.coupling, sc.potential
    cfg = sc.integrator
    T_run = min(cfg.t_end, 50.0)
    nsteps = max(1, int(round(T_run / cfg.dt)))
    cfg_run = cfg.with_(t_end=nsteps * cfg.dt, record_stride=max(1, nsteps // 2000))
    bound = max(100.0 * cfg.dt**2, 1e-9)
    try:
        traj = integrate(A, V, z0, cfg_run, wrap=sc.suspension)
    except ToricFlowError as exc:
        return [
            CheckResult("energy_drift", float("inf"), bound, "fail", f"integration failed: {exc}"),
            CheckResult("energy_drift_secularity", float("nan"), 2.5, "fail", "no trajectory"),
            CheckResult("momentum_drift", float("nan"), 0.0, "fail", "no trajectory"),
        ]
    drift = traj.h_drift
    value = float(drift.max())
    half = float(drift[: max(2, len(drift) // 2)].max())
    secular = value / max(half, 1e-300)
    return [
        _result("energy_drift", value, bound, f"T={cfg_run.t_end:g}, dt={cfg.dt:g}"),
        _result("energy_drift_secularity", secular, 2.5,
                "max drift over [0,T] vs [0,T/2]"),
        _result("momentum_drift", float(traj.p_drift.max()), 0.0,
                "pbar is conserved to the bit"),
    ]


def _check_reversibility(sc, z0) -> CheckResult:
    A, V = sc.coupling, sc.potential
    cfg = sc.integrator.with_(t_end=min(10.0, sc.integrator.t_end), record_stride=10**9)
    cfg = cfg.with_(t_end=max(cfg.dt, round(cfg.t_end / cfg.dt) * cfg.dt))
    try:
        fwd = integrate(A, V, z0, cfg, wrap=sc.suspension).final
        back = integrate(
            A, V, PhasePoint(fwd.x, fwd.s, -fwd.p, -fwd.p_s), cfg,
            wrap=sc.suspension,
        ).final
    except ToricFlowError as exc:
        return CheckResult("reversibility", float("inf"), 1e-6, "fail", str(exc))
    dx = np.abs((back.x - z0.x + np.pi) % (2 * np.pi) - np.pi).max()
    dev = max(
        dx, abs(back.s - z0.s),
        float(np.abs(back.p + z0.p).max()), abs(back.p_s + z0.p_s),
    )
    return _result("reversibility", dev, 1e-6, f"T={cfg.t_end:g} out and back")


def _band_level(V):
    ext = find_extrema(V)
    if ext.constant or ext.v_max - ext.v_min < 1e-9:
        return None, ext
    return ext.v_min + 0.6 * (ext.v_max - ext.v_min), ext


def _check_reconstruction(sc) -> CheckResult:
    A, V = sc.coupling, sc.potential
    h, ext = _band_level(V)
    wrap = bool(check_integer_automorphism(A))
    if h is None:
        h = V.a0 + 0.5
        if not wrap and A.spectral_norm > 0:
            return _skip("trajectory_energy_reconstruction",
                         "skipped: constant potential and no automorphism to wrap with")
        s0 = 0.2
    else:
        tp = turning_points(A, V, np.zeros(sc.n), h)
        s0 = 0.5 * (tp.s_lo + tp.s_hi)
    ps0 = float(np.sqrt(2.0 * (h - V(s0))))
    z0 = PhasePoint(np.zeros(sc.n), s0, np.zeros(sc.n), ps0)
    cfg = IntegratorConfig(dt=2e-5, t_end=2.0, record_stride=50)
    traj = integrate(A, V, z0, cfg, wrap=wrap)
    value = float(np.abs(0.5 * traj.p_s**2 + V(traj.s) - h).max())
    return _result("trajectory_energy_reconstruction", value, 1e-8,
                   "max |p_s^2/2 + V - h| on a pbar = 0 orbit, dt=2e-5")


def _check_period_and_identity(sc) -> list:
    A, V = sc.coupling, sc.potential
    h, _ = _band_level(V)
    if h is None:
        note = "skipped: constant potential has no banded leaves"
        return [_skip("reduced_period_match", note), _skip("poincare_identity", note)]
    c = np.zeros(sc.n)
    T_quad, _ = reduced_period_and_frequencies(A, V, c, h)
    tp = turning_points(A, V, c, h)
    s0 = 0.5 * (tp.s_lo + tp.s_hi)
    z0 = PhasePoint(np.full(sc.n, 0.7), s0, c, float(np.sqrt(2.0 * (h - V(s0)))))
    cfg = IntegratorConfig(dt=1e-4, t_end=round(3.0 * T_quad, 4))
    section = SectionSpec(s0, "up")
    hits = find_section_crossings(A, V, z0, cfg, section)
    if len(hits) < 2:
        return [
            CheckResult("reduced_period_match", float("inf"), 1e-4, "fail",
                        f"only {len(hits)} section crossings found"),
            CheckResult("poincare_identity", float("inf"), 1e-6, "fail",
                        "not enough crossings"),
        ]
    dt_ret = hits[1].t - hits[0].t
    period_err = abs(dt_ret - T_quad) / T_quad
    a, b = hits[0].z, hits[1].z
    dev = max(
        float(np.abs((b.x - a.x + np.pi) % (2 * np.pi) - np.pi).max()),
        abs(b.s - a.s), float(np.abs(b.p - a.p).max()), abs(b.p_s - a.p_s),
    )
    return [
        _result("reduced_period_match", period_err, 1e-4,
                f"return time vs quadrature period {T_quad:.6g}"),
        _result("poincare_identity", dev, 1e-6,
                "return map deviation on a pbar = 0 leaf"),
    ]


def _check_lyapunov(sc) -> list:
    A, V = sc.coupling, sc.potential
    sym = np.abs(A.entries - A.entries.T).max() <= 1e-12 * max(
        1.0, np.abs(A.entries).max()
    )
    if not (check_integer_automorphism(A) and sym):
        note = "skipped: needs a symmetric integer-automorphism coupling"
        return [_skip("lyapunov_supercritical", note), _skip("lyapunov_band_zero", note)]
    ext = find_extrema(V)
    out = []
    h_sup = ext.v_max + 1.5
    oracle = analytic_mle_oracle(A, V, h_sup)
    s0 = 0.1
    z0 = PhasePoint(np.zeros(sc.n), s0, np.zeros(sc.n),
                    float(np.sqrt(2.0 * (h_sup - V(s0)))))
    cfg = IntegratorConfig(dt=5e-3, t_end=1.0)
    rng = np.random.default_rng(sc.seed)
    est = mle_benettin(A, V, z0, 200.0, 0.5, cfg,
                       tangent0=rng.standard_normal(2 * sc.n + 2),
                       suspension=True)
    if oracle < 1e-12:
        out.append(_result("lyapunov_supercritical", abs(est.final), 0.05,
                           "flat coupling: exponent should vanish"))
    else:
        out.append(_result("lyapunov_supercritical",
                           abs(est.final - oracle) / oracle, 0.1,
                           f"measured {est.final:.4g} vs oracle {oracle:.4g}"))
    h_band, _ = _band_level(V)
    if h_band is None:
        out.append(_skip("lyapunov_band_zero", "skipped: no banded leaves"))
        return out
    tp = turning_points(A, V, np.zeros(sc.n), h_band)
    sb = 0.5 * (tp.s_lo + tp.s_hi)
    zb = PhasePoint(np.full(sc.n, 0.3), sb, np.zeros(sc.n),
                    float(np.sqrt(2.0 * (h_band - V(sb)))))
    estb = mle_benettin(A, V, zb, 300.0, 0.5, cfg,
                        tangent0=rng.standard_normal(2 * sc.n + 2),
                        suspension=sc.suspension)
    out.append(_result("lyapunov_band_zero", estb.final, 20.0 / 300.0,
                       "banded leaf exponent must read as zero"))
    return out


def verify_suite(sc: Scenario) -> list:
    """Run every applicable check against the scenario; returns CheckResults."""
    rng = np.random.default_rng([sc.seed, 0xC0FFEE])
    z0 = initial_state(sc)
    results = [
        _check_det_law(sc, rng),
        _check_dqinv_fd(sc, rng),
        _check_metric_deck(sc, rng),
        _check_energy_deck(sc, rng),
        _check_jacobian_fd(sc, rng),
    ]
    results.extend(_drift_checks(sc, z0))
    results.append(_check_reversibility(sc, z0))
    results.append(_check_reconstruction(sc))
    results.extend(_check_period_and_identity(sc))
    results.extend(_check_lyapunov(sc))
    return results
