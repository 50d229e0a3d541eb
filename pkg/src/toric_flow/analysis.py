"""Long-time diagnostics: section crossings, return maps, Lyapunov data.

The Poincare section is a fibre level {s = s0}; crossings are located by
sign change of the section offset along a fixed-step midpoint trajectory
and refined by bisection on re-integrated substeps from the bracketing
state.  The largest Lyapunov exponent uses the classical two-trajectory
variational scheme with periodic renormalisation, measured by default in
the Riemannian phase-space norm (the coordinate norm on the covering
space misattributes growth that the deck transformation absorbs).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import (
    IntegratorConfig,
    _deck_mats,
    _midpoint_step_arrays,
    _tangent_midpoint_arrays,
    step,
)
from .errors import NoReturnError, StepFailure
from .geometry import (
    KIND_GENERAL,
    PhasePoint,
    as_coupling,
    metric_at,
    riemannian_norm,
    wrap_to_fundamental,
)
from .potential import find_extrema
from .reduction import _unit_period_time, turning_points

TWO_PI = 2.0 * np.pi

_SECTION_TOL = 1e-10
_GRAZING_TOL = 1e-12
_CHUNK = 16384


@dataclass(frozen=True)
class SectionSpec:
    """Fibre-level section {s = s0} with a crossing direction filter."""

    s0: float
    direction: str = "both"

    def __post_init__(self):
        if self.direction not in ("up", "down", "both"):
            raise ValueError("direction must be 'up', 'down' or 'both'")
        if not np.isfinite(self.s0):
            raise ValueError("section level must be finite")


@dataclass(frozen=True)
class SectionCrossing:
    """A refined intersection of the trajectory with a section."""

    t: float
    z: PhasePoint
    direction: str
    grazing: bool


def _offset_fn(section: SectionSpec, suspension: bool):
    s0 = section.s0
    if suspension:
        return lambda s: ((s - s0 + 0.5) % 1.0) - 0.5
    return lambda s: s - s0


def _refine_crossing(A, V, z_a, t_a, dt, config, offset):
    """Bisect the substep length until the section offset vanishes."""
    f_a = offset(z_a.s)
    if abs(f_a) < _SECTION_TOL:
        return t_a, z_a
    lo, hi = 0.0, dt
    z_best = step(A, V, z_a, config, dt=dt)
    f_best = offset(z_best.s)
    tau_best = dt
    for _ in range(110):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        z_mid = step(A, V, z_a, config, dt=mid)
        f_mid = offset(z_mid.s)
        if abs(f_mid) < abs(f_best):
            z_best, f_best, tau_best = z_mid, f_mid, mid
        if abs(f_mid) < _SECTION_TOL:
            break
        if (f_mid < 0.0) == (f_a < 0.0):
            lo = mid
        else:
            hi = mid
    return t_a + tau_best, z_best


def _crossing_from(z, t, offset_slope_up: bool) -> SectionCrossing:
    grazing = abs(z.p_s) < _GRAZING_TOL
    if grazing:
        direction = "up" if offset_slope_up else "down"
    else:
        direction = "up" if z.p_s > 0 else "down"
    return SectionCrossing(t, z, direction, grazing)


def find_section_crossings(
    A,
    V,
    z0: PhasePoint,
    config: IntegratorConfig,
    section: SectionSpec,
    suspension: bool = False,
    max_crossings: int | None = None,
) -> list:
    """All section crossings over [0, t_end], refined to |s - s0| < 1e-10.

    In suspension mode the offset is taken modulo one fibre period and
    jumps caused by the deck wrap are ignored.  A start exactly on the
    section is not itself reported; detection begins after one step.
    """
    A = as_coupling(A)
    if config.method != "implicit_midpoint":
        raise ValueError("section scanning requires the midpoint integrator")
    offset = _offset_fn(section, suspension)
    nsteps = config.n_steps()
    dt = config.dt
    if suspension:
        z0 = wrap_to_fundamental(A, z0)
        R, Rinv, RinvT, RT = _deck_mats(A)
    else:
        R = Rinv = RinvT = RT = np.eye(A.n)

    matches: list = []
    want = np.inf if max_crossings is None else int(max_crossings)

    use_kernel = _kernels.HAVE_NUMBA and A.kind != KIND_GENERAL
    n = A.n

    z_left = z0
    f_left = offset(z0.s)
    skip_first = abs(f_left) < _SECTION_TOL
    done = 0

    def consider(f_right, z_right, k_global):
        """Examine the bracket (state after step k_global-1, after k_global)."""
        nonlocal z_left, f_left
        took = False
        if not (skip_first and k_global == 1):
            jump_ok = (not suspension) or abs(f_right - f_left) < 0.5
            sign_change = (f_left < 0.0 < f_right) or (f_left > 0.0 > f_right) or (
                f_right == 0.0 and f_left != 0.0
            )
            if jump_ok and (sign_change or f_left == 0.0):
                if f_left == 0.0:
                    t_c, z_c = (k_global - 1) * dt, z_left
                else:
                    t_c, z_c = _refine_crossing(
                        A, V, z_left, (k_global - 1) * dt, dt, config, offset
                    )
                cross = _crossing_from(z_c, t_c, f_right > f_left)
                if section.direction in ("both", cross.direction):
                    matches.append(cross)
                    took = True
        z_left, f_left = z_right, f_right
        return took

    if use_kernel:
        x = z0.x.copy()
        s = z0.s
        p = z0.p.copy()
        ps = z0.p_s
        x_out = np.empty((_CHUNK, n))
        p_out = np.empty((_CHUNK, n))
        s_out = np.empty(_CHUNK)
        ps_out = np.empty(_CHUNK)
        while done < nsteps and len(matches) < want:
            m = min(_CHUNK, nsteps - done)
            status, _, resid, s, ps = _kernels.series_chunk(
                x, s, p, ps, m, dt, config.fixed_point_tol,
                config.max_fixed_point_iters,
                suspension, R, Rinv, RinvT, RT,
                *A.kernel_args(), V.a0, V.cos_coeffs, V.sin_coeffs,
                x_out, s_out, p_out, ps_out,
            )
            if status != 0:
                raise StepFailure(resid, dt, config.max_fixed_point_iters)
            for j in range(m):
                z_j = PhasePoint(x_out[j], s_out[j], p_out[j], ps_out[j])
                consider(offset(s_out[j]), z_j, done + j + 1)
                if len(matches) >= want:
                    break
            done += m
    else:
        z = z0
        while done < nsteps and len(matches) < want:
            z = step(A, V, z, config)
            if suspension:
                z = wrap_to_fundamental(A, z)
            done += 1
            consider(offset(z.s), z, done)

    return matches


def poincare_return(
    A,
    V,
    start: SectionCrossing,
    config: IntegratorConfig,
    section: SectionSpec,
    suspension: bool = False,
    horizon: float | None = None,
) -> SectionCrossing:
    """First same-direction return of the section map after ``start``.

    The search runs for ``horizon`` time units (default config.t_end) and
    raises NoReturnError when the orbit never comes back, e.g. when the
    section lies outside the accessible band of the leaf.
    """
    if section.direction == "both":
        section = SectionSpec(section.s0, start.direction)
    horizon = config.t_end if horizon is None else float(horizon)
    cfg = config.with_(t_end=horizon)
    found = find_section_crossings(
        A, V, start.z, cfg, section, suspension=suspension, max_crossings=1
    )
    if not found:
        raise NoReturnError(horizon)
    hit = found[0]
    return SectionCrossing(start.t + hit.t, hit.z, hit.direction, hit.grazing)


@dataclass(frozen=True)
class LyapunovEstimate:
    """Benettin estimate of the largest exponent.

    ``series`` holds the running estimate at the renormalisation times,
    so convergence (or its absence) stays visible to callers.
    """

    final: float
    times: np.ndarray
    series: np.ndarray
    norm: str
    renorm_interval: float
    horizon: float
    dt: float


def _coord_norm(xi):
    return float(np.sqrt(xi @ xi))


def _riem_norm(A, s, xi, n):
    m = metric_at(A, s)
    return riemannian_norm(m, xi[:n], xi[n], xi[n + 1 : 2 * n + 1], xi[2 * n + 1])


def mle_benettin(
    A,
    V,
    z0: PhasePoint,
    T: float,
    renorm_interval: float,
    config: IntegratorConfig,
    tangent0=None,
    norm: str = "riemannian",
    suspension: bool = False,
) -> LyapunovEstimate:
    """Largest Lyapunov exponent over horizon T.

    The tangent frame is renormalised every ``renorm_interval`` time units
    (which must be at least 100 times smaller than T and an integer number
    of steps).  ``norm`` selects the Riemannian phase-space norm or the
    raw coordinate norm; suspension mode wraps the base state and carries
    the frame through the deck map.
    """
    A = as_coupling(A)
    if norm not in ("riemannian", "coordinate"):
        raise ValueError("norm must be 'riemannian' or 'coordinate'")
    if config.method != "implicit_midpoint":
        raise ValueError("the exponent estimator requires the midpoint integrator")
    dt = config.dt
    steps_per = int(round(renorm_interval / dt))
    if steps_per < 1 or abs(steps_per * dt - renorm_interval) > 1e-9 * max(
        1.0, renorm_interval
    ):
        raise ValueError("renorm_interval must be a positive multiple of dt")
    n_int = int(round(T / renorm_interval))
    if abs(n_int * renorm_interval - T) > 1e-6 * max(1.0, T):
        raise ValueError("T must be an integer number of renorm intervals")
    if T < 100.0 * renorm_interval:
        raise ValueError("horizon too short: need T >= 100 * renorm_interval")

    n = A.n
    d = 2 * n + 2
    if tangent0 is None:
        tangent0 = np.random.default_rng(0x5EED).standard_normal(d)
    xi = np.asarray(tangent0, dtype=float).copy()
    if xi.shape != (d,):
        raise ValueError(f"tangent frame must have length {d}")

    if suspension:
        z0 = wrap_to_fundamental(A, z0)
        R, Rinv, RinvT, RT = _deck_mats(A)
    else:
        R = Rinv = RinvT = RT = np.eye(n)
    norm_kind = 0 if norm == "riemannian" else 1

    use_kernel = _kernels.HAVE_NUMBA and A.kind != KIND_GENERAL
    if use_kernel:
        x = z0.x.copy()
        p = z0.p.copy()
        lam_out = np.empty(n_int)
        status, info, resid = _kernels.mle_fused(
            x, z0.s, p, z0.p_s, xi, n_int, steps_per, dt,
            config.fixed_point_tol, config.max_fixed_point_iters,
            norm_kind, suspension, R, Rinv, RinvT, RT,
            *A.kernel_args(), V.a0, V.cos_coeffs, V.sin_coeffs, lam_out,
        )
        if status == 1:
            raise StepFailure(resid, dt, config.max_fixed_point_iters)
        if status == 2:
            raise ValueError("tangent frame norm degenerated during the run")
        series = lam_out
    else:
        x = z0.x.copy()
        s = z0.s
        p = z0.p.copy()
        ps = z0.p_s
        XI = xi.reshape(1, d)

        def tnorm():
            if norm_kind == 1:
                return _coord_norm(xi)
            return _riem_norm(A, s, xi, n)

        g0 = tnorm()
        if g0 == 0.0 or not np.isfinite(g0):
            raise ValueError("tangent frame norm degenerated during the run")
        xi /= g0
        acc = 0.0
        series = np.empty(n_int)
        for it in range(n_int):
            for _ in range(steps_per):
                s_m, s_new, ps_new = _midpoint_step_arrays(
                    A, V, x, s, p, ps, dt,
                    config.fixed_point_tol, config.max_fixed_point_iters,
                )
                _tangent_midpoint_arrays(A, V, XI, s_m, p, dt)
                s, ps = s_new, ps_new
                if suspension:
                    while s >= 1.0:
                        x[:] = np.mod(R @ x, TWO_PI)
                        p[:] = RinvT @ p
                        xi[:n] = R @ xi[:n]
                        xi[n + 1 : 2 * n + 1] = RinvT @ xi[n + 1 : 2 * n + 1]
                        s -= 1.0
                    while s < 0.0:
                        x[:] = np.mod(Rinv @ x, TWO_PI)
                        p[:] = RT @ p
                        xi[:n] = Rinv @ xi[:n]
                        xi[n + 1 : 2 * n + 1] = RT @ xi[n + 1 : 2 * n + 1]
                        s += 1.0
            g = tnorm()
            if g == 0.0 or not np.isfinite(g):
                raise ValueError("tangent frame norm degenerated during the run")
            acc += np.log(g)
            xi /= g
            series[it] = acc / ((it + 1) * steps_per * dt)

    times = renorm_interval * np.arange(1, n_int + 1)
    return LyapunovEstimate(
        float(series[-1]), times, series, norm, renorm_interval,
        n_int * renorm_interval, dt,
    )


def analytic_mle_oracle(A, V, h: float, c=None) -> float:
    """Exponent of the supercritical drift regime, by quadrature.

    Valid for symmetric A, zero torus momentum and h above the potential
    ceiling: the fibre advances one period per T1 = int ds / sqrt(2(h-V))
    and each period multiplies the expanding tangent direction by the top
    eigenvalue of exp(A), giving lambda = lambda_max(A) / T1.
    """
    A = as_coupling(A)
    if c is not None and np.any(np.asarray(c, dtype=float)):
        raise ValueError("oracle requires zero torus momentum")
    scale = np.abs(A.entries).max()
    if scale > 0 and np.abs(A.entries - A.entries.T).max() > 1e-12 * scale:
        raise ValueError("oracle requires a symmetric coupling matrix")
    ext = find_extrema(V)
    if h <= ext.v_max + 1e-12:
        raise ValueError("oracle requires h above the potential ceiling")
    lam_max = float(np.linalg.eigvalsh(0.5 * (A.entries + A.entries.T)).max())
    if lam_max == 0.0:
        return 0.0
    T1 = _unit_period_time(A, V, np.zeros(A.n), h)
    return lam_max / T1


@dataclass(frozen=True)
class ScanRow:
    """One Lyapunov sample in an energy scan (sample < 0 marks an empty level)."""

    level_index: int
    h: float
    sample: int
    lambda_final: float
    lambda_half: float
    classification: str


@dataclass(frozen=True)
class ScanReport:
    rows: tuple
    T: float
    dt: float
    renorm_interval: float
    seed: int
    samples_per_level: int

    CSV_HEADER = "h,sample,lambda_final,lambda_half,classification,T,dt,seed"

    def to_csv(self) -> str:
        tail = f"{self.T:.17g},{self.dt:.17g},{self.seed}"
        out = [self.CSV_HEADER]
        for r in self.rows:
            out.append(
                f"{r.h:.17g},{r.sample},"
                f"{r.lambda_final:.17g},{r.lambda_half:.17g},{r.classification},{tail}"
            )
        return "\n".join(out) + "\n"


def _classify(lam_final: float, lam_half: float, T: float) -> str:
    """Zero/positive split with a hysteresis band around theta = 20/T.

    A finite-horizon estimate of an exactly zero exponent decays like
    log(t)/t, so values below theta read as zero and values in the band
    [theta, 5 theta) are judged by whether they kept decaying between T/2
    and T.
    """
    theta = 20.0 / T
    if lam_final >= 5.0 * theta:
        return "positive"
    if lam_final < theta:
        return "zero"
    return "zero" if lam_final <= 0.75 * lam_half else "positive"


def _draw_sample(A, V, ext, h, level_index, sample_index, seed, pbar_scale, n):
    """Deterministic initial data for one scan sample.

    The rng stream depends only on (seed, level_index, sample_index), and
    the draw order below is fixed: changing it would silently re-seed
    every published scan.
    """
    rng = np.random.default_rng([seed, level_index, sample_index])
    x = rng.uniform(0.0, TWO_PI, n)
    supercritical = h >= ext.v_max - 1e-12
    if supercritical:
        s = float(rng.uniform(0.0, 1.0))
        p = np.zeros(n)
        ps_sign = 1.0
    else:
        tp = turning_points(A, V, np.zeros(n), h)
        u = float(rng.uniform())
        s = tp.s_lo + (0.05 + 0.9 * u) * (tp.s_hi - tp.s_lo)
        y = rng.standard_normal(n)
        u_r = float(rng.uniform())
        Qinv = metric_at(A, s).Qinv
        y_norm = float(np.sqrt(y @ Qinv @ y))
        avail = h - float(V(s))
        target = pbar_scale * np.sqrt(2.0 * avail) * u_r ** (1.0 / n)
        p = y * (target / y_norm)
        ps_sign = 1.0 if int(rng.integers(0, 2)) == 1 else -1.0
    kin = h - float(V(s)) - 0.5 * float(p @ metric_at(A, s).Qinv @ p)
    ps = ps_sign * np.sqrt(max(0.0, 2.0 * kin))
    tangent = rng.standard_normal(2 * n + 2)
    return PhasePoint(x, s, p, ps), tangent


def entropy_scan(
    A,
    V,
    h_grid,
    samples_per_level: int,
    T: float,
    config: IntegratorConfig,
    seed: int,
    renorm_interval: float = 1.0,
    pbar_scale: float = 0.7,
    suspension: bool = True,
    threads: int = 1,
) -> ScanReport:
    """Classify sampled leaves at each energy level as zero or positive.

    Sampling, integration and classification of each (level, sample) pair
    depend only on (seed, level index, sample index), so the report is
    bit-identical for any thread count.  Levels below the potential floor
    produce a single marker row.
    """
    A = as_coupling(A)
    n = A.n
    if not (0.0 <= pbar_scale < 1.0):
        raise ValueError("pbar_scale must lie in [0, 1)")
    if samples_per_level < 1:
        raise ValueError("samples_per_level must be at least 1")
    threads = max(1, int(threads))
    h_grid = [float(h) for h in h_grid]
    ext = find_extrema(V)

    if not suspension and A.spectral_norm > 0:
        for h in h_grid:
            if h >= ext.v_max - 1e-12:
                raise ValueError(
                    "levels above the potential ceiling need suspension mode: "
                    "the fibre coordinate drifts without bound"
                )

    jobs = []
    for i, h in enumerate(h_grid):
        if h < ext.v_min - 1e-12:
            continue
        for j in range(samples_per_level):
            jobs.append((i, h, j))

    def run_one(job):
        i, h, j = job
        z0, tangent = _draw_sample(A, V, ext, h, i, j, seed, pbar_scale, n)
        est = mle_benettin(
            A, V, z0, T, renorm_interval, config,
            tangent0=tangent, norm="riemannian", suspension=suspension,
        )
        half_idx = max(0, est.series.size // 2 - 1)
        lam_half = float(est.series[half_idx])
        return ScanRow(
            i, h, j, est.final, lam_half, _classify(est.final, lam_half, T)
        )

    if threads == 1:
        results = [run_one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_one, jobs))

    by_key = {(r.level_index, r.sample): r for r in results}
    rows = []
    for i, h in enumerate(h_grid):
        if h < ext.v_min - 1e-12:
            rows.append(ScanRow(i, h, -1, np.nan, np.nan, "empty"))
            continue
        for j in range(samples_per_level):
            rows.append(by_key[(i, j)])
    return ScanReport(
        tuple(rows), T, config.dt, renorm_interval, int(seed), samples_per_level
    )
