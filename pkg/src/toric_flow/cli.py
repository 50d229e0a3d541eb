"""Command line front end.

Every subcommand loads a scenario (bundled name or JSON path), runs one
piece of the laboratory and writes plain CSV/text files into --out.  Exit
codes: 0 success, 1 failed verification checks, 2 configuration problems,
3 runtime breakdown of the integrator or metric evaluation.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import entropy_scan, find_section_crossings, poincare_return
from .config import Scenario, initial_state, load_scenario
from .dynamics import integrate
from .errors import (
    ConfigError,
    DegenerateLeafError,
    MetricRangeError,
    NoReturnError,
    StepFailure,
)
from .potential import find_extrema
from .reduction import (
    effective_critical_points,
    effective_potential,
    leaf_classify,
)
from .verify import verify_suite


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def _resolve_seed(sc: Scenario, args) -> int:
    return sc.seed if args.seed is None else args.seed


def cmd_simulate(sc: Scenario, out: Path, args) -> int:
    z0 = initial_state(sc, seed_override=args.seed)
    traj = integrate(sc.coupling, sc.potential, z0, sc.integrator,
                     wrap=sc.suspension)
    n = sc.n
    header = (
        ["t"] + [f"x{i}" for i in range(n)] + ["s"]
        + [f"p{i}" for i in range(n)] + ["p_s", "h_drift"]
    )
    rows = []
    for k in range(len(traj)):
        rows.append(
            [_fmt(traj.t[k])] + [_fmt(v) for v in traj.x[k]] + [_fmt(traj.s[k])]
            + [_fmt(v) for v in traj.p[k]]
            + [_fmt(traj.p_s[k]), _fmt(traj.h_drift[k])]
        )
    _write(out / "trajectory.csv", _csv(header, rows))
    fin = traj.final
    print(f"{sc.name}: {len(traj)} records over t = [0, {traj.t[-1]:g}], "
          f"dt = {traj.dt:g} ({traj.method})")
    print(f"  final s = {fin.s:.6g}, p_s = {fin.p_s:.6g}")
    print(f"  max |H - H0| = {traj.h_drift.max():.3e}, "
          f"max |pbar - pbar0| = {traj.p_drift.max():.3e}")
    print(f"  wrote {out / 'trajectory.csv'}")
    return 0


def cmd_poincare(sc: Scenario, out: Path, args) -> int:
    section = sc.analysis.section
    if section is None:
        raise ConfigError(
            f"scenario '{sc.name}' has no analysis.section; the poincare "
            f"subcommand needs one"
        )
    z0 = initial_state(sc, seed_override=args.seed)
    crossings = find_section_crossings(
        sc.coupling, sc.potential, z0, sc.integrator, section,
        suspension=sc.suspension, max_crossings=sc.analysis.max_crossings,
    )
    n = sc.n
    header = (
        ["index", "t"] + [f"x{i}" for i in range(n)] + ["s"]
        + [f"p{i}" for i in range(n)] + ["p_s", "direction", "grazing"]
    )
    rows = []
    for k, c in enumerate(crossings):
        rows.append(
            [str(k), _fmt(c.t)] + [_fmt(v) for v in c.z.x] + [_fmt(c.z.s)]
            + [_fmt(v) for v in c.z.p]
            + [_fmt(c.z.p_s), c.direction, str(int(c.grazing))]
        )
    _write(out / "crossings.csv", _csv(header, rows))

    lines = [
        f"scenario: {sc.name}",
        f"section: s0 = {section.s0:g}, direction = {section.direction}",
        f"crossings found: {len(crossings)}",
    ]
    if crossings:
        first = crossings[0]
        lines.append(f"first crossing: t = {first.t:.12g} ({first.direction})")
        try:
            ret = poincare_return(
                sc.coupling, sc.potential, first, sc.integrator, section,
                suspension=sc.suspension,
            )
            dx = float(np.abs(
                (ret.z.x - first.z.x + np.pi) % (2 * np.pi) - np.pi
            ).max())
            dev = {
                "dx_max (circular)": dx,
                "ds": abs(ret.z.s - first.z.s),
                "dp_max": float(np.abs(ret.z.p - first.z.p).max()),
                "dp_s": abs(ret.z.p_s - first.z.p_s),
            }
            lines.append(f"return time: {ret.t - first.t:.12g}")
            lines.append("return map deviation:")
            for k, v in dev.items():
                lines.append(f"  {k} = {v:.6e}")
            lines.append(f"identity: max deviation {max(dev.values()):.6e}")
        except NoReturnError as exc:
            lines.append(f"no return: {exc}")
    _write(out / "poincare_summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {out / 'crossings.csv'} and {out / 'poincare_summary.txt'}")
    return 0


def _leaf_row(origin, leaf, n):
    omega = [_fmt(w) for w in np.atleast_1d(leaf.omega)]
    vel = [_fmt(u) for u in np.atleast_1d(leaf.flat_velocity)]
    return (
        [origin, _fmt(leaf.h), leaf.kind, _fmt(leaf.s_lo), _fmt(leaf.s_hi),
         _fmt(leaf.period), _fmt(leaf.omega_reduced)]
        + omega + vel + [_fmt(leaf.s_star)]
    )


def cmd_reduce(sc: Scenario, out: Path, args) -> int:
    A, V = sc.coupling, sc.potential
    n = sc.n
    c = sc.sampler.c if sc.sampler is not None else np.zeros(n)
    if sc.analysis.h_grid is not None:
        h_list = list(sc.analysis.h_grid)
    elif sc.sampler is not None:
        h_list = [sc.sampler.h]
    else:
        raise ConfigError(
            f"scenario '{sc.name}' gives no energy levels to reduce: "
            f"add analysis.h_grid or a sampler"
        )
    header = (
        ["origin", "h", "kind", "s_lo", "s_hi", "period", "omega_reduced"]
        + [f"omega{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
        + ["s_star"]
    )
    rows = []
    kinds = []
    for h in h_list:
        try:
            leaf = leaf_classify(A, V, c, h)
            rows.append(_leaf_row("grid", leaf, n))
            kinds.append(leaf.kind)
        except DegenerateLeafError as exc:
            rows.append(
                ["grid", _fmt(h), "degenerate"] + [_fmt(np.nan)] * (4 + 2 * n)
            )
            kinds.append("degenerate")
            print(f"level h = {h:g}: {exc}", file=sys.stderr)
    for s_star in effective_critical_points(A, V, c):
        h_star = effective_potential(A, V, c, s_star)
        leaf = leaf_classify(A, V, c, h_star, seed_s=s_star)
        rows.append(_leaf_row("critical", leaf, n))
        kinds.append(leaf.kind)
    _write(out / "leaves.csv", _csv(header, rows))
    print(f"{sc.name}: {len(rows)} leaves "
          f"({', '.join(f'{kinds.count(k)} {k}' for k in dict.fromkeys(kinds))})")
    print(f"wrote {out / 'leaves.csv'}")
    return 0


def cmd_scan(sc: Scenario, out: Path, args) -> int:
    ana = sc.analysis
    if ana.h_grid is None:
        raise ConfigError(f"scenario '{sc.name}' has no analysis.h_grid to scan")
    if ana.T is None:
        raise ConfigError(
            f"scenario '{sc.name}' has no analysis.T (scan horizon)"
        )
    try:
        report = entropy_scan(
            sc.coupling, sc.potential, ana.h_grid, ana.samples_per_level,
            ana.T, sc.integrator, _resolve_seed(sc, args),
            renorm_interval=ana.renorm_interval, pbar_scale=ana.pbar_scale,
            suspension=sc.suspension, threads=args.threads,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write(out / "scan.csv", report.to_csv())
    for i, h in enumerate(ana.h_grid):
        level = [r for r in report.rows if r.level_index == i]
        tags = [r.classification for r in level]
        finite = [r.lambda_final for r in level if np.isfinite(r.lambda_final)]
        mean = np.mean(finite) if finite else np.nan
        print(f"h = {h:>8g}: "
              f"{', '.join(f'{tags.count(t)} {t}' for t in dict.fromkeys(tags))}"
              f"  (mean lambda = {mean:.4g})")
    print(f"wrote {out / 'scan.csv'}")
    return 0


def cmd_extrema(sc: Scenario, out: Path, args) -> int:
    ext = find_extrema(sc.potential)
    rows = []
    if ext.constant:
        rows.append(["constant", _fmt(np.nan), _fmt(ext.v_min)])
    else:
        for s in ext.argmin:
            rows.append(["min", _fmt(s), _fmt(ext.v_min)])
        for s in ext.argmax:
            rows.append(["max", _fmt(s), _fmt(ext.v_max)])
    _write(out / "extrema.csv", _csv(["kind", "s", "value"], rows))
    if ext.constant:
        print(f"{sc.name}: potential is constant, V = {ext.v_min:.12g}")
    else:
        print(f"{sc.name}: v_min = {ext.v_min:.12g} at s = "
              f"{', '.join(f'{s:.12g}' for s in ext.argmin)}")
        print(f"{' ' * len(sc.name)}  v_max = {ext.v_max:.12g} at s = "
              f"{', '.join(f'{s:.12g}' for s in ext.argmax)}")
    print(f"wrote {out / 'extrema.csv'}")
    return 0


def cmd_verify(sc: Scenario, out: Path | None, args) -> int:
    results = verify_suite(sc)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        mark = {"pass": "ok  ", "fail": "FAIL", "skip": "skip"}[r.status]
        if r.status == "skip":
            print(f"  {r.name:<{width}}  {mark}  {r.note}")
        else:
            note = f"  {r.note}" if r.note else ""
            print(f"  {r.name:<{width}}  {mark}  "
                  f"value {r.value:.3e}  bound {r.bound:.3e}{note}")
        failed += r.status == "fail"
    total = len(results)
    print(f"{total - failed}/{total} checks passed on scenario '{sc.name}'")
    if out is not None:
        rows = [
            [r.name, _fmt(r.value), _fmt(r.bound), r.status,
             r.note.replace(",", ";")]
            for r in results
        ]
        _write(out / "verify.csv",
               _csv(["name", "value", "bound", "status", "note"], rows))
        print(f"wrote {out / 'verify.csv'}")
    return 1 if failed else 0


_COMMANDS = {
    "simulate": (cmd_simulate, "integrate the scenario and dump the trajectory"),
    "poincare": (cmd_poincare, "section crossings and the first return map"),
    "reduce": (cmd_reduce, "classify leaves over the energy grid"),
    "scan-entropy": (cmd_scan, "Lyapunov scan over the energy grid"),
    "extrema": (cmd_extrema, "locate the potential extrema"),
    "verify": (cmd_verify, "run the invariant checks against the scenario"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toric-flow",
        description="Numerical laboratory for twisted-torus geodesic flows "
                    "with a periodic potential.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True,
                       help="scenario JSON path or a bundled name")
        p.add_argument("--out", required=(name != "verify"),
                       help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario and sampler seeds")
        if name == "scan-entropy":
            p.add_argument(
                "--threads", type=int,
                default=int(os.environ.get("TORIC_FLOW_THREADS", "1")),
                help="worker threads (results are identical for any count)",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
        out = None
        if args.out is not None:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command][0](sc, out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StepFailure, MetricRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
