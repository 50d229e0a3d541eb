"""Scenario files: parsing, validation, bundled examples.

A scenario is a JSON document with "version": 1.  Unknown keys anywhere in
the document are rejected so that typos fail loudly instead of silently
running defaults.  Suspension mode additionally requires exp(A) to be an
integer unimodular matrix, otherwise the fibre translation is not a
well-defined bundle map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import SectionSpec
from .dynamics import IntegratorConfig
from .errors import ConfigError
from .geometry import CouplingMatrix, PhasePoint, check_integer_automorphism
from .potential import FourierPotential
from .reduction import effective_potential, turning_points

BUNDLED = ("free_flat", "remark1", "catmap_scan", "singular_leaf")


@dataclass(frozen=True)
class SamplerSpec:
    """Initial-condition sampler: level h, torus momentum c, draw seed."""

    h: float
    c: np.ndarray
    seed: int


@dataclass(frozen=True)
class AnalysisSpec:
    """Optional knobs for the section/Lyapunov/scan subcommands."""

    section: SectionSpec | None = None
    T: float | None = None
    renorm_interval: float = 0.5
    h_grid: tuple | None = None
    samples_per_level: int = 4
    pbar_scale: float = 0.7
    max_crossings: int = 256


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    coupling: CouplingMatrix
    potential: FourierPotential
    initial: PhasePoint | None
    sampler: SamplerSpec | None
    integrator: IntegratorConfig
    analysis: AnalysisSpec
    seed: int

    @property
    def n(self) -> int:
        return self.coupling.n

    @property
    def suspension(self) -> bool:
        return self.mode == "suspension"


def _require_keys(d: dict, allowed: dict, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = sorted(k for k, required in allowed.items() if required and k not in d)
    if missing:
        raise ConfigError(f"missing required key(s) in {where}: {', '.join(missing)}")


def _num(d, key, where, cast=float):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    return cast(v)


def parse_scenario(doc: dict, origin: str = "<config>") -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    _require_keys(
        doc,
        {
            "version": True, "name": True, "mode": True, "coupling": True,
            "potential": True, "initial": False, "sampler": False,
            "integrator": True, "analysis": False, "seed": True,
        },
        origin,
    )
    if doc["version"] != 1:
        raise ConfigError(f"{origin}: unsupported version {doc['version']!r}")
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{origin}: name must be a non-empty string")
    mode = doc["mode"]
    if mode not in ("cover", "suspension"):
        raise ConfigError(f"{origin}: mode must be 'cover' or 'suspension'")

    try:
        coupling = CouplingMatrix(doc["coupling"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: bad coupling matrix: {exc}") from exc
    n = coupling.n

    pot = doc["potential"]
    if not isinstance(pot, dict):
        raise ConfigError(f"{origin}: potential must be an object")
    _require_keys(pot, {"a0": False, "cos": False, "sin": False}, "potential")
    try:
        potential = FourierPotential(
            pot.get("a0", 0.0), pot.get("cos", ()), pot.get("sin", ())
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: bad potential: {exc}") from exc

    initial = None
    if "initial" in doc:
        ini = doc["initial"]
        if not isinstance(ini, dict):
            raise ConfigError(f"{origin}: initial must be an object")
        _require_keys(
            ini, {"x": True, "s": True, "p": True, "p_s": True}, "initial"
        )
        try:
            initial = PhasePoint(ini["x"], ini["s"], ini["p"], ini["p_s"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{origin}: bad initial state: {exc}") from exc
        if initial.n != n:
            raise ConfigError(
                f"{origin}: initial state has dimension {initial.n}, expected {n}"
            )

    sampler = None
    if "sampler" in doc:
        sam = doc["sampler"]
        if not isinstance(sam, dict):
            raise ConfigError(f"{origin}: sampler must be an object")
        _require_keys(sam, {"h": True, "c": True, "seed": True}, "sampler")
        c = np.asarray(sam["c"], dtype=float)
        if c.shape != (n,):
            raise ConfigError(f"{origin}: sampler.c must have length {n}")
        sampler = SamplerSpec(
            _num(sam, "h", "sampler"), c, _num(sam, "seed", "sampler", int)
        )

    if initial is not None and sampler is not None:
        raise ConfigError(f"{origin}: give either 'initial' or 'sampler', not both")

    igr = doc["integrator"]
    if not isinstance(igr, dict):
        raise ConfigError(f"{origin}: integrator must be an object")
    _require_keys(
        igr,
        {
            "method": False, "dt": True, "t_end": True,
            "fixed_point_tol": False, "max_fixed_point_iters": False,
            "record_stride": False,
        },
        "integrator",
    )
    try:
        integrator = IntegratorConfig(
            method=igr.get("method", "implicit_midpoint"),
            dt=_num(igr, "dt", "integrator"),
            t_end=_num(igr, "t_end", "integrator"),
            fixed_point_tol=float(igr.get("fixed_point_tol", 1e-13)),
            max_fixed_point_iters=int(igr.get("max_fixed_point_iters", 50)),
            record_stride=int(igr.get("record_stride", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad integrator settings: {exc}") from exc

    analysis = AnalysisSpec()
    if "analysis" in doc:
        ana = doc["analysis"]
        if not isinstance(ana, dict):
            raise ConfigError(f"{origin}: analysis must be an object")
        _require_keys(
            ana,
            {
                "section": False, "T": False, "renorm_interval": False,
                "h_grid": False, "samples_per_level": False,
                "pbar_scale": False, "max_crossings": False,
            },
            "analysis",
        )
        section = None
        if "section" in ana:
            sec = ana["section"]
            if not isinstance(sec, dict):
                raise ConfigError(f"{origin}: analysis.section must be an object")
            _require_keys(sec, {"s0": True, "direction": False}, "analysis.section")
            try:
                section = SectionSpec(
                    _num(sec, "s0", "analysis.section"),
                    sec.get("direction", "both"),
                )
            except ValueError as exc:
                raise ConfigError(f"{origin}: bad section: {exc}") from exc
        h_grid = None
        if "h_grid" in ana:
            hg = ana["h_grid"]
            if not isinstance(hg, list) or not hg or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in hg
            ):
                raise ConfigError(f"{origin}: h_grid must be a non-empty number list")
            h_grid = tuple(float(v) for v in hg)
        try:
            analysis = AnalysisSpec(
                section=section,
                T=float(ana["T"]) if "T" in ana else None,
                renorm_interval=float(ana.get("renorm_interval", 0.5)),
                h_grid=h_grid,
                samples_per_level=int(ana.get("samples_per_level", 4)),
                pbar_scale=float(ana.get("pbar_scale", 0.7)),
                max_crossings=int(ana.get("max_crossings", 256)),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{origin}: bad analysis settings: {exc}") from exc

    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{origin}: seed must be a non-negative integer")

    if mode == "suspension":
        chk = check_integer_automorphism(coupling)
        if not chk:
            raise ConfigError(
                f"{origin}: suspension mode requires exp(A) to be an integer "
                f"matrix with |det| = 1 (entry residual "
                f"{chk.max_entry_residual:.3g}, det residual "
                f"{chk.det_residual:.3g})"
            )

    return Scenario(
        name=name, mode=mode, coupling=coupling, potential=potential,
        initial=initial, sampler=sampler, integrator=integrator,
        analysis=analysis, seed=seed,
    )


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of parse_scenario, for round-tripping and provenance dumps."""
    doc = {
        "version": 1,
        "name": sc.name,
        "mode": sc.mode,
        "coupling": sc.coupling.entries.tolist(),
        "potential": {
            "a0": sc.potential.a0,
            "cos": sc.potential.cos_coeffs.tolist(),
            "sin": sc.potential.sin_coeffs.tolist(),
        },
        "integrator": {
            "method": sc.integrator.method,
            "dt": sc.integrator.dt,
            "t_end": sc.integrator.t_end,
            "fixed_point_tol": sc.integrator.fixed_point_tol,
            "max_fixed_point_iters": sc.integrator.max_fixed_point_iters,
            "record_stride": sc.integrator.record_stride,
        },
        "seed": sc.seed,
    }
    if sc.initial is not None:
        doc["initial"] = {
            "x": sc.initial.x.tolist(),
            "s": sc.initial.s,
            "p": sc.initial.p.tolist(),
            "p_s": sc.initial.p_s,
        }
    if sc.sampler is not None:
        doc["sampler"] = {
            "h": sc.sampler.h,
            "c": sc.sampler.c.tolist(),
            "seed": sc.sampler.seed,
        }
    ana = sc.analysis
    ana_doc = {
        "renorm_interval": ana.renorm_interval,
        "samples_per_level": ana.samples_per_level,
        "pbar_scale": ana.pbar_scale,
        "max_crossings": ana.max_crossings,
    }
    if ana.section is not None:
        ana_doc["section"] = {
            "s0": ana.section.s0,
            "direction": ana.section.direction,
        }
    if ana.T is not None:
        ana_doc["T"] = ana.T
    if ana.h_grid is not None:
        ana_doc["h_grid"] = list(ana.h_grid)
    doc["analysis"] = ana_doc
    return doc


def initial_state(sc: Scenario, seed_override: int | None = None) -> PhasePoint:
    """Resolve a scenario to one concrete start point.

    Explicit 'initial' wins.  A 'sampler' block draws the torus angles and
    fibre coordinate from the leaf (h, c): s lands inside the classically
    allowed band (away from the turning points, where p_s would vanish and
    the draw would be useless for dynamics), p is pinned to c and p_s takes
    the positive root of the energy relation.
    """
    if sc.initial is not None:
        return sc.initial
    sam = sc.sampler
    if sam is None:
        raise ConfigError(
            f"scenario '{sc.name}' provides neither 'initial' nor 'sampler'"
        )
    seed = sam.seed if seed_override is None else seed_override
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0 * np.pi, sc.n)
    tp = turning_points(sc.coupling, sc.potential, sam.c, sam.h)
    if tp.kind == "empty":
        raise ConfigError(
            f"scenario '{sc.name}': sampler level h={sam.h:g} lies below the "
            f"effective potential, no states to draw"
        )
    if tp.kind == "band":
        u = rng.uniform()
        s = tp.s_lo + (0.05 + 0.9 * u) * (tp.s_hi - tp.s_lo)
    else:
        s = rng.uniform()
    kin = sam.h - effective_potential(sc.coupling, sc.potential, sam.c, s)
    p_s = float(np.sqrt(2.0 * max(0.0, kin)))
    return PhasePoint(x, s, sam.c, p_s)


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a file path or a bundled name."""
    ref_str = str(ref)
    if ref_str in BUNDLED:
        text = (
            resources.files("toric_flow") / "scenarios" / f"{ref_str}.json"
        ).read_text()
        origin = f"bundled:{ref_str}"
    else:
        path = Path(ref)
        if not path.is_file():
            raise ConfigError(
                f"config not found: {ref_str} (not a file and not one of the "
                f"bundled scenarios: {', '.join(BUNDLED)})"
            )
        text = path.read_text()
        origin = str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}: invalid JSON: {exc}") from exc
    return parse_scenario(doc, origin)
