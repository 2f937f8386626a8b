"""Command line entry point: ``liouville <subcommand> [--config FILE] [overrides]``.

The config file holds ``key = value`` lines (``#`` starts a comment). Flags on
the command line override the file. Every run writes its result files plus a
``manifest.json`` with the resolved configuration, the library version and
the wall time to the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import k0

from . import __version__
from . import io as lio
from .chaos_measure import (
    _radii_to_cells,
    box_moments,
    build_measure,
    estimate_modulus,
    estimate_moment_scaling,
    modulus_exponent,
    xi_M,
)
from .errors import LiouvilleError, ParameterError
from .estimators import (
    MCConfig,
    estimate_bracket_decay,
    estimate_clock_scaling,
    estimate_holder,
    estimate_negative_moments,
    holder_exponents,
    xi,
)
from .field_sampler import FieldStack, GridSpec, sample_partial_sum, sample_stack
from .kernels import SimulationParams, eval_massive_green
from .paths_clock import build_lbm, compute_clock, integrate_n_lbm_sde, sample_path
from .potentials import clock_stability_vs_distance, disk_eval_points, measure_distance, potential

EXPERIMENTS = (
    "sample-field",
    "build-measure",
    "simulate-lbm",
    "estimate-exponents",
    "verify-invariants",
    "diagnostics",
)
QUANTITIES = ("clock-moment", "negative-moment", "measure-moment", "holder", "bracket-decay", "modulus")
FAILURE_THRESHOLD = 0.01

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_REPLICA_FAILURES = 0, 1, 2, 3

CLAIMS = {
    "sample-field": ["Eq (2.5)-(2.6): layers Y_n and partial sums X_n"],
    "build-measure": ["Eq (2.7): n-regularized Liouville measure, exact normalization"],
    "simulate-lbm": ["Eq (2.15): clock F_n", "Definition 2.17: time-changed Brownian motion", "Eq (2.29): n-LBM SDE"],
    "estimate-exponents": {
        "clock-moment": ["Theorem 2.10: clock structure exponent xi(q)"],
        "negative-moment": ["Prop 2.12: negative moments of F(T_r)"],
        "measure-moment": ["Eq (2.8): measure structure exponent xi_M(p)"],
        "holder": ["Corollaries 2.11 and 2.14: Holder envelopes of the clock"],
        "bracket-decay": ["Section 2.8 / Theorem 2.21: bracket decay c_n^(-gamma^2/8)"],
        "modulus": ["Theorem 2.2: modulus of continuity of the measure"],
    },
    "verify-invariants": ["degeneracy at gamma = 0", "structure exponent identities", "determinism"],
    "diagnostics": ["Prop 2.3 item 3: d_R(M_n, M) decreasing", "Lemma 2.5: clock stability in d_R"],
}


class UsageError(LiouvilleError, ValueError):
    pass


# -- configuration ----------------------------------------------------------------


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    s = str(s).strip()
    if not s:
        return ()
    return tuple(float(eval_fraction(x)) for x in s.split(","))


def eval_fraction(s: str) -> float:
    """Parse ``0.25``, ``1/4`` or ``2^-3``."""
    s = s.strip()
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    if "^" in s:
        a, b = s.split("^", 1)
        return float(a) ** float(b)
    return float(s)


KEYS = {
    "experiment": str,
    "gamma": eval_fraction,
    "mass": eval_fraction,
    "truncation": int,
    "schedule": _floats,
    "extent": eval_fraction,
    "resolution": int,
    "periodic": _bool,
    "centered": _bool,
    "replicas": int,
    "seed": int,
    "confidence": eval_fraction,
    "quenched": _bool,
    "horizon": eval_fraction,
    "dt": eval_fraction,
    "quantum_dt": eval_fraction,
    "output": str,
    "level": int,
    "quantity": str,
    "order": eval_fraction,
    "scales": _floats,
    "R": eval_fraction,
    "start": _floats,
    "spacing": eval_fraction,
}

DEFAULTS = {
    "gamma": 0.0,
    "mass": 1.0,
    "truncation": 8,
    "schedule": (),
    "extent": 1.0,
    "resolution": 257,
    "periodic": False,
    "centered": True,
    "replicas": 100,
    "seed": 0,
    "confidence": 0.997,
    "quenched": False,
    "horizon": 0.25,
    "dt": 1 / 4096,
    "quantum_dt": None,
    "output": "results",
    "level": None,
    "quantity": "clock-moment",
    "order": 2.0,
    "scales": (),
    "R": 0.5,
    "start": (0.0, 0.0),
    "spacing": None,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: SimulationParams
    grid: GridSpec
    mc: MCConfig
    horizon: float
    dt: float
    output: Path
    level: int
    extra: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        p = self.params
        return {
            "experiment": self.experiment,
            "gamma": p.gamma,
            "mass": p.mass,
            "truncation": p.truncation,
            "schedule": [p.c(n) for n in range(1, p.truncation + 1)],
            "grid": self.grid.to_dict(),
            "spacing": self.grid.spacing,
            "replicas": self.mc.replicas,
            "seed": self.mc.seed,
            "confidence": self.mc.confidence,
            "quenched": self.mc.quenched,
            "horizon": self.horizon,
            "dt": self.dt,
            "level": self.level,
            "output": str(self.output),
            **{k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.extra.items())},
        }


def read_config_file(path) -> dict[str, str]:
    raw: dict[str, str] = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        raw[k] = v
    return raw


def parse_values(raw: dict) -> dict:
    out = {}
    for k, v in raw.items():
        if k not in KEYS:
            raise UsageError(f"unknown config key {k!r}")
        try:
            out[k] = KEYS[k](v)
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"invalid value for {k!r}: {v!r} ({exc})") from None
    return out


def resolve(values: dict) -> ExperimentConfig:
    v = {**DEFAULTS, **values}
    exp = v.get("experiment")
    if exp not in EXPERIMENTS:
        raise UsageError(f"invalid value for 'experiment': {exp!r} (choose from {', '.join(EXPERIMENTS)})")

    def check(key, fn):
        try:
            return fn()
        except ParameterError as exc:
            raise UsageError(f"invalid value for {key!r}: {exc}") from None

    if not 0.0 <= v["gamma"] < 2.0:
        raise UsageError(f"invalid value for 'gamma': {v['gamma']!r} (must lie in [0, 2))")
    params = check(
        "truncation",
        lambda: SimulationParams(v["gamma"], v["mass"], v["truncation"], tuple(v["schedule"]) or None),
    )
    if v["spacing"] is not None:
        res = int(round(v["extent"] / v["spacing"])) + (0 if v["periodic"] else 1)
        v["resolution"] = res
    origin = (-v["extent"] / 2, -v["extent"] / 2) if v["centered"] else (0.0, 0.0)
    grid = check("resolution", lambda: GridSpec(v["extent"], v["resolution"], v["periodic"], origin))
    mc = check("replicas", lambda: MCConfig(v["replicas"], v["seed"], v["confidence"], v["quenched"]))
    for key in ("horizon", "dt", "R"):
        if not v[key] > 0:
            raise UsageError(f"invalid value for {key!r}: must be positive")
    level = params.truncation if v["level"] is None else v["level"]
    if not 1 <= level <= params.truncation:
        raise UsageError(f"invalid value for 'level': {level} not in 1..{params.truncation}")
    if v["quantity"] not in QUANTITIES:
        raise UsageError(f"invalid value for 'quantity': {v['quantity']!r} (choose from {', '.join(QUANTITIES)})")
    if len(v["start"]) != 2:
        raise UsageError("invalid value for 'start': need two coordinates")
    extra = {
        "quantity": v["quantity"],
        "order": v["order"],
        "scales": tuple(v["scales"]),
        "R": v["R"],
        "start": tuple(v["start"]),
        "quantum_dt": v["quantum_dt"] if v["quantum_dt"] is not None else v["dt"],
    }
    return ExperimentConfig(exp, params, grid, mc, v["horizon"], v["dt"], Path(v["output"]), level, extra)


def config_from_args(args) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        raw.update(read_config_file(args.config))
    raw["experiment"] = args.command
    for key in ("seed", "replicas", "gamma", "level"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = str(val)
    if args.out is not None:
        raw["output"] = args.out
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, val = item.split("=", 1)
        raw[k.strip()] = val.strip()
    return resolve(parse_values(raw))


# -- experiments --------------------------------------------------------------------


@dataclass
class RunReport:
    artifacts: list[Path] = field(default_factory=list)
    replicas: int = 0
    failed: int = 0
    checks_failed: int = 0
    notes: dict = field(default_factory=dict)


def _load_or_sample(cfg: ExperimentConfig, load_field, full: bool = True) -> FieldStack:
    if load_field:
        stack = lio.load_field(load_field)
        if cfg.level > stack.truncation:
            raise UsageError(f"invalid value for 'level': snapshot has levels {stack.levels}")
        return stack
    if full:
        return sample_stack(cfg.params, cfg.grid, cfg.mc.seed, 0)
    return sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, 0)


def run_sample_field(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    stack = _load_or_sample(cfg, load_field)
    rep = RunReport(replicas=1)
    snap = Path(save_field) if save_field else out / "field.bin"
    lio.save_field(stack, snap)
    rep.artifacts.append(snap)
    rows = []
    for n in stack.levels:
        f = stack.field(n)
        rows.append([n, stack.params.c(n), float(f.mean()), float(f.var()), stack.log_scale(n)])
    path = out / "field_summary.csv"
    lio.write_csv(path, ["level", "c_n", "spatial_mean", "spatial_variance", "log_c_n"], rows)
    rep.artifacts.append(path)
    return rep


def _radii_for(grid: GridSpec, scales) -> list[float]:
    if scales:
        return list(scales)
    h = grid.spacing
    out, k = [], 4
    while k * h <= grid.extent / 4 + 1e-12:
        out.append(k * h)
        k *= 2
    return out


def run_build_measure(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    stack = _load_or_sample(cfg, load_field, full=False)
    if save_field:
        lio.save_field(stack, save_field)
    mu = build_measure(stack, cfg.level, cfg.params.gamma)
    g = mu.grid
    center = (g.origin[0] + g.extent / 2, g.origin[1] + g.extent / 2)
    radii = _radii_for(g, cfg.extra["scales"])
    prof = mu.ball_profile(center, [r for r in radii if r <= g.extent / 2])
    rep = RunReport(replicas=1)
    path = out / "ball_masses.csv"
    lio.write_csv(path, ["radius", "mass"], list(zip(prof.radii, prof.masses)))
    rep.artifacts.append(path)
    summary = {
        "gamma": mu.gamma,
        "level": mu.level,
        "total_mass": mu.total_mass(),
        "domain_area": g.extent**2 if g.periodic else (g.resolution * g.spacing) ** 2,
        "min_cell_mass": float(mu.cell_mass.min()),
        "max_cell_mass": float(mu.cell_mass.max()),
        "center": list(center),
    }
    path = out / "measure.json"
    lio.write_json(path, summary)
    rep.artifacts.append(path)
    return rep


def run_simulate_lbm(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    g = cfg.params.gamma
    start = cfg.extra["start"]
    stack = None
    if g > 0 or load_field:
        stack = _load_or_sample(cfg, load_field, full=False)
        if save_field:
            lio.save_field(stack, save_field)
    path = sample_path(start, cfg.horizon, cfg.dt, cfg.mc.seed)
    clock = compute_clock(path, stack, cfg.level, g)
    qdt = cfg.extra["quantum_dt"]
    lbm = build_lbm(path, clock, qdt)
    rep = RunReport(replicas=1, failed=int(clock.truncated))
    p1 = out / "lbm_trace.csv"
    lio.write_csv(
        p1, lio.LBM_COLUMNS, zip(lbm.quantum_times, lbm.positions[:, 0], lbm.positions[:, 1], lbm.classical_times)
    )
    p2 = out / "clock_trace.csv"
    lio.write_csv(p2, lio.CLOCK_COLUMNS, ((t, f, cfg.level) for t, f in zip(clock.times, clock.clock)))
    sde = integrate_n_lbm_sde(stack, cfg.level, g, start, min(clock.terminal, cfg.horizon), qdt, cfg.mc.seed + 1)
    p3 = out / "sde_trace.csv"
    lio.write_csv(p3, ["quantum_t", "x", "y"], zip(sde.quantum_times, sde.positions[:, 0], sde.positions[:, 1]))
    rep.artifacts += [p1, p2, p3]
    rep.notes = {"clock_truncated": clock.truncated, "sde_truncated": sde.truncated, "terminal_clock": clock.terminal}
    return rep


def _default_scales(q: str, cfg: ExperimentConfig) -> list[float]:
    if cfg.extra["scales"]:
        return list(cfg.extra["scales"])
    if q == "clock-moment":
        return [2.0**-k for k in range(7, 2, -1)]
    if q == "negative-moment":
        return [2.0**-k for k in range(6, 1, -1)]
    return []


def _estimate_rows(cfg, order, scales, per_replica) -> list[list]:
    v = np.asarray(per_replica)
    rows = []
    for k, s in enumerate(scales):
        col = v[:, k]
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        rows.append([cfg.params.gamma, order, cfg.level, s, float(col.mean()), se, len(col), cfg.mc.seed])
    return rows


def _result(name, cfg, order, est, expected, tol, passed) -> dict:
    return {
        "experiment": name,
        "gamma": cfg.params.gamma,
        "level": cfg.level,
        "q_or_p": order,
        "slope": est.slope,
        "stderr": est.stderr,
        "expected": expected,
        "tolerance": tol,
        "pass": bool(passed),
    }


def run_estimate_exponents(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    quantity = cfg.extra["quantity"]
    g = cfg.params.gamma
    order = cfg.extra["order"]
    mc = cfg.mc
    rep = RunReport(replicas=mc.replicas)
    results, rows = [], []
    spacing = cfg.grid.spacing
    if quantity == "clock-moment":
        scales = _default_scales(quantity, cfg)
        r = estimate_clock_scaling(mc, g, cfg.level, order, scales, mass=cfg.params.mass, spacing=spacing,
                                   half_width=cfg.grid.extent / 2, dt=cfg.dt)
        tol = 0.05 if order == 1 else 0.2
        results.append(_result(quantity, cfg, order, r.estimate, xi(g, order), tol,
                               r.estimate.within(xi(g, order), tol)))
        rows = _estimate_rows(cfg, order, scales, r.per_replica)
        rep.failed = r.failed
    elif quantity == "negative-moment":
        scales = _default_scales(quantity, cfg)
        r = estimate_negative_moments(mc, g, cfg.level, order, scales, mass=cfg.params.mass, spacing=spacing)
        bound = 2 * xi(g, -order)
        results.append(_result(quantity, cfg, order, r.estimate, bound, 0.15, r.estimate.slope >= bound - 0.15))
        rows = _estimate_rows(cfg, order, scales, r.per_replica)
        rep.failed = r.failed
    elif quantity == "measure-moment":
        radii = _radii_for(cfg.grid, cfg.extra["scales"])
        measures = []
        vals = []
        cells = _radii_to_cells(cfg.grid, radii)
        for j in range(mc.replicas):
            st = sample_partial_sum(cfg.params, cfg.grid, cfg.level, mc.seed, j)
            mu = build_measure(st, cfg.level, g)
            measures.append(mu)
            vals.append(box_moments(mu, order, cells))
        est = estimate_moment_scaling(measures, order, radii, mc.seed)
        tol = 0.1 if order == 1 else 0.2
        results.append(_result(quantity, cfg, order, est, xi_M(g, order), tol, est.within(xi_M(g, order), tol)))
        rows = _estimate_rows(cfg, order, radii, np.array(vals))
    elif quantity == "holder":
        up, low = estimate_holder(mc, g, cfg.level, horizon=cfg.horizon, dt=cfg.dt, mass=cfg.params.mass,
                                  spacing=spacing, half_width=cfg.grid.extent / 2)
        a, b = holder_exponents(g)
        results.append(_result("holder-upper", cfg, None, up.estimate, a, 0.05, up.estimate.slope >= a - 0.05))
        results.append(_result("holder-lower", cfg, None, low.estimate, b, 0.05, low.estimate.slope <= b + 0.05))
        rep.failed = up.failed
    elif quantity == "bracket-decay":
        levels = list(range(1, cfg.level + 1))
        r, tight = estimate_bracket_decay(mc, g, levels, T=cfg.horizon, dt=cfg.dt, mass=cfg.params.mass,
                                          spacing=spacing, half_width=cfg.grid.extent / 2)
        results.append(_result(quantity, cfg, None, r.estimate, -g * g / 8, 0.05,
                               r.estimate.within(-g * g / 8, 0.05)))
        scales = [cfg.params.c(n) for n in levels]
        rows = _estimate_rows(cfg, None, scales, r.per_replica)
        rep.failed = r.failed
    elif quantity == "modulus":
        stack = _load_or_sample(cfg, load_field, full=False)
        mu = build_measure(stack, cfg.level, g)
        est = estimate_modulus(mu)
        a = modulus_exponent(g)
        results.append(_result(quantity, cfg, None, est, a, 0.05, est.slope >= a - 0.05))
        rep.replicas = 1
    p = out / "results.json"
    lio.write_json(p, results)
    rep.artifacts.append(p)
    if rows:
        p = out / "estimates.csv"
        lio.write_csv(p, lio.ESTIMATOR_COLUMNS, rows)
        rep.artifacts.append(p)
    return rep


def _check(name, passed, value=None, expected=None) -> dict:
    return {"check": name, "pass": bool(passed), "value": value, "expected": expected}


def run_verify_invariants(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    """Quick property checks; the gamma = 0 suite is exact."""
    g = cfg.params.gamma
    checks = []
    for r in (1e-3, 0.1, 1.0, 10.0):
        val = eval_massive_green(cfg.params.mass, r)
        ref = float(k0(cfg.params.mass * r))
        checks.append(_check(f"massive_green_vs_K0(r={r})", abs(val - ref) <= 1e-8 * ref, val, ref))
    checks.append(_check("xi(gamma,1)=1", xi(g, 1.0) == 1.0, xi(g, 1.0), 1.0))
    checks.append(_check("xi_M(gamma,1)=2", xi_M(g, 1.0) == 2.0, xi_M(g, 1.0), 2.0))

    start = cfg.extra["start"]
    path = sample_path(start, cfg.horizon, cfg.dt, cfg.mc.seed)
    if g == 0.0:
        clk = compute_clock(path, None, cfg.level, 0.0)
        ident = bool(np.array_equal(clk.clock, path.dt * np.arange(len(clk.clock))))
        checks.append(_check("clock_is_identity", ident))
        lbm = build_lbm(path, clk, path.dt)
        dev = float(np.max(np.abs(lbm.positions - path.positions[: len(lbm.positions)])))
        checks.append(_check("lbm_equals_bm", dev <= 1e-12, dev, 0.0))
        sde = integrate_n_lbm_sde(None, cfg.level, 0.0, start, cfg.horizon, cfg.dt, cfg.mc.seed)
        checks.append(_check("sde_equals_bm", bool(np.array_equal(sde.positions, path.positions))))
        stack = sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, 0)
        mu = build_measure(stack, cfg.level, 0.0)
        h2 = cfg.grid.spacing ** 2
        checks.append(_check("lebesgue_measure_exact", bool(np.all(mu.cell_mass == h2)), float(mu.cell_mass.max()), h2))
    else:
        # normalization of the measure over replicas, 4 sigma
        tot = []
        for j in range(cfg.mc.replicas):
            st = sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, j)
            tot.append(build_measure(st, cfg.level, g).total_mass())
        tot = np.array(tot)
        area = (cfg.grid.resolution * cfg.grid.spacing) ** 2
        se = float(tot.std(ddof=1) / math.sqrt(len(tot)))
        checks.append(_check("measure_normalization", abs(tot.mean() - area) <= 4 * se, float(tot.mean()), area))
        st = sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, 0)
        ok = True
        try:
            clk = compute_clock(path, st, cfg.level, g)
            ok = bool(np.all(np.diff(clk.clock) > 0))
        except LiouvilleError:
            ok = False
        checks.append(_check("clock_strictly_increasing", ok))
    a = sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, 1).field(cfg.level)
    b = sample_partial_sum(cfg.params, cfg.grid, cfg.level, cfg.mc.seed, 1).field(cfg.level)
    checks.append(_check("field_determinism", bool(np.array_equal(a, b))))
    p = out / "invariants.json"
    lio.write_json(p, checks)
    return RunReport([p], cfg.mc.replicas, 0, sum(not c["pass"] for c in checks))


def run_diagnostics(cfg: ExperimentConfig, out: Path, save_field=None, load_field=None) -> RunReport:
    R = cfg.extra["R"]
    if load_field:
        stack = lio.load_field(load_field)
    else:
        grid = GridSpec.centered(R, cfg.grid.spacing)
        stack = sample_stack(cfg.params, grid, cfg.mc.seed, 0)
    if save_field:
        lio.save_field(stack, save_field)
    g = cfg.params.gamma
    N = stack.truncation
    pts = disk_eval_points(R)
    top = build_measure(stack, N, g)
    rows = []
    for n in range(1, N):
        mu = build_measure(stack, n, g)
        d = measure_distance(mu, top, R, pts)
        rows.append([n, d, potential(mu, R, pts).sup, None, None])
    rep = RunReport(replicas=cfg.mc.replicas)
    mu = build_measure(stack, N - 1, g)
    d = measure_distance(mu, top, R, pts)
    if d <= 1.0:
        paths = [sample_path((0.0, 0.0), cfg.horizon, cfg.dt, cfg.mc.seed, j) for j in range(cfg.mc.replicas)]
        tab = clock_stability_vs_distance(paths, mu, top, R, eval_points=pts)
        rows += [[N - 1, tab.d_R, tab.sup_potential, e, p] for e, p in zip(tab.etas, tab.exceedance)]
        rep.notes = {"c_R": tab.c_R, "dominated": tab.dominated}
    p = out / "diagnostics.csv"
    lio.write_csv(p, lio.DIAGNOSTIC_COLUMNS, rows)
    rep.artifacts.append(p)
    return rep


RUNNERS = {
    "sample-field": run_sample_field,
    "build-measure": run_build_measure,
    "simulate-lbm": run_simulate_lbm,
    "estimate-exponents": run_estimate_exponents,
    "verify-invariants": run_verify_invariants,
    "diagnostics": run_diagnostics,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg: ExperimentConfig, save_field=None, load_field=None) -> int:
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rep = RUNNERS[cfg.experiment](cfg, out, save_field, load_field)
    wall = time.perf_counter() - t0
    frac = rep.failed / rep.replicas if rep.replicas else 0.0
    manifest = {
        "config": cfg.resolved(),
        "seed": cfg.mc.seed,
        "version": __version__,
        "wall_time_s": wall,
        "replicas": {"total": rep.replicas, "failed": rep.failed, "fraction": frac, "threshold": FAILURE_THRESHOLD},
        "checks_failed": rep.checks_failed,
        "artifacts": {p.name: _sha256(p) for p in rep.artifacts},
        "load_field": str(load_field) if load_field else None,
        "notes": rep.notes,
    }
    lio.write_json(out / "manifest.json", manifest)
    if frac > FAILURE_THRESHOLD:
        return EXIT_REPLICA_FAILURES
    if rep.checks_failed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def memory_estimate(cfg: ExperimentConfig) -> int:
    """Bytes held by one field stack: layers and partial sums, float64."""
    m = cfg.grid.resolution
    return 2 * cfg.params.truncation * m * m * 8


def describe(cfg: ExperimentConfig, stream=None) -> str:
    p = cfg.params
    sched = ", ".join(f"{p.c(n):g}" for n in range(1, p.truncation + 1))
    claims = CLAIMS[cfg.experiment]
    if isinstance(claims, dict):
        claims = claims[cfg.extra["quantity"]]
    mem = memory_estimate(cfg)
    lines = [
        f"experiment      {cfg.experiment}",
        f"gamma           {p.gamma:g}",
        f"mass            {p.mass:g}",
        f"truncation N    {p.truncation} (level {cfg.level})",
        f"schedule c_n    {sched}",
        f"grid            {cfg.grid.resolution}^2 nodes, extent {cfg.grid.extent:g}, spacing h = {cfg.grid.spacing:.6g}"
        + (" (periodic)" if cfg.grid.periodic else ""),
        f"replicas        {cfg.mc.replicas} (seed {cfg.mc.seed}, {'quenched' if cfg.mc.quenched else 'annealed'})",
        f"path            horizon {cfg.horizon:g}, dt {cfg.dt:.6g}",
        f"memory          {mem / 2**20:.1f} MiB per field stack ({p.truncation} layers + partial sums x {cfg.grid.resolution}^2 x 8 bytes)",
        "claims          " + "; ".join(claims),
        f"output          {cfg.output}",
    ]
    text = "\n".join(lines)
    print(text, file=stream or sys.stdout)
    return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liouville", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("describe",):
        sp = sub.add_parser(name)
        if name == "describe":
            sp.add_argument("experiment", choices=EXPERIMENTS)
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--gamma", type=str)
        sp.add_argument("--level", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--save-field", dest="save_field")
        sp.add_argument("--load-field", dest="load_field")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "describe":
            args.command, target = args.experiment, "describe"
        else:
            target = "run"
        cfg = config_from_args(args)
        if target == "describe":
            describe(cfg)
            return EXIT_OK
        return run(cfg, args.save_field, args.load_field)
    except UsageError as exc:
        print(f"liouville: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LiouvilleError as exc:
        print(f"liouville: error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
