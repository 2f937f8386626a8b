"""Acceptance criteria AC1-AC11 at their stated tolerances.

Each test prints one ``ACn PASS/FAIL`` line (also collected in the terminal
summary). Run only these with ``pytest -m acceptance -s``.
"""

import filecmp
import json
import math

import numpy as np
import pytest
from scipy import integrate, special

from liouville import cli
from liouville.chaos_measure import box_moments, build_measure, xi_M
from liouville.estimators import (
    MCConfig,
    estimate_bracket_decay,
    estimate_clock_scaling,
    estimate_negative_moments,
    kahane_compare,
    xi,
)
from liouville.field_sampler import FieldStack, GridSpec, sample_partial_sum, sample_stack
from liouville.kernels import SimulationParams, eval_k_seed, eval_massive_green
from liouville.paths_clock import (
    build_lbm,
    compute_clock,
    first_exit_time,
    integrate_n_lbm_sde,
    sample_path,
)
from liouville.potentials import disk_eval_points, measure_distance
from liouville.regression import fit_loglog

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def test_ac01_kernel_oracle(report):
    m = 1.0
    rs = np.geomspace(1e-3, 10, 60)
    rel = max(abs(eval_massive_green(m, r) - special.k0(m * r)) / special.k0(m * r) for r in rs)
    star = 0.0
    for r in np.geomspace(1e-3, 10, 12):
        # int_1^inf k_m(u r)/u du with u = e^s, by brute-force quadrature of the seed kernel
        v, _ = integrate.quad(lambda s: eval_k_seed(m, math.exp(s) * r), 0.0, 60.0, limit=400, epsabs=1e-13)
        star = max(star, abs(v - eval_massive_green(m, r)))
    ok = rel <= 1e-8 and star <= 1e-6
    report("AC1", ok, f"max rel |G-K0|/K0 = {rel:.2e} (<= 1e-8); max |star-scale - G| = {star:.2e} (<= 1e-6)")
    assert ok


def test_ac02_normalization(report):
    params = SimulationParams(truncation=8)
    grid = GridSpec(1.0, 513)  # nodes of [0,1]^2 at h = 1/512; the unit square [0,1)^2 holds 512^2 of them
    gammas = (0.5, 1.0, 1.5)
    n = 10_000
    tot = np.empty((n, len(gammas)))
    for j in range(n):
        s = sample_partial_sum(params, grid, 8, 2024, j)
        for i, g in enumerate(gammas):
            tot[j, i] = build_measure(s, 8, g).mass_in_box((0.0, 0.0), (1.0, 1.0))
    mean = tot.mean(axis=0)
    se = tot.std(axis=0, ddof=1) / math.sqrt(n)
    ok = bool(np.all(np.abs(mean - 1.0) <= 3 * se))
    detail = "; ".join(f"gamma={g}: {m:.4f} +- {s:.4f}" for g, m, s in zip(gammas, mean, se))
    report("AC2", ok, f"mean unit-square mass within 3 sigma of 1 ({detail})")
    assert ok


def test_ac03_martingale_identity(report):
    params = SimulationParams(truncation=6)
    grid = GridSpec.centered(1.0, 1 / 128)
    path = sample_path((0.0, 0.0), 1.0, 1 / 4096, 11)
    R = 0.9
    T_R = first_exit_time(path, R)
    ts = (0.1, 0.5, 1.0)
    n = 10_000
    vals = np.empty((n, len(ts)))
    for j in range(n):
        s = sample_partial_sum(params, grid, 6, 2, j)
        clk = compute_clock(path, s, 6, 1.0, R=R)
        assert not clk.truncated
        vals[j] = [clk.value_at(t) for t in ts]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(n)
    target = np.array([t if T_R is None else min(t, T_R) for t in ts])
    ok = bool(np.all(np.abs(mean - target) <= 3 * se))
    detail = "; ".join(f"t={t}: {m:.4f} +- {s:.4f} vs {x:.4f}" for t, m, s, x in zip(ts, mean, se, target))
    report("AC3", ok, f"E[F_R(t)] = t ^ T_R, T_R = {T_R} ({detail})")
    assert ok


def test_ac04_measure_spectrum(report):
    params = SimulationParams(truncation=10)
    grid = GridSpec(1.0, 1025)
    h = grid.spacing
    cells = [8, 16, 32, 64, 128]
    radii = [k * h for k in cells]
    n = 1000
    vals = np.empty((n, len(cells)))
    for j in range(n):
        mu = build_measure(sample_partial_sum(params, grid, 10, 7, j), 10, 0.5)
        vals[j] = box_moments(mu, 2.0, cells)
    est = fit_loglog(radii, vals, 7)
    target = xi_M(0.5, 2.0)
    ok = est.within(target, 0.2)
    report("AC4", ok, f"slope {est.slope:.4f} +- {est.stderr:.4f} vs xi_M(2) = {target} +- 0.2 (radii 8h..128h)")
    assert ok


def test_ac05_clock_spectrum(report):
    s_values = [2.0**-k for k in range(7, 2, -1)]  # 1/128 .. 1/8
    cfg = MCConfig(10_000, seed=5)
    r = estimate_clock_scaling(cfg, 0.5, 6, 1.0, s_values)
    q1 = r.estimate
    # the same replicas give the second moment: per-replica rows hold F(s)
    q2 = fit_loglog(s_values, r.per_replica**2, cfg.seed)
    ok2 = q2.within(xi(0.5, 2.0), 0.2)
    ok1 = q1.within(1.0, 0.05)
    ok = ok1 and ok2 and r.failed / cfg.replicas <= 0.01
    report(
        "AC5",
        ok,
        f"q=2 slope {q2.slope:.4f} +- {q2.stderr:.4f} vs {xi(0.5, 2.0)} +- 0.2; "
        f"q=1 slope {q1.slope:.4f} +- {q1.stderr:.4f} vs 1 +- 0.05; failed replicas {r.failed}",
    )
    assert ok


def test_ac06_negative_moments(report):
    radii = [2.0**-k for k in range(6, 1, -1)]  # 1/64 .. 1/4
    flat = estimate_negative_moments(MCConfig(1000, seed=6), 0.0, 8, 1.0, radii).estimate
    rough = estimate_negative_moments(MCConfig(1000, seed=6), 0.5, 8, 1.0, radii)
    bound = 2 * xi(0.5, -1.0) - 0.15
    ok = abs(flat.slope + 2.0) <= 0.05 and rough.estimate.slope >= bound
    report(
        "AC6",
        ok,
        f"gamma=0.5 slope {rough.estimate.slope:.4f} +- {rough.estimate.stderr:.4f} >= {bound:.2f}; "
        f"gamma=0 slope {flat.slope:.6f} vs -2 +- 0.05",
    )
    assert ok


def test_ac07_independence_decay(report):
    r, tight = estimate_bracket_decay(MCConfig(1000, seed=8), 1.0, range(1, 9))
    est = r.estimate
    ok = est.within(-0.125, 0.05) and r.failed / 1000 <= 0.01
    report(
        "AC7",
        ok,
        f"per-level log2 decay {est.slope:.4f} +- {est.stderr:.4f} vs -0.125 +- 0.05; "
        f"tight part range {tight.min():.4f}..{tight.max():.4f}; discarded {r.failed}",
    )
    assert ok


def test_ac08_degeneracy(report):
    params = SimulationParams(truncation=6)
    grid = GridSpec.centered(1.0, 1 / 64)
    path = sample_path((0.1, -0.05), 0.5, 1 / 4096, 3)
    clk = compute_clock(path, None, 6, 0.0)
    clock_ok = np.array_equal(clk.clock, path.dt * np.arange(path.steps + 1))
    stack = sample_stack(params, grid, 3)
    clk2 = compute_clock(path, stack, 6, 0.0)
    clock_ok = clock_ok and np.array_equal(clk2.clock, clk.clock)
    lbm = build_lbm(path, clk, path.dt)
    lbm_dev = float(np.max(np.abs(lbm.positions - path.positions)))
    sde = integrate_n_lbm_sde(stack, 6, 0.0, (0.1, -0.05), 0.5, 1 / 4096, 3)
    sde_dev = float(np.max(np.abs(sde.positions - path.positions)))
    mu = build_measure(stack, 6, 0.0)
    leb = bool(np.all(mu.cell_mass == grid.spacing**2))
    ok = clock_ok and lbm_dev <= 1e-12 and sde_dev <= 1e-12 and leb
    report(
        "AC8",
        ok,
        f"clock identity {clock_ok}; max |LBM - BM| {lbm_dev:.1e}; max |SDE - BM| {sde_dev:.1e}; Lebesgue exact {leb}",
    )
    assert ok


def _kahane_instance(rng, item):
    size = int(rng.integers(1, 9))
    nu = rng.uniform(0.1, 1.0, size)
    G = rng.normal(size=(size, size)) * 0.4
    K = G @ G.T
    C = 0.0
    if item == 1:
        B = rng.uniform(0.0, 0.5, (size, int(rng.integers(1, 4))))
        Kp = K + B @ B.T  # B >= 0, so K <= K' entrywise and K' is PSD
    else:
        Kp = K
        C = float(rng.uniform(0.05, 0.5))
        v = rng.uniform(0.0, 1.0, size)
        K = Kp + C * np.outer(v, v)  # K <= K' + C entrywise
    a = float(rng.uniform(0.0, 2.0))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        F, M = (lambda x: x**2), 1.0
    elif kind == 1:
        F, M = (lambda x, a=a: np.maximum(x - a, 0.0)), 1.0
    else:
        F, M = (lambda x, a=a: (x - a) ** 2), 1.0 + 2.0 * a * a
    return size, nu, K, Kp, F, C, M


def test_ac09_kahane(report):
    rng = np.random.default_rng(2024)
    violations = {1: 0, 2: 0}
    flagged = {1: 0, 2: 0}
    for item in (1, 2):
        for i in range(1000):
            size, nu, K, Kp, F, C, M = _kahane_instance(rng, item)
            r = kahane_compare(size, nu, K, Kp, F, MCConfig(4000, seed=1000 * item + i), C=C, M=M)
            if r.passed:
                continue
            # near-equality instances trip a one-sided 3 sigma test at its false-alarm
            # rate; a violation must persist on an independent, 25x larger sample
            flagged[item] += 1
            again = kahane_compare(size, nu, K, Kp, F, MCConfig(100_000, seed=10**6 + 1000 * item + i), C=C, M=M)
            violations[item] += not again.passed
    s2, sp2, n = 0.3, 0.7, 200_000
    one = kahane_compare(1, [1.0], [[s2]], [[sp2]], lambda x: x**2, MCConfig(n, seed=1))
    se_l = math.sqrt((math.exp(6 * s2) - math.exp(2 * s2)) / n)
    se_r = math.sqrt((math.exp(6 * sp2) - math.exp(2 * sp2)) / n)
    closed = abs(one.lhs - math.exp(s2)) <= 3 * se_l and abs(one.rhs - math.exp(sp2)) <= 3 * se_r
    ok = violations[1] == 0 and violations[2] == 0 and closed and one.passed
    report(
        "AC9",
        ok,
        f"violations item 1: {violations[1]}/1000, item 2: {violations[2]}/1000 "
        f"(first-stage 3 sigma flags {flagged[1]} and {flagged[2]} re-tested at 1e5 replicas); "
        f"1-point E F = {one.lhs:.4f} vs e^0.3 = {math.exp(s2):.4f}, {one.rhs:.4f} vs e^0.7 = {math.exp(sp2):.4f}",
    )
    assert ok


def test_ac10_convergence_diagnostics(report):
    params = SimulationParams(truncation=10)
    R = 0.5
    grid = GridSpec.centered(R, 1 / 512)
    pts = disk_eval_points(R, 16)
    lines, ok = [], True
    for seed in (0, 1, 2):
        s = sample_stack(params, grid, seed)
        top = build_measure(s, 10, 0.5)
        d = np.array([measure_distance(build_measure(s, n, 0.5), top, R, pts) for n in range(2, 10)])
        dec = bool(np.all(np.diff(d) < 0))
        ok = ok and dec
        lines.append(f"seed {seed}: {'decreasing' if dec else 'NOT decreasing'} [{', '.join(f'{x:.4f}' for x in d)}]")
    report("AC10", ok, "d_R(M_n, M_10), n = 2..9, strictly decreasing; " + "; ".join(lines))
    assert ok


def _run_twice(tmp_path, name, args):
    outs = []
    for k in range(2):
        out = tmp_path / f"{name}-{k}"
        code = cli.main([name, *args, "--out", str(out)])
        assert code in (0, 1, 3), (name, code)  # 3: too many discarded replicas, still deterministic
        outs.append(out)
    a, b = outs
    files = sorted(p.name for p in a.iterdir())
    same = all(filecmp.cmp(a / f, b / f, shallow=False) for f in files if f != "manifest.json")
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    ma["config"].pop("output"), mb["config"].pop("output")
    return same and ma == mb, files


def test_ac11_determinism(report, tmp_path):
    small = ["--set", "truncation=5", "--set", "spacing=1/64", "--seed", "3", "--replicas", "6"]
    runs = {
        "sample-field": ["--gamma", "1"],
        "build-measure": ["--gamma", "1"],
        "simulate-lbm": ["--gamma", "0.5", "--set", "horizon=1/8", "--set", "dt=1/4096", "--set", "quantum_dt=1/1024"],
        "verify-invariants": ["--gamma", "0.5", "--set", "horizon=1/16", "--set", "dt=1/2048"],
        "diagnostics": ["--gamma", "0.5", "--set", "horizon=1/16", "--set", "dt=1/2048", "--set", "R=0.25"],
    }
    quantities = {
        "clock-moment": ["--set", "dt=1/4096"],
        "negative-moment": ["--set", "scales=1/16,1/8,1/4"],
        "measure-moment": ["--set", "extent=1", "--set", "centered=false"],
        "holder": ["--set", "horizon=1/16", "--set", "dt=1/4096"],
        "bracket-decay": ["--set", "horizon=1/64", "--set", "dt=1/4096", "--set", "extent=2"],
        "modulus": ["--set", "spacing=1/128"],
    }
    results = {}
    for name, extra in runs.items():
        results[name] = _run_twice(tmp_path, name, [*small, *extra])
    for q, extra in quantities.items():
        results[f"estimate-exponents/{q}"] = _run_twice(
            tmp_path, "estimate-exponents", [*small, "--gamma", "0.5", "--set", f"quantity={q}", *extra]
        )
    bad = [k for k, (same, files) in results.items() if not same or len(files) < 2]
    ok = not bad
    report("AC11", ok, f"{len(results)} experiment configurations re-run byte-identical" + (f"; differing: {bad}" if bad else ""))
    assert ok
