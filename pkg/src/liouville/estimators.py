"""Monte Carlo estimators for the clock exponents, Kahane's inequality and bracket decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .chaos_measure import check_gamma, xi_M  # noqa: F401  (re-exported)
from .errors import MomentDoesNotExist, ParameterError, PreconditionError
from .field_sampler import FieldStack, GridSpec, sample_partial_sum, sample_stack
from .kernels import SimulationParams
from .paths_clock import (
    BrownianPath,
    bracket_series,
    brownian_increments,
    compute_clock,
    first_exit_index,
    path_rng,
)
from .regression import ExponentEstimate, fit_line, fit_loglog

MIN_STEPS = 4  # scales within this many path steps of dt are not fitted


@dataclass(frozen=True)
class MCConfig:
    replicas: int
    seed: int = 0
    confidence: float = 0.997
    quenched: bool = False

    def __post_init__(self):
        if int(self.replicas) != self.replicas or self.replicas < 2:
            raise ParameterError(f"replicas must be an integer >= 2, got {self.replicas!r}")
        if not 0.0 < self.confidence < 1.0:
            raise ParameterError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RunResult:
    """An exponent estimate with the count of replicas that had to be discarded."""

    estimate: ExponentEstimate
    failed: int = 0
    per_replica: np.ndarray | None = field(default=None, repr=False)


def xi(gamma: float, q: float) -> float:
    """Clock structure exponent ``(1 + γ²/4) q - (γ²/4) q²``."""
    g2 = float(gamma) ** 2
    return (1.0 + 0.25 * g2) * q - 0.25 * g2 * q * q


def moment_exists(gamma: float, q: float) -> bool:
    """Positive moments of the clock exist for ``q < 4/γ²``; negative ones always do."""
    if q <= 0 or gamma == 0:
        return True
    return q < 4.0 / gamma**2


def holder_exponents(gamma: float) -> tuple[float, float]:
    """``(α, β) = ((1 - γ/2)², (1 + γ/2)²)``."""
    return (1.0 - 0.5 * gamma) ** 2, (1.0 + 0.5 * gamma) ** 2


def _field_window(extent_needed: float, spacing: float) -> GridSpec:
    return GridSpec.centered(extent_needed, spacing)


def _stack_for(params: SimulationParams, grid: GridSpec, level: int, seed: int, replica: int) -> FieldStack | None:
    if params.gamma == 0.0:
        return None
    return sample_partial_sum(params, grid, level, seed, replica)


def _field_replica(config: MCConfig, j: int) -> int:
    return 0 if config.quenched else j


def estimate_clock_scaling(
    config: MCConfig,
    gamma: float,
    level: int,
    q: float,
    s_values,
    *,
    mass: float = 1.0,
    spacing: float = 1 / 128,
    half_width: float = 1.5,
    dt: float | None = None,
) -> RunResult:
    """Slope of ``log E[F(s)^q]`` against ``log s`` for a path started at the origin."""
    g = check_gamma(gamma)
    if not moment_exists(g, q):
        raise MomentDoesNotExist(f"moment of order {q} does not exist for gamma={g} (needs q < 4/gamma^2)")
    s_values = sorted(float(s) for s in s_values)
    if len(s_values) < 3 or s_values[-1] / s_values[0] < 8 * (1 - 1e-9):
        raise ParameterError("need at least 3 values of s spanning 3 octaves")
    dt = s_values[0] / 32 if dt is None else float(dt)
    idx = [int(round(s / dt)) for s in s_values]
    if idx[0] < MIN_STEPS:
        raise ParameterError("smallest s is within 4 path steps of dt")
    params = SimulationParams(gamma=g, mass=mass, truncation=level)
    grid = _field_window(half_width, spacing)
    rows, failed = [], 0
    for j in range(config.replicas):
        path = BrownianPath((0.0, 0.0), dt, _path_positions((0.0, 0.0), idx[-1], dt, config.seed, j), config.seed, j)
        stack = _stack_for(params, grid, level, config.seed, _field_replica(config, j))
        clk = compute_clock(path, stack, level, g)
        if clk.truncated:
            failed += 1
            continue
        rows.append(clk.clock[idx] ** q)
    est = fit_loglog(s_values, np.array(rows), config.seed)
    return RunResult(est, failed, np.array(rows))


def _path_positions(start, steps: int, dt: float, seed: int, replica: int) -> np.ndarray:
    inc = brownian_increments(steps, dt, seed, replica)
    return np.cumsum(np.vstack([np.asarray(start, dtype=float)[None, :], inc]), axis=0)


def unit_exit_path(seed: int, replica: int, dt: float, R: float = 1.0, chunk: int = 4096, max_steps: int = 10**7):
    """Brownian path from the origin, extended chunk by chunk until it leaves ``B(0, R)``."""
    rng = path_rng(seed, replica)
    pos = [np.zeros((1, 2))]
    cur = np.zeros(2)
    total = 0
    sd = math.sqrt(dt)
    while total < max_steps:
        inc = rng.standard_normal((chunk, 2)) * sd
        block = np.cumsum(np.vstack([cur[None, :], inc]), axis=0)[1:]
        pos.append(block)
        total += chunk
        cur = block[-1]
        if np.any(np.sum(block**2, axis=1) >= R * R):
            break
    return np.vstack(pos)


def estimate_negative_moments(
    config: MCConfig,
    gamma: float,
    level: int,
    q: float,
    r_values,
    *,
    mass: float = 1.0,
    spacing: float = 1 / 512,
    steps_per_unit: int = 4096,
) -> RunResult:
    """Slope of ``log E[F(T_r)^{-q}]`` against ``log r``.

    One unit-radius path is drawn per replica and rescaled to each radius by
    Brownian scaling (positions times ``r``, time step times ``r²``). The
    radii share randomness, and at ``γ = 0`` the exit times scale exactly
    as ``r²``.
    """
    g = check_gamma(gamma)
    if not q > 0:
        raise ParameterError("q must be positive")
    r_values = sorted(float(r) for r in r_values)
    if len(r_values) < 3:
        raise ParameterError("need at least 3 radii")
    if r_values[0] < 4 * spacing:
        raise ParameterError("smallest radius is within 4 grid cells")
    dt1 = 1.0 / steps_per_unit
    params = SimulationParams(gamma=g, mass=mass, truncation=level)
    grid = _field_window(r_values[-1] * 1.05 + 2 * spacing, spacing)
    rows, failed = [], 0
    for j in range(config.replicas):
        unit = unit_exit_path(config.seed, j, dt1)
        stack = _stack_for(params, grid, level, config.seed, _field_replica(config, j))
        k = first_exit_index(BrownianPath((0.0, 0.0), dt1, unit), 1.0)
        row = []
        ok = True
        for r in r_values:
            path = BrownianPath((0.0, 0.0), dt1 * r * r, r * unit[: k + 1], config.seed, j)
            clk = compute_clock(path, stack, level, g, R=r)
            if clk.truncated:
                ok = False
                break
            row.append(clk.terminal ** (-q))
        if not ok:
            failed += 1
            continue
        rows.append(row)
    est = fit_loglog(r_values, np.array(rows), config.seed)
    return RunResult(est, failed, np.array(rows))


def dyadic_increments(clock: np.ndarray, k: int) -> np.ndarray:
    """Increments of the clock over consecutive disjoint blocks of ``k`` steps."""
    n = (len(clock) - 1) // k
    c = clock[: n * k + 1 : k]
    return np.diff(c)


def holder_envelopes(clock: np.ndarray, dt: float, min_steps: int = MIN_STEPS) -> tuple[ExponentEstimate, ExponentEstimate]:
    """Upper (max increment) and lower (min increment) envelope exponents of one clock."""
    n = len(clock) - 1
    ks = []
    k = min_steps
    while 8 * k <= n:
        ks.append(k)
        k *= 2
    if len(ks) < 3:
        raise ParameterError("clock too short for an envelope fit")
    s = [k * dt for k in ks]
    mx = [float(dyadic_increments(clock, k).max()) for k in ks]
    mn = [float(dyadic_increments(clock, k).min()) for k in ks]
    return fit_line(s, mx), fit_line(s, mn)


def estimate_holder(
    config: MCConfig,
    gamma: float,
    level: int,
    *,
    horizon: float = 0.25,
    dt: float = 1 / 8192,
    mass: float = 1.0,
    spacing: float = 1 / 256,
    half_width: float = 2.0,
) -> tuple[RunResult, RunResult]:
    """Upper and lower Hölder envelope exponents of the clock, averaged over replicas.

    The upper envelope should be at least ``(1 - γ/2)²`` and the lower at most
    ``(1 + γ/2)²``, both up to a small ``ε``.
    """
    g = check_gamma(gamma)
    params = SimulationParams(gamma=g, mass=mass, truncation=level)
    grid = _field_window(half_width, spacing)
    steps = int(round(horizon / dt))
    ups, lows, failed = [], [], 0
    window = None
    for j in range(config.replicas):
        path = BrownianPath((0.0, 0.0), dt, _path_positions((0.0, 0.0), steps, dt, config.seed, j), config.seed, j)
        stack = _stack_for(params, grid, level, config.seed, _field_replica(config, j))
        clk = compute_clock(path, stack, level, g)
        if clk.truncated:
            failed += 1
            continue
        up, low = holder_envelopes(np.asarray(clk.clock), dt)
        ups.append(up.slope)
        lows.append(low.slope)
        window = up.scale_window

    def summary(v):
        v = np.asarray(v)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        return ExponentEstimate(float(v.mean()), se, 1.0, window, len(v), config.seed)

    return (
        RunResult(summary(ups), failed, np.asarray(ups)),
        RunResult(summary(lows), failed, np.asarray(lows)),
    )


# -- Kahane's convexity inequality -------------------------------------------------


def _psd_root(K: np.ndarray, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ParameterError(f"{name} must be a square matrix")
    if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
        raise ParameterError(f"{name} is not symmetric")
    w, v = np.linalg.eigh(K)
    if w.min() < -1e-10 * max(np.trace(K), 1e-300):
        raise ParameterError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def check_test_function(F: Callable, M: float, beta: float) -> None:
    """Reject ``F`` unless ``|F(x)| <= M (1 + x^β)`` on a wide logarithmic sweep of ``x >= 0``."""
    x = np.concatenate([[0.0], np.logspace(-8, 8, 161)])
    with np.errstate(all="ignore"):
        y = np.asarray(F(x), dtype=float)
    bound = M * (1.0 + x**beta)
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > bound * (1 + 1e-12)):
        raise ParameterError("rejected test function: it violates |F(x)| <= M(1 + |x|^beta)")


@dataclass(frozen=True)
class KahaneResult:
    lhs: float
    rhs: float
    stderr: float
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def kahane_compare(
    size: int,
    nu,
    K,
    K_prime,
    F: Callable,
    config: MCConfig,
    C: float = 0.0,
    M: float = 1.0,
    beta: float = 2.0,
) -> KahaneResult:
    """``E F(Σ ν_i e^{Y_i - K_ii/2})`` under ``K`` against ``K'`` (times ``e^{√C Z - C/2}`` when ``C > 0``).

    Both sides use the same standard normals, so ``K = K'`` gives equality and
    the standard error is that of the paired differences.
    """
    nu = np.asarray(nu, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float)
    Kp = np.asarray(K_prime, dtype=float)
    if nu.size != size or K.shape != (size, size) or Kp.shape != (size, size):
        raise ParameterError("size, nu, K and K_prime are inconsistent")
    if np.any(nu < 0):
        raise ParameterError("weights nu must be nonnegative")
    if C < 0:
        raise ParameterError("C must be nonnegative")
    A = _psd_root(K, "K")
    Ap = _psd_root(Kp, "K_prime")
    if np.any(K > Kp + C + 1e-12):
        raise PreconditionError("K <= K' + C fails entry-wise")
    check_test_function(F, M, beta)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(config.seed))))
    z = rng.standard_normal((config.replicas, size))
    y = z @ A.T - 0.5 * np.diag(K)
    yp = z @ Ap.T - 0.5 * np.diag(Kp)
    lhs = np.exp(y) @ nu
    rhs = np.exp(yp) @ nu
    if C > 0:
        rhs = rhs * np.exp(math.sqrt(C) * rng.standard_normal(config.replicas) - 0.5 * C)
    fl = np.asarray(F(lhs), dtype=float)
    fr = np.asarray(F(rhs), dtype=float)
    d = fl - fr
    se = float(d.std(ddof=1) / math.sqrt(len(d)))
    return KahaneResult(float(fl.mean()), float(fr.mean()), se, bool(d.mean() <= 3.0 * se))


def kahane_check(size, nu, K, K_prime, F, config: MCConfig, C: float = 0.0, M: float = 1.0, beta: float = 2.0) -> bool:
    """One-sided ``3σ`` test of Kahane's convexity inequality; see :func:`kahane_compare`."""
    return bool(kahane_compare(size, nu, K, K_prime, F, config, C, M, beta))


# -- asymptotic independence ----------------------------------------------------


def estimate_bracket_decay(
    config: MCConfig,
    gamma: float,
    levels,
    *,
    T: float = 0.05,
    dt: float = 1 / 16384,
    mass: float = 1.0,
    spacing: float = 1 / 256,
    half_width: float = 1.0,
) -> tuple[RunResult, np.ndarray]:
    """Per-level mean of ``sup_t |<B^n, Z>_t|`` on coupled stacks, and its decay in ``ln c_n``.

    Returns the fit of ``log E[sup]`` against ``log c_n`` and the matching
    means of the tight parts (which should not decay).
    """
    g = check_gamma(gamma)
    levels = sorted(int(n) for n in levels)
    params = SimulationParams(gamma=g, mass=mass, truncation=max(levels))
    grid = _field_window(half_width, spacing)
    steps = int(round(T / dt))
    rows, tight, failed = [], [], 0
    for j in range(config.replicas):
        pos = _path_positions((0.0, 0.0), steps, dt, config.seed, j)
        path = BrownianPath((0.0, 0.0), dt, pos, config.seed, j)
        if g > 0 and np.any(np.abs(pos) > half_width):
            failed += 1
            continue
        stack = sample_stack(params, grid, config.seed, _field_replica(config, j)) if g > 0 else _flat_stack(params, grid)
        b = bracket_series(stack, g, levels, path)
        rows.append(b.sup_bracket)
        tight.append(b.tight_part)
    scales = [params.c(n) for n in levels]
    if scales[0] == scales[-1]:
        raise ParameterError("levels must span more than one scale")
    est = fit_loglog(scales, np.array(rows), config.seed)
    return RunResult(est, failed, np.array(rows)), np.array(tight).mean(axis=0)


def _flat_stack(params: SimulationParams, grid: GridSpec) -> FieldStack:
    z = np.zeros((params.truncation,) + grid.shape)
    return FieldStack(grid, z.copy(), z, 0, params)


def independence_decay(config: MCConfig, gamma: float, levels, **kw) -> ExponentEstimate:
    """Slope of ``log E[sup_t |<B^n, Z>_t|]`` against ``ln c_n``; expected ``-γ²/8``."""
    return estimate_bracket_decay(config, gamma, levels, **kw)[0].estimate


def with_replicas(config: MCConfig, replicas: int) -> MCConfig:
    return replace(config, replicas=int(replicas))
