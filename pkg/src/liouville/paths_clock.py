"""Brownian paths, the Liouville clock ``F_n`` and Liouville Brownian motion.

Off-grid field values are bilinear interpolants ``X̃_n`` of the node values.
Their variance ``V`` is not ``ln c_n`` away from the nodes, so the clock
integrand is normalized by the interpolant's own variance,
``exp(γ X̃_n - (γ²/2) V)``. At nodes ``V = ln c_n`` and the integrand is
the familiar ``c_n^{-γ²/2} e^{γ X_n}``; off nodes this keeps
``E^X[F_R(t)] = t ∧ T_R`` exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .chaos_measure import check_gamma
from .errors import HorizonExceeded, ParameterError
from .field_sampler import FieldStack, fields_at, interpolated_log_normalizer

PATH_STREAM = 0x5041  # spawn-key tag separating path streams from field streams


def path_rng(seed: int, replica: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(PATH_STREAM, int(replica)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BrownianPath:
    start: tuple[float, float]
    dt: float
    positions: np.ndarray
    seed: int | None = None
    replica: int = 0

    def __post_init__(self):
        self.positions.flags.writeable = False

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.positions))

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    def position_at(self, s: float) -> np.ndarray:
        """Linear interpolation between samples at classical time ``s``."""
        k, frac = _split_time(s / self.dt, self.steps)
        if frac == 0.0:
            return self.positions[k].copy()
        return (1.0 - frac) * self.positions[k] + frac * self.positions[k + 1]


def _split_time(u: float, steps: int) -> tuple[int, float]:
    if u < 0 or u > steps + 1e-9:
        raise HorizonExceeded(f"time {u} steps outside the path horizon ({steps} steps)")
    k = min(int(math.floor(u)), steps)
    frac = u - k
    if k == steps:
        frac = 0.0
    return k, frac


def brownian_increments(steps: int, dt: float, seed: int, replica: int = 0) -> np.ndarray:
    return path_rng(seed, replica).standard_normal((steps, 2)) * math.sqrt(dt)


def sample_path(start, T: float, dt: float, seed: int, replica: int = 0) -> BrownianPath:
    """Planar Brownian motion sampled every ``dt`` up to ``T`` (rounded to whole steps)."""
    if not T > 0 or not dt > 0:
        raise ParameterError("T and dt must be positive")
    steps = max(1, int(round(T / dt)))
    inc = brownian_increments(steps, dt, seed, replica)
    pos = np.cumsum(np.vstack([np.asarray(start, dtype=float)[None, :], inc]), axis=0)
    return BrownianPath((float(start[0]), float(start[1])), float(dt), pos, seed, int(replica))


def first_exit_index(path: BrownianPath, R: float, center=(0.0, 0.0)) -> int | None:
    """First index ``k`` with ``|B_k - center| >= R``, or ``None``."""
    if not R > 0:
        raise ParameterError("R must be positive")
    d2 = np.sum((path.positions - np.asarray(center, dtype=float)) ** 2, axis=1)
    out = np.flatnonzero(d2 >= R * R)
    return int(out[0]) if out.size else None


def first_exit_time(path: BrownianPath, R: float, center=(0.0, 0.0)) -> float | None:
    """Exit time of the open ball ``B(center, R)``; ``None`` if the path stays inside."""
    k = first_exit_index(path, R, center)
    return None if k is None else k * path.dt


@numba.njit(cache=True)
def _compensated_cumsum(w):
    out = np.empty(w.size + 1)
    out[0] = 0.0
    s = 0.0
    c = 0.0
    for i in range(w.size):
        y = w[i] - c
        t = s + y
        c = (t - s) - y
        s = t
        out[i + 1] = s
    return out


def _grid_exit_index(stack: FieldStack, pos: np.ndarray) -> int | None:
    g = stack.grid
    if g.periodic:
        return None
    u = pos[:, 0] - g.origin[0]
    v = pos[:, 1] - g.origin[1]
    bad = np.flatnonzero((u < 0) | (v < 0) | (u > g.extent) | (v > g.extent))
    return int(bad[0]) if bad.size else None


def log_integrand(stack: FieldStack, n: int, pts: np.ndarray, a: float, b: float) -> np.ndarray:
    """``a X̃_n(p) - b V(p)`` at the points ``pts``."""
    if a == 0.0 and b == 0.0:
        return np.zeros(len(pts))
    return a * fields_at(stack, n, pts) - b * interpolated_log_normalizer(stack, n, pts)


@dataclass(frozen=True)
class PathClock:
    """``clock[k] = F_n(k dt)``; flat after the exit index when stopped at ``T_R``."""

    path: BrownianPath
    level: int
    gamma: float
    clock: np.ndarray
    exit_index: int | None = None
    truncated: bool = False
    R: float | None = None

    def __post_init__(self):
        self.clock.flags.writeable = False

    @property
    def times(self) -> np.ndarray:
        return self.path.dt * np.arange(len(self.clock))

    @property
    def terminal(self) -> float:
        return float(self.clock[-1])

    def value_at(self, s: float) -> float:
        """``F(s)`` by linear interpolation of the samples."""
        steps = len(self.clock) - 1
        k, frac = _split_time(s / self.path.dt, steps)
        if frac == 0.0:
            return float(self.clock[k])
        return float((1 - frac) * self.clock[k] + frac * self.clock[k + 1])


def compute_clock(
    path: BrownianPath,
    stack: FieldStack | None,
    n: int,
    gamma: float,
    R: float | None = None,
    center=(0.0, 0.0),
) -> PathClock:
    """Left-endpoint Riemann sum of ``exp(γ X̃_n - (γ²/2) V)`` along the path.

    With ``R`` the clock is ``F_R^n``: it stops increasing at the exit time of
    ``B(center, R)``. If the path leaves the field grid first, the clock ends
    at the last sample inside and ``truncated`` is set.
    """
    g = check_gamma(gamma)
    pos = path.positions
    last = len(pos) - 1
    exit_k = None if R is None else first_exit_index(path, R, center)
    stop = last if exit_k is None else exit_k
    truncated = False
    if g == 0.0:
        w = np.ones(stop)
    else:
        if stack is None:
            raise ParameterError("a field stack is needed for gamma > 0")
        out = _grid_exit_index(stack, pos[:stop])
        if out is not None:
            # left endpoints 0..out-1 are inside: the clock ends at sample out
            if out == 0:
                raise ParameterError("path starts outside the field grid")
            stop = last = out
            truncated = True
        w = np.exp(log_integrand(stack, n, pos[:stop], g, 0.5 * g * g))
    csum = _compensated_cumsum(w)
    clock = path.dt * csum
    if stop < last:
        clock = np.concatenate([clock, np.full(last - stop, clock[-1])])
    return PathClock(path, int(n), g, clock, exit_k, truncated, R)


def invert_clock(clock: PathClock, t: float) -> float:
    """Classical time ``inf{s : F(s) >= t}``, piecewise linear between samples."""
    k, frac = _invert(clock.clock, t)
    return clock.path.dt * (k + frac)


def _invert(F: np.ndarray, t: float) -> tuple[int, float]:
    if t < 0:
        raise ParameterError("quantum time must be nonnegative")
    if t > F[-1]:
        raise HorizonExceeded(f"quantum time {t} beyond the clock terminal value {F[-1]}")
    k = int(np.searchsorted(F, t, side="left"))
    if k == 0 or F[k] == t:
        return k, 0.0
    return k - 1, float((t - F[k - 1]) / (F[k] - F[k - 1]))


@dataclass(frozen=True)
class LBMPath:
    quantum_times: np.ndarray
    positions: np.ndarray
    classical_times: np.ndarray | None = None
    truncated: bool = False

    def __post_init__(self):
        self.positions.flags.writeable = False

    def quadratic_variation(self) -> float:
        """Sum of squared increments per coordinate, averaged over the two coordinates."""
        d = np.diff(self.positions, axis=0)
        return float(np.sum(d * d) / 2.0)


def build_lbm(path: BrownianPath, clock: PathClock, quantum_dt: float, quantum_T: float | None = None) -> LBMPath:
    """``B_{F^{-1}(t)}`` on the uniform quantum grid ``0, dq, 2 dq, ... <= quantum_T``."""
    if not quantum_dt > 0:
        raise ParameterError("quantum_dt must be positive")
    horizon = clock.terminal if quantum_T is None else float(quantum_T)
    if horizon > clock.terminal:
        raise HorizonExceeded(f"quantum horizon {horizon} beyond the clock terminal value {clock.terminal}")
    k = int(math.floor(horizon / quantum_dt + 1e-9))
    qt = quantum_dt * np.arange(k + 1)
    qt = qt[qt <= clock.terminal]
    F = np.asarray(clock.clock)
    idx = np.searchsorted(F, qt, side="left")
    pos = np.empty((len(qt), 2))
    ct = np.empty(len(qt))
    P = path.positions
    for i, (t, j) in enumerate(zip(qt, idx)):
        if j == 0 or F[j] == t:
            pos[i] = P[j]
            ct[i] = j * path.dt
        else:
            f = (t - F[j - 1]) / (F[j] - F[j - 1])
            pos[i] = (1 - f) * P[j - 1] + f * P[j]
            ct[i] = (j - 1 + f) * path.dt
    return LBMPath(qt, pos, ct, clock.truncated)


@numba.njit(cache=True)
def _sde_loop(z0x, z0y, inc, field, ox, oy, h, m, periodic, gamma, c0, c1, c2):
    steps = inc.shape[0]
    out = np.empty((steps + 1, 2))
    out[0, 0] = z0x
    out[0, 1] = z0y
    zx = z0x
    zy = z0y
    for k in range(steps):
        u = (zx - ox) / h
        v = (zy - oy) / h
        if periodic:
            u = u % m
            v = v % m
            i0 = min(int(math.floor(u)), m - 1)
            j0 = min(int(math.floor(v)), m - 1)
            i1 = (i0 + 1) % m
            j1 = (j0 + 1) % m
        else:
            if u < 0.0 or v < 0.0 or u > m - 1 or v > m - 1:
                return out[: k + 1], True
            i0 = min(int(math.floor(u)), m - 2)
            j0 = min(int(math.floor(v)), m - 2)
            i1 = i0 + 1
            j1 = j0 + 1
        tx = u - i0
        ty = v - j0
        w00 = (1 - tx) * (1 - ty)
        w10 = tx * (1 - ty)
        w01 = (1 - tx) * ty
        w11 = tx * ty
        x = w00 * field[i0, j0] + w10 * field[i1, j0] + w01 * field[i0, j1] + w11 * field[i1, j1]
        var = (
            c0 * (w00 * w00 + w10 * w10 + w01 * w01 + w11 * w11)
            + 2 * c1 * (w00 * w10 + w00 * w01 + w10 * w11 + w01 * w11)
            + 2 * c2 * (w00 * w11 + w10 * w01)
        )
        sigma = math.exp(-0.5 * gamma * x + 0.25 * gamma * gamma * var)
        zx = zx + sigma * inc[k, 0]
        zy = zy + sigma * inc[k, 1]
        out[k + 1, 0] = zx
        out[k + 1, 1] = zy
    return out, False


def integrate_n_lbm_sde(
    stack: FieldStack | None,
    n: int,
    gamma: float,
    start,
    quantum_T: float,
    quantum_dt: float,
    seed: int,
    replica: int = 0,
) -> LBMPath:
    """Euler-Maruyama for ``dZ = exp(-(γ/2) X̃_n + (γ²/4) V) dW``.

    The driver ``W`` is :func:`sample_path` with the same ``seed`` and
    ``replica``, so at ``γ = 0`` the result is that Brownian path exactly.
    """
    g = check_gamma(gamma)
    driver = sample_path(start, quantum_T, quantum_dt, seed, replica)
    qt = driver.times
    if g == 0.0:
        return LBMPath(qt, driver.positions.copy(), None, False)
    if stack is None:
        raise ParameterError("a field stack is needed for gamma > 0")
    grid = stack.grid
    c0, c1, c2 = stack.lag_covariances(n)
    pos, truncated = _sde_loop(
        float(start[0]),
        float(start[1]),
        np.ascontiguousarray(driver.increments()),
        np.ascontiguousarray(stack.field(n)),
        grid.origin[0],
        grid.origin[1],
        grid.spacing,
        grid.resolution,
        grid.periodic,
        g,
        c0,
        c1,
        c2,
    )
    return LBMPath(qt[: len(pos)], np.array(pos), None, bool(truncated))


@dataclass(frozen=True)
class BracketSeries:
    """Per-level ``sup_t |<B^n, Z>_t|`` and the tight factor ``c_n^{γ²/8}`` times it."""

    levels: tuple[int, ...]
    log_scales: tuple[float, ...]
    sup_bracket: np.ndarray
    tight_part: np.ndarray
    horizons: np.ndarray


def bracket_series(
    stack: FieldStack,
    gamma: float,
    levels,
    path: BrownianPath,
    driver_path: BrownianPath | None = None,
    T: float | None = None,
) -> BracketSeries:
    """``c_n^{-γ²/4} ∫_0^{T} e^{(γ/2) X_n(B_u)} du`` for each level on one coupled stack.

    The integrand is positive, so the sup over the horizon is the value at its
    end. The horizon is the classical time ``T`` (default: the whole path). If
    ``driver_path`` is given, its horizon is read as quantum time and mapped to
    classical time through the level-``n`` clock, ``F_n^{-1}``.
    """
    g = check_gamma(gamma)
    levels = tuple(int(n) for n in levels)
    horizon = path.horizon if T is None else float(T)
    nsteps = int(round(horizon / path.dt))
    if nsteps > path.steps:
        raise HorizonExceeded("bracket horizon beyond the path")
    sups = np.empty(len(levels))
    tight = np.empty(len(levels))
    hor = np.empty(len(levels))
    for i, n in enumerate(levels):
        steps = nsteps
        if driver_path is not None:
            clk = compute_clock(path, stack, n, g)
            s = invert_clock(clk, driver_path.horizon)
            steps = int(math.ceil(s / path.dt - 1e-9))
        pts = path.positions[:steps]
        if g == 0.0:
            w = np.ones(steps)
            wt = w
        else:
            v = interpolated_log_normalizer(stack, n, pts)
            x = fields_at(stack, n, pts)
            w = np.exp(0.5 * g * x - 0.25 * g * g * v)
            wt = np.exp(0.5 * g * x - 0.125 * g * g * v)
        sups[i] = path.dt * _compensated_cumsum(w)[-1]
        tight[i] = path.dt * _compensated_cumsum(wt)[-1]
        hor[i] = steps * path.dt
    return BracketSeries(levels, tuple(stack.log_scale(n) for n in levels), sups, tight, hor)
