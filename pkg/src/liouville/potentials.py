"""Dirichlet potentials ``g_R(μ)`` of grid measures and the distance ``d_R``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .chaos_measure import ChaosMeasureGrid
from .errors import DomainError, ParameterError, PreconditionError
from .field_sampler import FieldStack, GridSpec, fields_at
from .paths_clock import BrownianPath, _compensated_cumsum, first_exit_index

SUB = 4  # self-cell sub-quadrature is SUB x SUB points


@numba.njit(cache=True)
def _green_pi(x0, x1, y0, y1, R2, floor2):
    """``π G_R(x, y)`` for the disk of radius ``sqrt(R2)`` centered at 0, clamped at 0."""
    re = R2 - (x0 * y0 + x1 * y1)
    im = x0 * y1 - x1 * y0
    d2 = (x0 - y0) ** 2 + (x1 - y1) ** 2
    if d2 < floor2:
        d2 = floor2
    v = 0.5 * math.log((re * re + im * im) / (R2 * d2))
    return v if v > 0.0 else 0.0


@numba.njit(cache=True)
def _potential_sum(ex, ey, yx, yy, mass, R, h, sub):
    R2 = R * R
    floor2 = (1e-6 * h) ** 2
    half = 0.5 * h
    out = np.empty(ex.size)
    for i in range(ex.size):
        x0 = ex[i]
        x1 = ey[i]
        s = 0.0
        for j in range(yx.size):
            if abs(x0 - yx[j]) <= half and abs(x1 - yy[j]) <= half:
                acc = 0.0
                for a in range(sub):
                    for b in range(sub):
                        px = yx[j] - half + (a + 0.5) * h / sub
                        py = yy[j] - half + (b + 0.5) * h / sub
                        acc += _green_pi(x0, x1, px, py, R2, floor2)
                s += mass[j] * acc / (sub * sub)
            else:
                s += mass[j] * _green_pi(x0, x1, yx[j], yy[j], R2, floor2)
        out[i] = s / math.pi
    return out


@dataclass(frozen=True)
class PotentialGrid:
    R: float
    eval_points: np.ndarray
    values: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def sup(self) -> float:
        return float(np.max(self.values))


def disk_eval_points(R: float, per_radius: int = 16, center=(0.0, 0.0)) -> np.ndarray:
    """Square lattice of spacing ``R / per_radius`` restricted to the closed disk."""
    i = np.arange(-per_radius, per_radius + 1)
    u, v = np.meshgrid(i, i, indexing="ij")
    keep = u**2 + v**2 <= per_radius**2
    s = R / per_radius
    return np.column_stack([center[0] + s * u[keep], center[1] + s * v[keep]])


def _check_disk(grid: GridSpec, R: float, center) -> None:
    if not R > 0:
        raise ParameterError("R must be positive")
    if grid.periodic:
        if 2 * R > grid.extent:
            raise DomainError(f"disk of radius {R} does not fit in the periodic cell")
        return
    lo = np.asarray(grid.origin) - 1e-9
    hi = lo + grid.extent + 2e-9
    c = np.asarray(center, dtype=float)
    if np.any(c - R < lo) or np.any(c + R > hi):
        raise DomainError(f"disk B({tuple(c)}, {R}) exceeds the grid extent")


def _disk_cells(grid: GridSpec, mass: np.ndarray, R: float, center):
    x = grid.axis(0) - center[0]
    y = grid.axis(1) - center[1]
    inside = x[:, None] ** 2 + y[None, :] ** 2 < R * R
    xx, yy = np.meshgrid(x, y, indexing="ij")
    return xx[inside], yy[inside], np.ascontiguousarray(mass[inside])


def potential_of_masses(grid: GridSpec, mass: np.ndarray, R: float, eval_points, center=(0.0, 0.0)) -> np.ndarray:
    """``g_R`` of the (possibly signed) node masses ``mass`` on ``grid``."""
    _check_disk(grid, R, center)
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2) - np.asarray(center, dtype=float)
    if np.any(np.sum(pts**2, axis=1) > R * R * (1 + 1e-12)):
        raise DomainError("evaluation points must lie in the closed disk")
    yx, yy, m = _disk_cells(grid, mass, R, center)
    return _potential_sum(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]), yx, yy, m, float(R), grid.spacing, SUB
    )


def potential(measure: ChaosMeasureGrid, R: float, eval_points=None, center=(0.0, 0.0)) -> PotentialGrid:
    """``g_R(μ)(x) = ∫_{B(center,R)} G_R(x, y) μ(dy)`` at the evaluation points."""
    pts = disk_eval_points(R, center=center) if eval_points is None else np.asarray(eval_points, dtype=float)
    vals = potential_of_masses(measure.grid, np.asarray(measure.cell_mass), R, pts, center)
    return PotentialGrid(float(R), pts, vals, (float(center[0]), float(center[1])))


def measure_distance(mu: ChaosMeasureGrid, nu: ChaosMeasureGrid, R: float, eval_points=None, center=(0.0, 0.0)) -> float:
    """``sup_x |g_R(μ)(x) - g_R(ν)(x)|`` over the evaluation points."""
    pts = disk_eval_points(R, center=center) if eval_points is None else np.asarray(eval_points, dtype=float)
    if mu.grid == nu.grid:
        diff = potential_of_masses(mu.grid, mu.cell_mass - nu.cell_mass, R, pts, center)
    else:
        diff = potential(mu, R, pts, center).values - potential(nu, R, pts, center).values
    return float(np.max(np.abs(diff)))


def measure_clock(path: BrownianPath, measure: ChaosMeasureGrid, R: float, center=(0.0, 0.0)) -> np.ndarray:
    """Clock of the grid measure along the path up to ``T_R``: the density interpolated bilinearly."""
    k = first_exit_index(path, R, center)
    stop = path.steps if k is None else k
    pts = path.positions[:stop]
    dens = FieldStack(measure.grid, None, (measure.cell_mass / measure.cell_area)[None], 0, None, 0, (1,))
    w = fields_at(dens, 1, pts) if stop else np.zeros(0)
    clock = path.dt * _compensated_cumsum(np.ascontiguousarray(w, dtype=float))
    return np.concatenate([clock, np.full(path.steps - stop, clock[-1])])


@dataclass(frozen=True)
class StabilityTable:
    d_R: float
    sup_potential: float
    etas: np.ndarray
    exceedance: np.ndarray
    c_R: float
    dominated: bool

    def rows(self, n: int | None = None) -> list[dict]:
        return [
            {
                "n": n,
                "d_R_value": self.d_R,
                "sup_potential": self.sup_potential,
                "eta": float(e),
                "exceedance_prob": float(p),
            }
            for e, p in zip(self.etas, self.exceedance)
        ]


def clock_stability_vs_distance(
    paths,
    mu: ChaosMeasureGrid,
    nu: ChaosMeasureGrid,
    R: float,
    etas=None,
    center=(0.0, 0.0),
    eval_points=None,
) -> StabilityTable:
    """Empirical ``P(sup_t |F^μ - F^ν| >= η)`` against ``c_R exp(-η / (c_R sqrt(d_R)))``.

    ``c_R`` is fitted from the slope of ``log P`` in ``η``; ``dominated``
    reports whether every empirical probability lies under the fitted bound.
    """
    d = measure_distance(mu, nu, R, eval_points, center)
    if d > 1.0:
        raise PreconditionError(f"d_R(mu, nu) = {d:.4g} exceeds 1")
    sup_pot = max(potential(mu, R, eval_points, center).sup, potential(nu, R, eval_points, center).sup)
    sups = np.array(
        [float(np.max(np.abs(measure_clock(p, mu, R, center) - measure_clock(p, nu, R, center)))) for p in paths]
    )
    if etas is None:
        top = float(sups.max()) if sups.size and sups.max() > 0 else 1.0
        etas = np.linspace(0.0, top, 9)[1:]
    etas = np.asarray(etas, dtype=float)
    exc = np.array([float(np.mean(sups >= e)) for e in etas])
    pos = exc > 0
    c_R = float("nan")
    dominated = True
    if d > 0 and pos.sum() >= 2:
        slope = np.polyfit(etas[pos], np.log(exc[pos]), 1)[0]
        if slope < 0:
            c_R = -1.0 / (slope * math.sqrt(d))
            bound = c_R * np.exp(-etas / (c_R * math.sqrt(d)))
            dominated = bool(np.all(exc <= bound * (1 + 1e-12)))
        else:
            dominated = False
    return StabilityTable(d, sup_pot, etas, exc, c_R, dominated)
