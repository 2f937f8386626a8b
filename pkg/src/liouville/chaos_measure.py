"""Regularized Liouville measures ``M_n(dx) = c_n^{-γ²/2} e^{γ X_n(x)} dx`` on a grid.

Each grid node carries the mass of the square cell of side ``h`` centered on
it, evaluated at the node (midpoint rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import MomentDoesNotExist, ParameterError, PreconditionError
from .field_sampler import FieldStack, GridSpec, sample_kernel_field
from .kernels import KernelSpec
from .regression import ExponentEstimate, fit_line, fit_loglog

MIN_CELLS = 4  # regressions ignore scales below this many grid cells


def check_gamma(gamma: float) -> float:
    g = float(gamma)
    if not 0.0 <= g < 2.0:
        raise ParameterError(f"gamma must lie in [0, 2), got {gamma!r}")
    return g


def log_density(field: np.ndarray, gamma: float, log_c: float) -> np.ndarray:
    """``γ X - (γ²/2) ln c`` formed before exponentiating."""
    if gamma == 0.0:
        return np.zeros_like(field)
    return gamma * field - 0.5 * gamma * gamma * log_c


@dataclass(frozen=True)
class ChaosMeasureGrid:
    grid: GridSpec
    level: int
    gamma: float
    cell_mass: np.ndarray

    def __post_init__(self):
        self.cell_mass.flags.writeable = False

    @property
    def cell_area(self) -> float:
        return self.grid.spacing**2

    def total_mass(self) -> float:
        return float(self.cell_mass.sum())

    def density(self) -> np.ndarray:
        return self.cell_mass / self.cell_area

    def _index_range(self, lo: float, hi: float, dim: int) -> slice:
        h = self.grid.spacing
        o = self.grid.origin[dim]
        a = int(math.ceil((lo - o) / h - 1e-9))
        b = int(math.ceil((hi - o) / h - 1e-9))
        m = self.grid.resolution
        return slice(min(max(a, 0), m), min(max(b, 0), m))

    def mass_in_box(self, lo, hi) -> float:
        """Mass of nodes in the half-open box ``[lo, hi)``."""
        sx = self._index_range(lo[0], hi[0], 0)
        sy = self._index_range(lo[1], hi[1], 1)
        return float(self.cell_mass[sx, sy].sum())

    def ball_mass(self, center, r: float) -> float:
        x = self.grid.axis(0) - center[0]
        y = self.grid.axis(1) - center[1]
        inside = x[:, None] ** 2 + y[None, :] ** 2 < r * r
        return float(self.cell_mass[inside].sum())

    def ball_profile(self, center, radii) -> "BallMassProfile":
        rs = sorted((float(r) for r in radii), reverse=True)
        return BallMassProfile(tuple(center), tuple(rs), tuple(self.ball_mass(center, r) for r in rs))


@dataclass(frozen=True)
class BallMassProfile:
    center: tuple[float, float]
    radii: tuple[float, ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        if any(a <= b for a, b in zip(self.radii, self.radii[1:])):
            raise ParameterError("radii must be strictly decreasing")
        if any(a < b for a, b in zip(self.masses, self.masses[1:])):
            raise ParameterError("ball masses must be nondecreasing in the radius")


def build_measure(stack: FieldStack, n: int, gamma: float) -> ChaosMeasureGrid:
    """Cell masses ``c_n^{-γ²/2} e^{γ X_n} h²`` of the level-``n`` measure."""
    g = check_gamma(gamma)
    if n > stack.truncation:
        raise ParameterError(f"level {n} exceeds the stack truncation {stack.truncation}")
    mass = np.exp(log_density(stack.field(n), g, stack.log_scale(n))) * stack.grid.spacing**2
    if not np.all(np.isfinite(mass)):
        raise ParameterError("cell mass overflow")
    return ChaosMeasureGrid(stack.grid, int(n), g, mass)


def xi_M(gamma: float, p: float, d: int = 2) -> float:
    """Structure exponent of ball masses, ``(d + γ²/2) p - (γ²/2) p²``."""
    g2 = float(gamma) ** 2
    return (d + 0.5 * g2) * p - 0.5 * g2 * p * p


def moment_bound(gamma: float) -> float:
    """Moments of order ``p < 4/γ²`` exist."""
    return math.inf if gamma == 0 else 4.0 / gamma**2


def check_moment(gamma: float, p: float) -> None:
    if p > 0 and p >= moment_bound(gamma):
        raise MomentDoesNotExist(f"moment does not exist: order {p} >= 4/gamma^2 = {moment_bound(gamma):.4g}")


def _block_sums(mass: np.ndarray, k: int) -> np.ndarray:
    """Masses of the disjoint ``k x k`` blocks tiling the leading corner of the grid."""
    a = mass.shape[0] // k
    b = mass.shape[1] // k
    return mass[: a * k, : b * k].reshape(a, k, b, k).sum(axis=(1, 3))


def box_moments(measure: ChaosMeasureGrid, p: float, cells: list[int]) -> np.ndarray:
    """Average of ``M(Q)^p`` over disjoint boxes ``Q`` of ``k`` cells per side, for each ``k``."""
    m = measure.cell_mass[:-1, :-1] if not measure.grid.periodic else measure.cell_mass
    return np.array([float(np.mean(_block_sums(m, k) ** p)) for k in cells])


def _radii_to_cells(grid: GridSpec, radii) -> list[int]:
    h = grid.spacing
    cells = []
    for r in radii:
        k = int(round(r / h))
        if k < 1 or abs(k * h - r) > 1e-6 * r:
            raise ParameterError(f"radius {r} is not a multiple of the grid spacing {h}")
        cells.append(k)
    return cells


def estimate_moment_scaling(measures, p: float, radii, seed: int | None = None) -> ExponentEstimate:
    """Slope of ``log E[M(rA)^p]`` against ``log r``, ``A`` the unit box.

    The expectation pools all disjoint translates of the box ``[0, r)^2``
    (the fields are stationary) and all replicas. Radii below four grid
    cells are dropped.
    """
    measures = list(measures)
    if not measures:
        raise ParameterError("need at least one measure")
    gamma = measures[0].gamma
    check_moment(gamma, p)
    grid = measures[0].grid
    radii = sorted(float(r) for r in radii)
    cells = _radii_to_cells(grid, radii)
    keep = [i for i, k in enumerate(cells) if k >= MIN_CELLS]
    radii = [radii[i] for i in keep]
    cells = [cells[i] for i in keep]
    if len(radii) < 4 or radii[-1] / radii[0] < 8 * (1 - 1e-9):
        raise ParameterError("need at least 4 radii spanning 3 octaves above the grid floor")
    vals = np.array([box_moments(mu, p, cells) for mu in measures])
    return fit_loglog(radii, vals, seed)


def _disk_kernel(k: float, sub: int = 16) -> np.ndarray:
    """Fraction of each unit cell (centered on an integer offset) covered by the disk of radius ``k``."""
    n = int(math.ceil(k + 0.5))
    t = (np.arange(sub) + 0.5) / sub - 0.5
    u = (np.arange(-n, n + 1)[:, None] + t[None, :]).ravel()
    inside = (u[:, None] ** 2 + u[None, :] ** 2 < k * k).astype(float)
    w = inside.reshape(2 * n + 1, sub, 2 * n + 1, sub).mean(axis=(1, 3))
    keep = np.flatnonzero(w.sum(axis=1) > 0)
    return w[keep[0] : keep[-1] + 1, keep[0] : keep[-1] + 1]


def sup_ball_masses(measure: ChaosMeasureGrid, radii) -> np.ndarray:
    """``max_x M(B(x, r))`` over nodes ``x`` whose ball lies inside the grid.

    Cells cut by the circle count with the fraction of their area inside it.
    """
    h = measure.grid.spacing
    out = []
    for r in radii:
        conv = signal.fftconvolve(measure.cell_mass, _disk_kernel(r / h), mode="valid")
        out.append(float(conv.max()))
    return np.array(out)


def default_modulus_radii(grid: GridSpec) -> list[float]:
    h = grid.spacing
    radii = []
    k = MIN_CELLS
    while 2 * k + 1 <= (grid.resolution - 1) // 4:
        radii.append(k * h)
        k *= 2
    return radii


def estimate_modulus(measure: ChaosMeasureGrid, eps: float = 0.0, radii=None) -> ExponentEstimate:
    """Slope of ``log sup_x M(B(x, r))`` against ``log r``.

    The slope is expected to be at least ``2(1 - γ/2)² - eps``.
    """
    radii = default_modulus_radii(measure.grid) if radii is None else sorted(float(r) for r in radii)
    if len(radii) < 2:
        raise ParameterError("grid too small for a modulus fit")
    sups = sup_ball_masses(measure, radii)
    return fit_line(radii, sups)


def modulus_exponent(gamma: float) -> float:
    return 2.0 * (1.0 - 0.5 * gamma) ** 2


@dataclass(frozen=True)
class ScalingCheck:
    """Outcome of a scaling-relation test: ``ratio`` should be 1."""

    ratio: float
    stderr: float
    expected_exponent: float
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def scaling_relation(
    kernel: KernelSpec,
    gamma: float,
    lam: float,
    p: float,
    replicas: int = 200,
    seed: int = 0,
    resolution: int = 65,
) -> ScalingCheck:
    """Compare ``E[M_{λε}(λA)^p]`` with ``λ^{ξ_M(p)} E[M_ε(A)^p]`` for ``A = [0, 1)^2``.

    Both sides are sampled with the same seeds, so ``λ = 1`` reproduces the
    right side exactly; for ``λ < 1`` the two sides are positively correlated
    and the standard error uses the paired differences.
    """
    if kernel.variant != "wn-slice":
        raise PreconditionError(
            f"the scaling relation needs the exact scale invariant kernel 'wn-slice', got {kernel.variant!r}"
        )
    g = check_gamma(gamma)
    if not 0.0 < lam <= 1.0:
        raise ParameterError("lambda must lie in (0, 1]")
    check_moment(g, p)
    eps = kernel.eps_pair[0]
    if kernel.eps_pair[1] != eps:
        raise PreconditionError("the scaling relation needs a diagonal white-noise kernel (eps, eps)")
    big = GridSpec(1.0, resolution)
    small = GridSpec(lam, resolution)
    k_small = KernelSpec("wn-slice", eps_pair=(lam * eps, lam * eps))
    a = np.empty(replicas)
    b = np.empty(replicas)
    for j in range(replicas):
        for grid, ker, out in ((big, kernel, b), (small, k_small, a)):
            f = sample_kernel_field(ker, grid, seed, j, stream=(7,))
            mu = ChaosMeasureGrid(grid, 0, g, np.exp(log_density(f, g, ker.variance)) * grid.spacing**2)
            out[j] = mu.cell_mass[:-1, :-1].sum() ** p
    scale = lam ** xi_M(g, p)
    ratio = a.mean() / (scale * b.mean())
    # delta method for the ratio of two correlated means
    ma, mb = a.mean(), b.mean()
    cov = np.cov(np.vstack([a, b])) / replicas
    var = ratio**2 * (cov[0, 0] / ma**2 + cov[1, 1] / mb**2 - 2 * cov[0, 1] / (ma * mb))
    se = math.sqrt(max(var, 0.0))
    return ScalingCheck(float(ratio), se, xi_M(g, p), bool(abs(ratio - 1.0) <= 3.0 * se))


def check_scaling_relation(kernel: KernelSpec, gamma: float, lam: float, p: float, **kw) -> bool:
    """Exact-scaling test of ball-mass moments at ``3σ``; see :func:`scaling_relation`."""
    return bool(scaling_relation(kernel, gamma, lam, p, **kw))
