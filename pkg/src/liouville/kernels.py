"""Covariance kernels and Green functions.

Two evaluation routes live side by side. The scalar ``eval_*`` functions
compute each kernel from its defining integral by adaptive quadrature. The
vectorized :class:`KernelSpec` profiles use closed forms in terms of modified
Bessel functions and are what the samplers call; the two routes are checked
against each other in the test suite.

Closed forms used by the vectorized route (``K0``, ``K1`` modified Bessel):

* massive Green function        ``G_m(r) = K0(m r)``
* seed kernel                   ``k_m(r) = m r K1(m r)``
* layer between scales lo < hi  ``K0(m lo r) - K0(m hi r)``
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import DomainError, ParameterError

VARIANTS = (
    "massive-green",
    "k-seed",
    "layer",
    "wn-slice",
    "log-plus",
    "exact-scale-invariant",
)
SINGULAR_VARIANTS = ("massive-green", "log-plus", "exact-scale-invariant")

_QUAD_EPSABS = 1e-14
_QUAD_EPSREL = 1e-13
_EXP_CUTOFF = 745.0  # exp(-745) underflows to zero
# K0(16) ~ 3e-8: beyond 16 decay lengths the Bessel kernels are dropped
NEGLIGIBLE_DECAY_LENGTHS = 16.0


def _check_mass(m: float) -> None:
    if not (m > 0 and math.isfinite(m)):
        raise ParameterError(f"mass must be positive, got {m!r}")


def _log_quad(f, lo: float, hi: float, peak: float) -> float:
    points = [peak] if lo < peak < hi else None
    val, _ = integrate.quad(
        f, lo, hi, points=points, epsabs=_QUAD_EPSABS, epsrel=_QUAD_EPSREL, limit=400
    )
    return val


def eval_massive_green(m: float, r: float) -> float:
    """Massive Green function ``int_0^inf exp(-(m^2/2)u - r^2/(2u)) du/(2u)``.

    After ``t = m^2 u / 2`` and ``t = e^s`` the integrand is
    ``exp(-e^s - a e^-s) / 2`` with ``a = (m r)^2 / 4``, which is smooth and
    decays doubly exponentially at both ends.
    """
    _check_mass(m)
    if r < 0:
        raise DomainError(f"distance must be nonnegative, got {r!r}")
    if r == 0:
        raise DomainError("log singularity: the massive Green function diverges at r = 0")
    a = 0.25 * (m * r) ** 2
    log_a = math.log(a)
    peak = 0.5 * log_a
    hi = math.log(_EXP_CUTOFF)
    lo = log_a - hi
    return 0.5 * _log_quad(lambda s: math.exp(-math.exp(s) - a * math.exp(-s)), lo, hi, peak)


def eval_k_seed(m: float, r: float) -> float:
    """Seed kernel ``k_m(r) = 1/2 int_0^inf exp(-(m^2/(2v)) r^2 - v/2) dv``.

    With ``v = 2 e^s`` the integrand becomes ``exp(s - e^s - b e^-s)``,
    ``b = (m r)^2 / 4``.
    """
    _check_mass(m)
    if r < 0:
        raise DomainError(f"distance must be nonnegative, got {r!r}")
    hi = math.log(_EXP_CUTOFF)
    if r == 0:
        return _log_quad(lambda s: math.exp(s - math.exp(s)), -40.0, hi, 0.0)
    b = 0.25 * (m * r) ** 2
    log_b = math.log(b)
    peak = math.log1p(math.sqrt(1.0 + 4.0 * b)) - math.log(2.0)
    lo = min(log_b - hi, -40.0)
    return _log_quad(lambda s: math.exp(s - math.exp(s) - b * math.exp(-s)), lo, hi, peak)


def _seed_closed(m: float, z: np.ndarray) -> np.ndarray:
    x = m * np.asarray(z, dtype=float)
    out = np.ones_like(x)
    nz = x > 0
    out[nz] = x[nz] * special.k1(x[nz])
    return out


def eval_wn_slice_cov(eps: float, eps_prime: float, r: float) -> float:
    """Covariance of the white-noise decomposition at cut-offs ``eps, eps_prime``."""
    for e in (eps, eps_prime):
        if not (0 < e <= 1):
            raise ParameterError(f"cut-off must lie in (0, 1], got {e!r}")
    if r < 0:
        raise DomainError(f"distance must be nonnegative, got {r!r}")
    return float(_wn_slice(max(eps, eps_prime), np.asarray([r], dtype=float))[0])


def _wn_slice(e: float, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    mid = (r >= e) & (r <= 2.0)
    out[mid] = np.log(2.0 / r[mid])
    low = r < e
    out[low] = math.log(2.0 / e) + 2.0 * (1.0 - np.sqrt(r[low] / e))
    return out


def eval_disk_green(R: float, x: Sequence[float], y: Sequence[float]) -> float:
    """Green function of the ball ``B(0, R)`` normalized by ``Delta G = -2 delta``.

    In complex notation ``G_R(x, y) = (1/pi) ln(|R^2 - x conj(y)| / (R |x - y|))``.
    """
    if not R > 0:
        raise ParameterError(f"radius must be positive, got {R!r}")
    zx = complex(x[0], x[1])
    zy = complex(y[0], y[1])
    tol = R * (1.0 + 1e-12)
    if abs(zx) > tol or abs(zy) > tol:
        raise DomainError("points must lie in the closed ball of radius R")
    d = abs(zx - zy)
    if d == 0:
        raise DomainError("singularity: the Green function diverges at x = y")
    val = math.log(abs(R * R - zx * zy.conjugate()) / (R * d)) / math.pi
    return max(val, 0.0)


def disk_green_array(R: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized ball Green function for broadcastable arrays of points ``(..., 2)``."""
    zx = x[..., 0] + 1j * x[..., 1]
    zy = y[..., 0] + 1j * y[..., 1]
    num = np.abs(R * R - zx * np.conj(zy))
    den = R * np.abs(zx - zy)
    with np.errstate(divide="ignore"):
        out = np.log(num / den) / np.pi
    return np.maximum(out, 0.0)


def check_scale_bound(m: float, x: Sequence[float], y: Sequence[float], eps: float) -> bool:
    """Whether ``G_m(x, y) <= G_m(x/eps, y/eps) + ln(1/eps)`` within 1e-8."""
    if not (0 < eps <= 1):
        raise ParameterError(f"eps must lie in (0, 1], got {eps!r}")
    r = math.hypot(x[0] - y[0], x[1] - y[1])
    lhs = eval_massive_green(m, r)
    rhs = eval_massive_green(m, r / eps) + math.log(1.0 / eps)
    return lhs <= rhs + 1e-8


@dataclass(frozen=True)
class SimulationParams:
    """Coupling, mass and scale schedule ``c_1 = 1 < c_2 < ... < c_N``."""

    gamma: float = 0.0
    mass: float = 1.0
    truncation: int = 8
    schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (0.0 <= self.gamma < 2.0):
            raise ParameterError(f"gamma must lie in [0, 2), got {self.gamma!r}")
        _check_mass(self.mass)
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise ParameterError(f"truncation must be a positive integer, got {self.truncation!r}")
        if self.schedule is None:
            object.__setattr__(
                self, "schedule", tuple(2.0 ** (n - 1) for n in range(1, self.truncation + 1))
            )
        sched = tuple(float(c) for c in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if len(sched) != self.truncation:
            raise ParameterError("schedule length must equal the truncation")
        if sched[0] != 1.0:
            raise ParameterError("schedule must start at c_1 = 1")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ParameterError("schedule must be strictly increasing")

    def c(self, n: int) -> float:
        """Scale ``c_n``; ``c_0`` is taken equal to ``c_1 = 1``."""
        if n < 0 or n > self.truncation:
            raise ParameterError(f"level {n} outside 0..{self.truncation}")
        return 1.0 if n == 0 else self.schedule[n - 1]

    def log_c(self, n: int) -> float:
        return math.log(self.c(n))

    def layer_kernel(self, n: int) -> "KernelSpec":
        if not 1 <= n <= self.truncation:
            raise ParameterError(f"layer index {n} outside 1..{self.truncation}")
        return KernelSpec("layer", self.mass, layer_index=n, scale_bounds=(self.c(n - 1), self.c(n)))

    def partial_sum_kernel(self, n: int) -> "KernelSpec":
        """Covariance of ``X_n``: one layer spanning scales ``c_0 .. c_n``."""
        if not 1 <= n <= self.truncation:
            raise ParameterError(f"level {n} outside 1..{self.truncation}")
        return KernelSpec("layer", self.mass, layer_index=n, scale_bounds=(1.0, self.c(n)))


@dataclass(frozen=True)
class KernelSpec:
    """A radial covariance kernel.

    ``scale_bounds`` holds ``(c_lo, c_hi)`` for the layer variant; the kernel of
    a partial sum ``X_n`` is the layer spanning ``(1, c_n)``.
    """

    variant: str
    mass: float = 1.0
    layer_index: int | None = None
    eps_pair: tuple[float, float] | None = None
    scale_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown kernel variant {self.variant!r}")
        _check_mass(self.mass)
        if self.variant == "layer":
            if self.layer_index is not None and self.layer_index < 1:
                raise ParameterError("layer_index must be >= 1")
            if self.scale_bounds is None:
                raise ParameterError("layer variant needs scale_bounds")
            lo, hi = self.scale_bounds
            if not (0 < lo <= hi):
                raise ParameterError(f"invalid scale bounds {self.scale_bounds!r}")
        if self.variant == "wn-slice":
            if self.eps_pair is None:
                raise ParameterError("wn-slice variant needs eps_pair")
            for e in self.eps_pair:
                if not (0 < e <= 1):
                    raise ParameterError(f"cut-off must lie in (0, 1], got {e!r}")

    @property
    def singular(self) -> bool:
        return self.variant in SINGULAR_VARIANTS

    @property
    def variance(self) -> float:
        """Value at lag zero (``inf`` for the log-singular variants)."""
        return float(self(np.zeros(1))[0])

    @property
    def correlation_scales(self) -> tuple[float, float]:
        """(smoothness length, range beyond which the kernel is negligible)."""
        m = self.mass
        if self.variant == "layer":
            lo, hi = self.scale_bounds
            return 1.0 / (m * hi), NEGLIGIBLE_DECAY_LENGTHS / (m * lo)
        if self.variant == "k-seed":
            return 1.0 / m, NEGLIGIBLE_DECAY_LENGTHS / m
        if self.variant == "wn-slice":
            return max(self.eps_pair), 2.0
        if self.variant == "massive-green":
            return 0.0, NEGLIGIBLE_DECAY_LENGTHS / m
        scale = 1.0 if self.variant == "log-plus" else 2.0
        return 0.0, scale

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        m = self.mass
        v = self.variant
        if v == "massive-green":
            with np.errstate(divide="ignore"):
                return np.where(r > 0, special.k0(m * r), np.inf)
        if v == "k-seed":
            return _seed_closed(m, r)
        if v == "layer":
            lo, hi = self.scale_bounds
            out = np.full_like(r, math.log(hi / lo))
            nz = r > 0
            out[nz] = special.k0(m * lo * r[nz]) - special.k0(m * hi * r[nz])
            return out
        if v == "wn-slice":
            return _wn_slice(max(self.eps_pair), r)
        scale = 1.0 if v == "log-plus" else 2.0
        with np.errstate(divide="ignore"):
            return np.maximum(np.log(scale / r), 0.0)

    def gram(self, points: np.ndarray, self_distance: float = 1e-6) -> np.ndarray:
        """Gram matrix on a point set.

        Singular variants are evaluated on the diagonal at ``self_distance``
        (capped below the smallest pairwise distance).
        """
        p = np.asarray(points, dtype=float)
        d = np.hypot(p[:, None, 0] - p[None, :, 0], p[:, None, 1] - p[None, :, 1])
        if self.singular:
            off = d[~np.eye(len(p), dtype=bool)]
            delta = self_distance
            if off.size:
                delta = min(delta, 0.5 * off.min())
            d = d.copy()
            np.fill_diagonal(d, delta)
        return self(d)

    def table(self, r_max: float | None = None, nodes_per_efold: int = 64) -> "RadialTable":
        return RadialTable.from_kernel(self, r_max=r_max, nodes_per_efold=nodes_per_efold)


def eval_layer_cov(params: SimulationParams, n: int, r: float) -> float:
    """Layer covariance ``int_{c_{n-1}}^{c_n} k_m(u r) / u du`` by quadrature."""
    if not 1 <= n <= params.truncation:
        raise ParameterError(f"layer index {n} outside 1..{params.truncation}")
    if r < 0:
        raise DomainError(f"distance must be nonnegative, got {r!r}")
    lo, hi = params.c(n - 1), params.c(n)
    if hi == lo:
        return 0.0
    if r == 0:
        return math.log(hi / lo)
    m = params.mass
    # integrate in log u: int k_m(e^s r) ds over [ln lo, ln hi]
    val, _ = integrate.quad(
        lambda s: float(_seed_closed(m, np.array(math.exp(s) * r))),
        math.log(lo),
        math.log(hi),
        epsabs=_QUAD_EPSABS,
        epsrel=_QUAD_EPSREL,
        limit=200,
    )
    return val


@dataclass(frozen=True)
class RadialTable:
    """Piecewise cubic interpolation of a radial kernel in ``log r``.

    Nodes are geometric from ``r_min`` to ``r_max`` with kernel break points
    as segment ends; below ``r_min`` the lag-zero value is returned and above
    ``r_max`` the table is zero.
    """

    r_nodes: np.ndarray
    values: np.ndarray
    r_max: float
    value_at_zero: float
    _segments: tuple = field(repr=False, compare=False, default=())

    @classmethod
    def from_kernel(
        cls, kernel: KernelSpec, r_max: float | None = None, nodes_per_efold: int = 64
    ) -> "RadialTable":
        if kernel.singular:
            raise ParameterError("lookup tables need a kernel finite at r = 0")
        smooth, decay = kernel.correlation_scales
        if r_max is None:
            r_max = 2.0 if kernel.variant == "wn-slice" else 2.5 * decay
        r_min = 1e-14 * smooth if kernel.variant == "wn-slice" else 1e-5 * smooth
        breaks = [r_min]
        if kernel.variant == "wn-slice":
            breaks.append(max(kernel.eps_pair))
        breaks.append(r_max)
        breaks = sorted(set(b for b in breaks if r_min <= b <= r_max))
        segments = []
        all_r, all_v = [], []
        for a, b in zip(breaks, breaks[1:]):
            k = max(8, int(math.ceil(nodes_per_efold * math.log(b / a))))
            r = np.geomspace(a, b, k + 1)
            v = kernel(r)
            segments.append((a, b, CubicSpline(np.log(r), v)))
            all_r.append(r)
            all_v.append(v)
        return cls(
            r_nodes=np.concatenate(all_r),
            values=np.concatenate(all_v),
            r_max=float(r_max),
            value_at_zero=float(kernel(np.zeros(1))[0]),
            _segments=tuple(segments),
        )

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        r_min = self._segments[0][0]
        out[r < r_min] = self.value_at_zero
        for a, b, spline in self._segments:
            sel = (r >= a) & (r <= b)
            if sel.any():
                out[sel] = spline(np.log(r[sel]))
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "value"])
            w.writerow([repr(0.0), repr(self.value_at_zero)])
            for r, v in zip(self.r_nodes, self.values):
                w.writerow([repr(float(r)), repr(float(v))])
