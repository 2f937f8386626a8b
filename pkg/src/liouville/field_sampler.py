"""Gaussian layer synthesis on regular grids.

Layers are sampled by circulant embedding. A layer whose covariance varies on
length ``1/(m c_n)`` and decays on ``1/(m c_{n-1})`` is synthesized on its own
embedding torus: spacing ``h * 2**k`` fine enough to resolve the smoothness
length, side long enough for the decay length, then mapped onto the target
nodes by cubic convolution (exact at shared nodes). Fine layers are sampled
on the target grid directly. Without this a coarse layer would need a torus of
tens of correlation lengths at the finest spacing.

Each FFT yields two independent fields (real and imaginary parts), so
replicas ``2p`` and ``2p + 1`` share the stream ``(seed, p, stream)``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import DomainError, ParameterError, RepresentationError
from .kernels import KernelSpec, SimulationParams

POINTS_PER_LENGTH = 16
EIGEN_TOL = 1e-6  # negative circulant eigenvalues allowed relative to the largest
CHOLESKY_MAX_NODES = 64 * 64
CLIP_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``resolution`` points per side.

    Non-periodic grids span ``[origin, origin + extent]`` inclusive; periodic
    grids tile a torus of side ``extent``.
    """

    extent: float
    resolution: int
    periodic: bool = False
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.extent > 0:
            raise ParameterError(f"extent must be positive, got {self.extent!r}")
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise ParameterError(f"resolution must be an integer >= 2, got {self.resolution!r}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def centered(cls, half_width: float, spacing: float) -> "GridSpec":
        """Non-periodic grid on ``[-half_width, half_width]^2`` with nodes at multiples of ``spacing``."""
        k = int(math.ceil(half_width / spacing - 1e-9))
        return cls(2 * k * spacing, 2 * k + 1, False, (-k * spacing, -k * spacing))

    @property
    def spacing(self) -> float:
        if self.periodic:
            return self.extent / self.resolution
        return self.extent / (self.resolution - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    def axis(self, dim: int) -> np.ndarray:
        return self.origin[dim] + self.spacing * np.arange(self.resolution)

    def contains(self, p) -> bool:
        if self.periodic:
            return True
        x, y = p[0] - self.origin[0], p[1] - self.origin[1]
        return 0.0 <= x <= self.extent and 0.0 <= y <= self.extent

    def to_dict(self) -> dict:
        return {
            "extent": self.extent,
            "resolution": self.resolution,
            "periodic": self.periodic,
            "origin": list(self.origin),
        }


def _keys_weights(t: np.ndarray) -> np.ndarray:
    """Cubic convolution weights (a = -1/2) for nodes at offsets -1, 0, 1, 2."""
    a = -0.5
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    w = np.where(
        d <= 1,
        (a + 2) * d**3 - (a + 3) * d**2 + 1,
        a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a,
    )
    return w


def _interp_matrix(m: int, factor: int, n_coarse: int) -> np.ndarray:
    """Map coarse nodes (index -1 .. n_coarse-2) to the ``m`` target nodes."""
    i = np.arange(m)
    base = i // factor
    t = (i % factor) / factor
    w = _keys_weights(t)
    A = np.zeros((m, n_coarse))
    for k in range(4):
        A[i, base + k] += w[:, k]
    return A


@dataclass(frozen=True)
class EmbeddingPlan:
    factor: int
    window: int
    torus: int
    spacing: float
    sqrt_eig: np.ndarray = field(repr=False)
    interp: np.ndarray | None = field(repr=False, default=None)
    method: str = "circulant"
    min_eig_ratio: float = 0.0

    @property
    def node_variance(self) -> float:
        if self.method == "cholesky":
            return float(np.sum(self.sqrt_eig**2, axis=1).mean())
        return float(np.sum(self.sqrt_eig**2))


def _circulant_eigs(kernel, torus: int, spacing: float) -> np.ndarray:
    i = np.arange(torus)
    d = np.minimum(i, torus - i) * spacing
    c = kernel(np.hypot(d[:, None], d[None, :]))
    return sfft.fft2(c).real


def _cholesky_plan(kernel, grid: GridSpec) -> EmbeddingPlan:
    m = grid.resolution
    ax = grid.spacing * np.arange(m)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    cov = kernel(d)
    evals, evecs = np.linalg.eigh(cov)
    if evals.min() < -CLIP_TOL * np.trace(cov):
        raise RepresentationError("covariance not representable at this resolution")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    return EmbeddingPlan(1, m, m, grid.spacing, root, None, "cholesky", float(evals.min() / evals.max()))


def make_plan(kernel: KernelSpec, grid: GridSpec, points_per_length: int = POINTS_PER_LENGTH) -> EmbeddingPlan:
    """Choose spacing and torus size for one kernel on one grid."""
    if kernel.singular:
        raise ParameterError(f"cannot sample the singular kernel {kernel.variant!r} on a grid")
    table = kernel.table()
    h = grid.spacing
    m = grid.resolution
    if grid.periodic:
        lam = _circulant_eigs(table, m, h)
        ratio = lam.min() / lam.max()
        if ratio < -EIGEN_TOL:
            raise RepresentationError(
                "covariance not representable at this resolution "
                f"(min/max circulant eigenvalue {ratio:.3g})"
            )
        sq = np.sqrt(np.clip(lam, 0.0, None) / m**2)
        return EmbeddingPlan(1, m, m, h, sq, None, "circulant", float(ratio))

    smooth, reach = kernel.correlation_scales
    factor = 1
    while 2 * factor * h <= smooth / points_per_length and 2 * factor < m:
        factor *= 2
    spacing = factor * h
    if factor == 1:
        window, interp = m, None
    else:
        window = (m - 1) // factor + 4
        interp = _interp_matrix(m, factor, window)
    # lags up to the window stay exact as long as the wrap-around lag exceeds the reach
    need = window + int(math.ceil(reach / spacing))
    torus = sfft.next_fast_len(need)
    for attempt in range(2):
        lam = _circulant_eigs(table, torus, spacing)
        ratio = lam.min() / lam.max()
        if ratio >= -EIGEN_TOL:
            sq = np.sqrt(np.clip(lam, 0.0, None) / torus**2)
            return EmbeddingPlan(factor, window, torus, spacing, sq, interp, "circulant", float(ratio))
        torus = sfft.next_fast_len(2 * torus)
    if factor == 1 and m * m <= CHOLESKY_MAX_NODES:
        return _cholesky_plan(table, grid)
    raise RepresentationError(
        f"covariance not representable at this resolution (min/max eigenvalue {ratio:.3g})"
    )


@lru_cache(maxsize=64)
def _cached_plan(kernel: KernelSpec, grid: GridSpec, points_per_length: int) -> EmbeddingPlan:
    return make_plan(kernel, grid, points_per_length)


def _rng(seed: int, pair: int, stream: tuple[int, ...]) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(pair),) + tuple(stream))
    return np.random.Generator(np.random.PCG64(ss))


def _synthesize_pair(plan: EmbeddingPlan, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if plan.method == "cholesky":
        z = rng.standard_normal((2, plan.sqrt_eig.shape[1]))
        out = z @ plan.sqrt_eig.T
        return out[0].reshape(plan.window, plan.window), out[1].reshape(plan.window, plan.window)
    t = plan.torus
    z = rng.standard_normal((2, t, t))
    w = plan.sqrt_eig * (z[0] + 1j * z[1])
    f = sfft.fft2(w, overwrite_x=True)
    win = f[: plan.window, : plan.window]
    re, im = np.ascontiguousarray(win.real), np.ascontiguousarray(win.imag)
    if plan.interp is not None:
        A = plan.interp
        re = A @ re @ A.T
        im = A @ im @ A.T
    return re, im


class _PairCache:
    """Keeps the most recent synthesized pairs so replica ``2p + 1`` reuses ``2p``."""

    def __init__(self, size: int = 48):
        self.size = size
        self.store: OrderedDict = OrderedDict()

    def get(self, key, make):
        if key in self.store:
            self.store.move_to_end(key)
            return self.store[key]
        value = make()
        self.store[key] = value
        if len(self.store) > self.size:
            self.store.popitem(last=False)
        return value


_pair_cache = _PairCache()


def sample_kernel_field(
    kernel: KernelSpec,
    grid: GridSpec,
    seed: int,
    replica: int = 0,
    stream: tuple[int, ...] = (0,),
    points_per_length: int = POINTS_PER_LENGTH,
) -> np.ndarray:
    """One centered Gaussian field with covariance ``kernel`` on ``grid``."""
    plan = _cached_plan(kernel, grid, points_per_length)
    pair, part = divmod(int(replica), 2)
    key = (kernel, grid, points_per_length, int(seed), pair, tuple(stream))
    re, im = _pair_cache.get(key, lambda: _synthesize_pair(plan, _rng(seed, pair, stream)))
    return (re if part == 0 else im).copy()


def sample_layer(kernel: KernelSpec, grid: GridSpec, seed: int, replica: int = 0) -> np.ndarray:
    """Sample one layer ``Y_n``; the layer index selects the random stream."""
    if kernel.variant == "layer":
        lo, hi = kernel.scale_bounds
        if lo == hi:
            return np.zeros(grid.shape)
    stream = (int(kernel.layer_index or 0),)
    return sample_kernel_field(kernel, grid, seed, replica, stream)


@dataclass(frozen=True)
class FieldStack:
    """Layers ``Y_n`` and partial sums ``X_n`` on one grid.

    ``levels[i]`` is the level of ``partial_sums[i]``. A stack synthesized
    directly at one level (see :func:`sample_partial_sum`) has no layers.
    """

    grid: GridSpec
    layers: np.ndarray | None
    partial_sums: np.ndarray
    seed: int
    params: SimulationParams
    replica: int = 0
    levels: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.levels:
            object.__setattr__(self, "levels", tuple(range(1, len(self.partial_sums) + 1)))
        self.partial_sums.flags.writeable = False
        if self.layers is not None:
            self.layers.flags.writeable = False

    @property
    def truncation(self) -> int:
        return max(self.levels)

    def field(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(self.grid.shape)
        try:
            return self.partial_sums[self.levels.index(n)]
        except ValueError:
            raise ParameterError(f"level {n} not present in this stack (levels {self.levels})") from None

    def log_scale(self, n: int) -> float:
        return self.params.log_c(n)

    def lag_covariances(self, n: int) -> tuple[float, float, float]:
        """Covariance of ``X_n`` at lags ``0, h, sqrt(2) h``."""
        if n == 0 or self.params.c(n) == 1.0:
            return (0.0, 0.0, 0.0)
        h = self.grid.spacing
        k = self.params.partial_sum_kernel(n)
        c = k(np.array([0.0, h, math.sqrt(2.0) * h]))
        return (float(c[0]), float(c[1]), float(c[2]))


def assemble(layers, grid: GridSpec, params: SimulationParams, seed: int = 0, replica: int = 0) -> FieldStack:
    """Partial sums of independent layers.

    Stored layers are recomputed as differences of consecutive partial sums so
    that ``X_n - X_{n-1} == Y_n`` holds bit for bit.
    """
    arrs = [np.asarray(a, dtype=float) for a in layers]
    if not arrs:
        raise ParameterError("need at least one layer")
    for a in arrs:
        if a.shape != grid.shape:
            raise ParameterError(f"layer shape {a.shape} does not match grid {grid.shape}")
    raw = np.stack(arrs)
    sums = np.cumsum(raw, axis=0)
    diffs = np.empty_like(sums)
    diffs[0] = sums[0]
    diffs[1:] = sums[1:] - sums[:-1]
    return FieldStack(grid, diffs, sums, int(seed), params, int(replica))


def sample_stack(
    params: SimulationParams,
    grid: GridSpec,
    seed: int,
    replica: int = 0,
    truncation: int | None = None,
) -> FieldStack:
    """All layers ``Y_1 .. Y_N`` for one replica and their partial sums."""
    n_max = params.truncation if truncation is None else truncation
    layers = [sample_layer(params.layer_kernel(n), grid, seed, replica) for n in range(1, n_max + 1)]
    return assemble(layers, grid, params, seed, replica)


def layer_groups(params: SimulationParams, grid: GridSpec, n: int) -> list[tuple[int, int]]:
    """Consecutive layers ``2..n`` sharing an embedding plan, as (first, last)."""
    groups: list[tuple[int, int]] = []
    prev = None
    for k in range(2, n + 1):
        if params.c(k - 1) == params.c(k):
            continue
        plan = _cached_plan(params.layer_kernel(k), grid, POINTS_PER_LENGTH)
        sig = (plan.factor, plan.window)
        if groups and sig == prev:
            groups[-1] = (groups[-1][0], k)
        else:
            groups.append((k, k))
        prev = sig
    return groups


def sample_partial_sum(params: SimulationParams, grid: GridSpec, n: int, seed: int, replica: int = 0) -> FieldStack:
    """Synthesize ``X_n`` alone, merging layers that share an embedding plan.

    Equal in law to the level-``n`` partial sum of :func:`sample_stack` but not
    the same realization for a given seed.
    """
    total = np.zeros(grid.shape)
    for first, last in layer_groups(params, grid, n):
        k = KernelSpec("layer", params.mass, layer_index=last, scale_bounds=(params.c(first - 1), params.c(last)))
        total += sample_kernel_field(k, grid, seed, replica, stream=(1000 + first, last))
    return FieldStack(grid, None, total[None], int(seed), params, int(replica), (n,))


def field_at(stack: FieldStack, n: int, p) -> float:
    """Bilinear interpolation of ``X_n`` at point ``p``."""
    v = fields_at(stack, n, np.asarray(p, dtype=float)[None, :])
    return float(v[0])


def _cell_coords(grid: GridSpec, pts: np.ndarray):
    h = grid.spacing
    m = grid.resolution
    u = (pts[:, 0] - grid.origin[0]) / h
    v = (pts[:, 1] - grid.origin[1]) / h
    if grid.periodic:
        u = np.mod(u, m)
        v = np.mod(v, m)
        i0 = np.floor(u).astype(np.intp)
        j0 = np.floor(v).astype(np.intp)
        i0 = np.minimum(i0, m - 1)
        j0 = np.minimum(j0, m - 1)
        return i0, j0, u - i0, v - j0, (i0 + 1) % m, (j0 + 1) % m
    eps = 1e-9
    if np.any((u < -eps) | (v < -eps) | (u > m - 1 + eps) | (v > m - 1 + eps)):
        raise DomainError("point outside the grid extent")
    u = np.clip(u, 0.0, m - 1)
    v = np.clip(v, 0.0, m - 1)
    i0 = np.minimum(np.floor(u).astype(np.intp), m - 2)
    j0 = np.minimum(np.floor(v).astype(np.intp), m - 2)
    return i0, j0, u - i0, v - j0, i0 + 1, j0 + 1


def fields_at(stack: FieldStack, n: int, pts: np.ndarray) -> np.ndarray:
    """Vectorized bilinear interpolation of ``X_n`` at points ``(k, 2)``."""
    f = stack.field(n)
    i0, j0, tx, ty, i1, j1 = _cell_coords(stack.grid, pts)
    return (
        (1 - tx) * (1 - ty) * f[i0, j0]
        + tx * (1 - ty) * f[i1, j0]
        + (1 - tx) * ty * f[i0, j1]
        + tx * ty * f[i1, j1]
    )


def bilinear_variance(c0: float, c1: float, c2: float, tx: np.ndarray, ty: np.ndarray) -> np.ndarray:
    """Variance of a bilinear interpolant of a stationary field from its lag covariances."""
    w00 = (1 - tx) * (1 - ty)
    w10 = tx * (1 - ty)
    w01 = (1 - tx) * ty
    w11 = tx * ty
    return (
        c0 * (w00**2 + w10**2 + w01**2 + w11**2)
        + 2 * c1 * (w00 * w10 + w00 * w01 + w10 * w11 + w01 * w11)
        + 2 * c2 * (w00 * w11 + w10 * w01)
    )


def interpolated_log_normalizer(stack: FieldStack, n: int, pts: np.ndarray) -> np.ndarray:
    """Variance of the interpolated ``X_n`` at each point; equals ``ln c_n`` at nodes."""
    _, _, tx, ty, _, _ = _cell_coords(stack.grid, pts)
    c0, c1, c2 = stack.lag_covariances(n)
    return bilinear_variance(c0, c1, c2, tx, ty)


def inside_mask(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    if grid.periodic:
        return np.ones(len(pts), dtype=bool)
    u = pts[:, 0] - grid.origin[0]
    v = pts[:, 1] - grid.origin[1]
    return (u >= 0) & (v >= 0) & (u <= grid.extent) & (v <= grid.extent)
