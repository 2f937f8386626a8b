import math

import numpy as np
import pytest
import scipy.fft as sfft
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from liouville.errors import DomainError, ParameterError, RepresentationError
from liouville.field_sampler import (
    FieldStack,
    GridSpec,
    _cached_plan,
    assemble,
    bilinear_variance,
    field_at,
    fields_at,
    interpolated_log_normalizer,
    make_plan,
    sample_kernel_field,
    sample_layer,
    sample_partial_sum,
    sample_stack,
)
from liouville.io import load_field, save_field
from liouville.kernels import KernelSpec, SimulationParams, eval_layer_cov


def _window_corr(a, b, torus):
    out = np.zeros(torus)
    w = len(a)
    np.add.at(out, np.arange(-(w - 1), w) % torus, np.correlate(a, b, mode="full"))
    return out


def plan_covariance(plan, p, q):
    """Exact covariance between output nodes p and q implied by an embedding plan."""
    C = sfft.fft2(plan.sqrt_eig**2).real
    W, T = plan.window, plan.torus
    if plan.interp is None:
        return C[(p[0] - q[0]) % T, (p[1] - q[1]) % T]
    A = plan.interp
    idx = np.arange(W)
    lag = (idx[:, None] - idx[None, :]) % T
    col = C @ _window_corr(A[p[1]], A[q[1]], T)
    return A[p[0]] @ col[lag] @ A[q[0]]


def test_exact_plan_covariance_without_interpolation():
    params = SimulationParams(truncation=8)
    grid = GridSpec(1.0, 129)
    k = params.layer_kernel(8)
    plan = make_plan(k, grid)
    assert plan.interp is None
    for lag in (0, 1, 5, 40):
        r = lag * grid.spacing
        assert plan_covariance(plan, (3, 7), (3 + lag, 7)) == pytest.approx(float(k(np.array([r]))[0]), abs=1e-7)


def test_exact_plan_covariance_with_interpolation():
    params = SimulationParams(truncation=8)
    grid = GridSpec(1.0, 129)
    k = params.layer_kernel(2)
    plan = make_plan(k, grid)
    assert plan.factor > 1
    for i in (0, 1, 2, 3, 64, 127):
        assert plan_covariance(plan, (i, 5), (i, 5)) == pytest.approx(math.log(2), abs=2e-3)
        for lag in (1, 10, 64):
            if i + lag < 129:
                ref = eval_layer_cov(params, 2, lag * grid.spacing)
                assert plan_covariance(plan, (i, 5), (i + lag, 5)) == pytest.approx(ref, abs=2e-3)


def test_layer_moments_monte_carlo():
    params = SimulationParams(truncation=4)
    grid = GridSpec(1.0, 33)
    n = 600
    y3 = np.array([sample_layer(params.layer_kernel(3), grid, 5, j)[[4, 20], 16] for j in range(n)])
    y2 = np.array([sample_layer(params.layer_kernel(2), grid, 5, j)[[0, 16], 16] for j in range(n)])
    # mean
    assert abs(y3[:, 0].mean()) < 4 * math.sqrt(math.log(2) / n)
    # lag-0 variance of layer 3 is ln 2
    v = y3[:, 0].var()
    assert abs(v - math.log(2)) < 4 * math.log(2) * math.sqrt(2 / n)
    # lag 0.5 covariance of layer 2
    c = np.mean(y2[:, 0] * y2[:, 1])
    ref = eval_layer_cov(params, 2, 0.5)
    assert abs(c - ref) < 4 * math.log(2) / math.sqrt(n)


def test_partial_sum_variance_and_independence():
    params = SimulationParams(truncation=4)
    grid = GridSpec(1.0, 33)
    n = 600
    x4, x3, y4 = [], [], []
    for j in range(n):
        s = sample_stack(params, grid, 9, j)
        x4.append(s.field(4)[10, 10])
        x3.append(s.field(3)[10, 10])
        y4.append(s.layers[3][10, 10])
    x4, x3, y4 = map(np.array, (x4, x3, y4))
    assert abs(x4.var() - 3 * math.log(2)) < 4 * 3 * math.log(2) * math.sqrt(2 / n)
    corr = np.corrcoef(x3, y4)[0, 1]
    assert abs(corr) < 4 / math.sqrt(n)
    assert stats.normaltest(x4).pvalue > 1e-3


def test_first_layer_is_zero():
    params = SimulationParams(truncation=3)
    s = sample_stack(params, GridSpec(1.0, 17), 0)
    assert np.all(s.field(1) == 0)


def test_layers_are_differences_bit_for_bit():
    params = SimulationParams(truncation=5)
    s = sample_stack(params, GridSpec(1.0, 33), 2, 3)
    for n in range(2, 6):
        assert np.array_equal(s.field(n) - s.field(n - 1), s.layers[n - 1])


def test_determinism_and_replica_streams():
    params = SimulationParams(truncation=4)
    grid = GridSpec(1.0, 33)
    a = sample_stack(params, grid, 17, 4).partial_sums
    b = sample_stack(params, grid, 17, 4).partial_sums
    c = sample_stack(params, grid, 17, 5).partial_sums
    d = sample_stack(params, grid, 18, 4).partial_sums
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_partial_sum_law():
    params = SimulationParams(truncation=6)
    grid = GridSpec(1.0, 65)
    vals = np.array([sample_partial_sum(params, grid, 6, 1, j).field(6)[32, 32] for j in range(500)])
    assert abs(vals.var() - 5 * math.log(2)) < 4 * 5 * math.log(2) * math.sqrt(2 / 500)


def test_mismatched_layers_rejected():
    with pytest.raises(ParameterError):
        assemble([np.zeros((4, 4)), np.zeros((5, 5))], GridSpec(1.0, 4), SimulationParams(truncation=2))


def test_periodic_plan_and_unrepresentable_kernel():
    grid = GridSpec(1.0, 32, periodic=True)
    f = sample_kernel_field(KernelSpec("wn-slice", eps_pair=(0.2, 0.2)), GridSpec(4.0, 64, periodic=True), 0)
    assert f.shape == (64, 64)
    # the wn-slice kernel wraps around a torus of side 1: its circulant spectrum goes negative
    with pytest.raises(RepresentationError, match="not representable"):
        make_plan(KernelSpec("wn-slice", eps_pair=(0.3, 0.3)), grid)
    with pytest.raises(ParameterError):
        make_plan(KernelSpec("massive-green"), grid)


def test_interpolation_examples():
    params = SimulationParams(truncation=3)
    grid = GridSpec(1.0, 17)
    s = sample_stack(params, grid, 1)
    f = s.field(3)
    h = grid.spacing
    assert field_at(s, 3, (3 * h, 5 * h)) == f[3, 5]
    mid = field_at(s, 3, (3.5 * h, 5.5 * h))
    assert mid == pytest.approx(f[3:5, 5:7].mean(), abs=1e-14)
    with pytest.raises(DomainError):
        field_at(s, 3, (1.5, 0.2))


def test_interpolated_variance_at_nodes():
    params = SimulationParams(truncation=5)
    grid = GridSpec(1.0, 33)
    s = sample_stack(params, grid, 0)
    pts = np.array([[0.25, 0.5], [0.0, 0.0]])
    assert np.allclose(interpolated_log_normalizer(s, 5, pts), math.log(16), atol=1e-12)


def test_interpolation_error_refines_as_h_squared():
    """Bilinear interpolation of a smooth layer: RMS error decays like h² under refinement."""
    params = SimulationParams(truncation=3)
    fine = GridSpec(1.0, 513)
    f = sample_layer(params.layer_kernel(2), fine, 3)
    s_fine = FieldStack(fine, None, f[None], 0, params, 0, (2,))
    pts = np.random.default_rng(0).uniform(0.1, 0.9, (2000, 2))
    truth = fields_at(s_fine, 2, pts)
    steps = np.array([16, 8, 4, 2])
    rms = []
    for step in steps:
        g = GridSpec(1.0, 512 // step + 1)
        coarse = FieldStack(g, None, f[::step, ::step][None].copy(), 0, params, 0, (2,))
        rms.append(np.sqrt(np.mean((fields_at(coarse, 2, pts) - truth) ** 2)))
    slope = np.polyfit(np.log(steps), np.log(rms), 1)[0]
    assert 1.5 < slope < 2.5


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 3.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_bilinear_variance_bounds(tx, ty, c0, a, b):
    """Interpolated variance lies between the smallest lag covariance and c0, with equality at nodes."""
    c1 = c0 * a
    c2 = c1 * b
    v = float(bilinear_variance(c0, c1, c2, np.array(tx), np.array(ty)))
    assert c2 - 1e-12 <= v <= c0 + 1e-12


def test_snapshot_round_trip(tmp_path):
    params = SimulationParams(gamma=0.5, truncation=4)
    s = sample_stack(params, GridSpec.centered(0.5, 1 / 16), 3, 1)
    path = tmp_path / "f.bin"
    save_field(s, path)
    t = load_field(path)
    assert t.grid == s.grid
    assert np.array_equal(t.partial_sums, s.partial_sums)
    assert np.array_equal(t.layers, s.layers)
    assert (t.seed, t.replica, t.params.schedule) == (s.seed, s.replica, params.schedule)
    with open(path, "rb") as fh:
        assert fh.readline().startswith(b"{")


def test_plan_cache_reuses_plan():
    k = SimulationParams(truncation=4).layer_kernel(3)
    g = GridSpec(1.0, 33)
    assert _cached_plan(k, g, 16) is _cached_plan(k, g, 16)
