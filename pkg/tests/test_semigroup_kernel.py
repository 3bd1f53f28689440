import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfde import DomainSpec, Field, build_basis
from sfde.semigroup_kernel import (
    apply_semigroup,
    gaussian_kernel,
    greens_function,
    hilbert_schmidt_norm_delay_op,
    verify_exponential_decay,
    verify_kernel_bound,
    verify_semigroup_law,
    verify_weighted_boundedness,
    verify_weighted_smoothing,
    weighted_smoothing_ratio,
)
from sfde.spectral_domain import norm_b0

from _models import bounded_basis


@pytest.fixture(scope="module")
def line():
    d = DomainSpec("whole_line_weighted", truncation_radius=20.0, grid_points=801, weight_exponent=2.0)
    return d, build_basis(d, 16)


def test_mode_decay(basis16):
    out = apply_semigroup(basis16, Field.mode(basis16, 1), 1.0)
    assert out.values[0] == pytest.approx(math.exp(-1), rel=1e-15)
    assert np.all(out.values[1:] == 0)


def test_identity_at_zero(basis16):
    f = Field(np.arange(16.0), basis16.domain)
    np.testing.assert_array_equal(apply_semigroup(basis16, f, 0.0).values, f.values)


def test_gaussian_convolution(line):
    d, b = line
    x = d.grid
    u = Field(np.exp(-x * x / 2) / math.sqrt(2 * math.pi), d, "grid")
    out = apply_semigroup(b, u, 0.5).values
    expected = np.exp(-x * x / 4) / math.sqrt(4 * math.pi)
    assert np.max(np.abs(out - expected)) < 1e-10


def test_greens_function_values(line, basis16):
    d, _ = line
    assert greens_function(d, None, 1.0, 0.3, 0.3) == pytest.approx(1 / math.sqrt(4 * math.pi))
    assert greens_function(d, None, 1.0, 0.0, 2.0) == pytest.approx(0.28209479 * math.exp(-1), rel=1e-8)
    g = greens_function(basis16.domain, basis16, 2.0, math.pi / 2, math.pi / 2)
    oracle = (2 / math.pi) * sum(math.exp(-2 * k * k) * math.sin(k * math.pi / 2) ** 2 for k in range(1, 200))
    assert g == pytest.approx(oracle, rel=1e-14)
    assert g == pytest.approx(0.086157, abs=1e-6)


def test_greens_symmetry(basis16):
    rng = np.random.default_rng(3)
    x, y = rng.uniform(0, math.pi, (2, 100))
    for t in (0.05, 0.5, 2.0):
        np.testing.assert_allclose(greens_function(basis16.domain, basis16, t, x, y),
                                   greens_function(basis16.domain, basis16, t, y, x), atol=1e-14)


def test_kernel_bound_whole_line_is_its_own_envelope(line):
    d, b = line
    rep = verify_kernel_bound(d, b, 1.0, seed=1)
    assert rep.passed
    assert rep.constants["C1"] == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-6)
    assert rep.constants["C2"] == pytest.approx(0.25, abs=0.01)


def test_kernel_bound_bounded(basis16):
    rep = verify_kernel_bound(basis16.domain, basis16, 1.0, seed=2)
    assert rep.passed
    assert 0.5 / math.sqrt(4 * math.pi) <= rep.constants["C1"] <= 2 / math.sqrt(4 * math.pi)


def test_weighted_smoothing(basis16, line):
    rep = verify_weighted_smoothing(basis16.domain, basis16, [0.1, 0.5, 1.0, 2.0])
    assert rep.passed and rep.worst_ratio <= 1 + 1e-6
    d, b = line
    rep = verify_weighted_smoothing(d, b, [0.01, 0.1, 1.0])
    assert rep.passed and math.isfinite(rep.worst_ratio)
    small = weighted_smoothing_ratio(d, b, 1e-6, np.linspace(-15, 15, 31))
    np.testing.assert_allclose(small, 1.0, atol=1e-4)


def test_weighted_boundedness(basis16, line):
    assert verify_weighted_boundedness(basis16.domain, basis16, 2.0).passed
    d, b = line
    rep = verify_weighted_boundedness(d, b, 1.0, trials=20)
    assert rep.passed and rep.worst_ratio < rep.constants["C_rho_bound"]


def test_semigroup_law(basis16, line):
    assert verify_semigroup_law(basis16, [(0.1, 0.2), (1.0, 2.5)]).worst_ratio <= 1e-12
    d, b = line
    assert verify_semigroup_law(b, [(0.1, 0.2), (0.5, 0.5)], trials=2).passed


def test_hilbert_schmidt_values():
    b = bounded_basis(N=16, spectrum=[float(k * k) for k in range(1, 17)])
    hs = hilbert_schmidt_norm_delay_op(b, 1.0, 0.5)
    oracle = sum((math.exp(-k * k) - math.exp(-2 * k * k)) / (2 * k * k) for k in range(1, 17))
    assert hs == pytest.approx(oracle, rel=1e-14)
    assert abs(hs - 0.11853) <= 1e-4
    one = bounded_basis(N=1)
    assert hilbert_schmidt_norm_delay_op(one, 3.0, 1.0) == pytest.approx((math.exp(-4) - math.exp(-6)) / 2)
    assert hilbert_schmidt_norm_delay_op(b, 1.0, 1e-8) < 1e-7
    with pytest.raises(ValueError):
        hilbert_schmidt_norm_delay_op(b, 0.9, 0.5)


def test_hilbert_schmidt_monotone():
    b = bounded_basis()
    h_grid = [0.1, 0.2, 0.4, 0.8]
    for T0 in (2.0, 3.0):
        vals = [hilbert_schmidt_norm_delay_op(b, T0, h) for h in h_grid]
        assert all(np.diff(vals) > 0)
    vals = [hilbert_schmidt_norm_delay_op(b, T0, 0.5) for T0 in (1.0, 1.5, 2.0, 4.0)]
    assert all(np.diff(vals) < 0)


def test_hilbert_schmidt_whole_line_finite(line):
    d, b = line
    hs = hilbert_schmidt_norm_delay_op(b, 1.0, 0.5, compare_exponent=0.5)
    assert 0 < hs < math.inf


def test_exponential_decay_examples(basis16):
    e1 = Field.mode(basis16, 1)
    assert norm_b0(apply_semigroup(basis16, e1, 1.0)) == pytest.approx(math.exp(-1), rel=1e-15)
    e2 = Field.mode(basis16, 2)
    assert norm_b0(apply_semigroup(basis16, e2, 1.0)) == pytest.approx(math.exp(-4), rel=1e-15)
    rep = verify_exponential_decay(basis16, trials=100)
    assert rep.passed


def test_report_json_shape(basis16):
    rep = verify_semigroup_law(basis16, [(0.1, 0.1)])
    d = json.loads(rep.to_json())
    assert set(d) >= {"check", "samples", "worst_ratio", "constants", "pass"}


@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_semigroup_law_property(t, s, seed):
    b = bounded_basis()
    phi = Field(np.random.default_rng(seed).standard_normal(16), b.domain)
    a = apply_semigroup(b, apply_semigroup(b, phi, s), t).values
    c = apply_semigroup(b, phi, t + s).values
    assert np.linalg.norm(a - c) <= 1e-12 * max(np.linalg.norm(c), 1e-300) + 1e-300


def test_gaussian_kernel_mass():
    x = np.linspace(-30, 30, 6001)
    w = np.full_like(x, x[1] - x[0])
    w[[0, -1]] *= 0.5
    assert float(gaussian_kernel(0.7, x) @ w) == pytest.approx(1.0, rel=1e-12)
