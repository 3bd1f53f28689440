import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh_tridiagonal

from sfde import DelaySegment, DomainSpec, Field, FullState, build_basis, norm_b, norm_b0, norm_b1
from sfde.spectral_domain import b0_norm_sq, delay_steps

from _models import bounded_basis


# ---------------------------------------------------------------- domain and basis

def test_eigenvalues_on_unit_pi():
    b = bounded_basis(N=3)
    np.testing.assert_allclose(b.eigenvalues, [1, 4, 9], rtol=1e-15)


def test_mode_one_midpoint_normalization():
    b = bounded_basis(N=1)
    assert b.evaluate(math.pi / 2)[0] == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert b.sup_norm == pytest.approx(0.7978845608, rel=1e-9)


def test_eigenvalues_length_two_match_finite_differences():
    b = bounded_basis(N=2, length=2.0)
    np.testing.assert_allclose(b.eigenvalues, [math.pi ** 2 / 4, math.pi ** 2], rtol=1e-14)
    n = 2000
    dx = 2.0 / n
    w = eigh_tridiagonal(np.full(n - 1, 2 / dx ** 2), np.full(n - 2, -1 / dx ** 2),
                         select="i", select_range=(0, 1))[0]
    np.testing.assert_allclose(w, b.eigenvalues, rtol=1e-5)


def test_discrete_orthonormality(basis16):
    np.testing.assert_allclose(basis16.gram, np.eye(16), atol=1e-12)


def test_supplied_spectrum_replaces_eigenvalues():
    b = bounded_basis(N=3, spectrum=[1.0, 1.0, 5.0])
    assert b.lambda1 == 1.0
    with pytest.raises(ValueError):
        bounded_basis(N=3, spectrum=[2.0, 1.0, 3.0])
    with pytest.raises(ValueError):
        bounded_basis(N=3, spectrum=[1.0, 2.0])


def test_aliasing_guard():
    with pytest.raises(ValueError, match="alias"):
        build_basis(DomainSpec(grid_points=16), 15)


@pytest.mark.parametrize("kwargs, fragment", [
    ({"kind": "whole_line_weighted", "weight_exponent": 1.0}, "r > d"),
    ({"kind": "whole_line_weighted", "weight_exponent": 1.5, "compare_weight_exponent": 1.0}, "r_bar"),
    ({"length": -1.0}, "length"),
    ({"weight_exponent": 2.0}, "bounded domains carry no weight"),
    ({"grid_points": 4}, "grid_points"),
])
def test_domain_violations(kwargs, fragment):
    with pytest.raises(ValueError, match=fragment):
        DomainSpec(**kwargs)


def test_all_violations_reported_together():
    with pytest.raises(ValueError) as e:
        DomainSpec(length=0.0, grid_points=3, weight_exponent=1.0)
    assert str(e.value).count(";") >= 2


# ---------------------------------------------------------------- norms

def test_unit_mode_and_zero_norms(basis16):
    assert norm_b0(Field.mode(basis16, 1)) == 1.0
    assert norm_b0(Field.zeros(basis16)) == 0.0


def test_whole_line_constant_norm():
    # int dx / (1 + x^2) over [-X, X] tends to pi
    X = 2000.0
    d = DomainSpec("whole_line_weighted", truncation_radius=X, grid_points=400_001, weight_exponent=2.0)
    u = Field(np.ones(d.grid_points), d, "grid")
    assert norm_b0(u) == pytest.approx(math.sqrt(2 * math.atan(X)), rel=1e-9)
    assert norm_b0(u) == pytest.approx(math.sqrt(math.pi), rel=2e-4)


def test_b1_norms(basis16):
    e1 = Field.mode(basis16, 1)
    assert norm_b1(DelaySegment.constant(e1, 1.0, 0.01)) == pytest.approx(1.0, rel=1e-14)
    assert norm_b1(DelaySegment.constant(Field.zeros(basis16), 1.0, 0.01)) == 0.0
    seg = DelaySegment.from_function(basis16, lambda th: e1 * math.exp(th), 1.0, 0.001)
    assert norm_b1(seg) == pytest.approx(math.sqrt((1 - math.exp(-2)) / 2), rel=1e-6)
    assert norm_b1(seg) == pytest.approx(0.65752, abs=1e-5)


def test_product_norm_examples(basis16):
    e1 = Field.mode(basis16, 1)
    zero = Field.zeros(basis16)
    # head e1 over a zero history except at theta = 0 contributes only a dt/2 sliver
    buf = np.zeros((101, 16))
    buf[-1] = e1.values
    y = FullState.from_history(DelaySegment(buf, 1.0, 0.01, basis16.domain))
    assert norm_b(y) == pytest.approx(math.sqrt(1 + 0.005), rel=1e-14)
    assert norm_b(FullState.from_history(DelaySegment.constant(zero, 1.0, 0.01))) == 0.0
    assert norm_b(FullState.from_history(DelaySegment.constant(e1, 1.0, 0.01))) == pytest.approx(math.sqrt(2))


def test_full_state_requires_head_match(basis16):
    seg = DelaySegment.constant(Field.mode(basis16, 1), 1.0, 0.1)
    with pytest.raises(ValueError):
        FullState(Field.mode(basis16, 2), seg)


# ---------------------------------------------------------------- delay segment

def test_delay_steps_divisibility():
    assert delay_steps(1.0, 0.01) == 100
    with pytest.raises(ValueError, match="does not divide"):
        delay_steps(1.0, 0.03)


def test_ring_buffer_shift_law(basis16):
    rng = np.random.default_rng(1)
    seg = DelaySegment(rng.standard_normal((11, 16)), 1.0, 0.1, basis16.domain)
    for _ in range(25):
        before = seg.ordered().copy()
        new = rng.standard_normal(16)
        seg.push(new)
        after = seg.ordered()
        np.testing.assert_array_equal(after[:-1], before[1:])
        np.testing.assert_array_equal(after[-1], new)
        np.testing.assert_array_equal(seg.newest, new)
        np.testing.assert_array_equal(seg.oldest, before[1])


def test_segment_rejects_non_finite(basis16):
    buf = np.zeros((11, 16))
    buf[3, 2] = np.nan
    with pytest.raises(ValueError):
        DelaySegment(buf, 1.0, 0.1, basis16.domain)


def test_segment_integral_is_trapezoid(basis16):
    seg = DelaySegment.from_function(basis16, lambda th: Field.mode(basis16, 2, th * th), 1.0, 0.01)
    assert seg.integral()[1] == pytest.approx(1 / 3, abs=1e-4)


# ---------------------------------------------------------------- properties

coeffs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=16, max_size=16)


@given(coeffs)
@settings(max_examples=50, deadline=None)
def test_parseval_matches_grid_quadrature(c):
    b = bounded_basis(N=16, grid_points=64)
    f = Field(np.array(c), b.domain)
    grid_sq = float(b0_norm_sq(f.grid_values(b), b.domain, "grid"))
    assert abs(math.sqrt(grid_sq) - norm_b0(f)) <= 1e-6 * max(1.0, norm_b0(f))


@given(coeffs, st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_product_norm_split(c, pushes):
    b = bounded_basis()
    rng = np.random.default_rng(pushes)
    seg = DelaySegment(rng.standard_normal((11, 16)), 1.0, 0.1, b.domain)
    for _ in range(pushes):
        seg.push(np.array(c) * rng.uniform())
    y = FullState.from_history(seg)
    lhs = norm_b(y) ** 2
    rhs = norm_b0(y.head) ** 2 + norm_b1(y.segment) ** 2
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)


@given(st.floats(-50, 50), st.floats(-50, 50), st.sampled_from([1.5, 2.0, 3.0, 4.5]))
@settings(max_examples=200, deadline=None)
def test_weight_ratio_bound(x, y, r):
    d = DomainSpec("whole_line_weighted", weight_exponent=r)
    ratio = float(d.weight(x) / d.weight(y))
    assert ratio <= 2 ** r * (1 + abs(x - y) ** r) * (1 + 1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_field_arithmetic_is_linear(a, s):
    b = bounded_basis(N=4)
    f = Field.mode(b, 1, a)
    g = Field.mode(b, 3, 1.0)
    np.testing.assert_allclose((f + g * s - f).values, (g * s).values, atol=1e-12)
