import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfde import ModelSpec, NonlinearitySpec, QWienerSpec
from sfde.measure_lab import (
    MeasureEstimate,
    ObservableFamily,
    TerminalSample,
    default_burn_in,
    ensemble_observables,
    feller_perturbation_test,
    homogeneity_test,
    invariance_experiment,
    invariance_test,
    krylov_bogoliubov_average,
    terminal_sample,
    tightness_diagnostic,
)

from _models import bounded_basis, linear_model, mode_state, ou_model


def _geometric_ou(N=8, J=8):
    b = bounded_basis(N=N, grid_points=32)
    return ModelSpec(b, QWienerSpec.geometric(b, J, 0.5), NonlinearitySpec.zero(),
                     NonlinearitySpec.constant(1.0), 1.0, 0.01)


def test_family_names_and_mask():
    fam = ObservableFamily(2)
    assert fam.names == ["mode1", "mode2", "mode1_sq", "mode2_sq", "norm_B0_sq", "norm_B1_sq",
                         "tanh_mode1", "tanh_mode2"]
    assert fam.bounded_mask.tolist() == [False] * 6 + [True] * 2
    with pytest.raises(ValueError):
        ObservableFamily(0)


def test_default_burn_in():
    assert default_burn_in(ou_model()) == pytest.approx(6.0)


def test_deterministic_model_has_zero_variance():
    m = linear_model(N=4)
    est = ensemble_observables(m, mode_state(m), 8, [7.0], seed=0)
    assert np.all(est.variance <= 1e-30)  # zero up to round-off in the centered sums


def test_ou_stationary_second_moment():
    m = ou_model()
    est = ensemble_observables(m, m.zero_state(), 2000, [7.0], seed=1, family=ObservableFamily(1))
    mean, se = est.get("mode1_sq")
    assert abs(mean - 0.5) <= 3 * se


def test_geometric_spectrum_norm():
    m = _geometric_ou()
    est = ensemble_observables(m, m.zero_state(), 1000, [7.0], seed=2)
    mean, se = est.get("norm_B0_sq")
    oracle = float(np.sum(m.noise.coefficients / (2 * m.basis.eigenvalues)))
    assert abs(mean - oracle) <= 3 * se


def test_sample_times_must_follow_burn_in():
    m = ou_model()
    with pytest.raises(ValueError, match="burn-in"):
        ensemble_observables(m, m.zero_state(), 10, [3.0], seed=0)


def test_merge_matches_single_run():
    rng = np.random.default_rng(0)
    fam = ObservableFamily(1)
    x = rng.standard_normal((300, len(fam.names)))
    whole = MeasureEstimate.from_samples(fam, x)
    merged = MeasureEstimate.from_samples(fam, x[:120]).merge(MeasureEstimate.from_samples(fam, x[120:]))
    assert merged.count == 300
    np.testing.assert_allclose(merged.mean, whole.mean, rtol=1e-13)
    np.testing.assert_allclose(merged.variance, whole.variance, rtol=1e-12)


@given(st.integers(2, 200), st.integers(1, 199), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_merge_associativity(n, k, seed):
    k = min(k, n - 1)
    fam = ObservableFamily(1)
    x = np.random.default_rng(seed).standard_normal((n, len(fam.names))) * 3 + 1
    parts = [MeasureEstimate.from_samples(fam, p) for p in np.array_split(x, [k // 2 + 1, k + 1]) if len(p)]
    left = parts[0]
    for p in parts[1:]:
        left = left.merge(p)
    whole = MeasureEstimate.from_samples(fam, x)
    np.testing.assert_allclose(left.mean, whole.mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(left.m2, whole.m2, rtol=1e-9, atol=1e-9)


def test_kb_transient_ou_matches_formula():
    m = ou_model()
    kb = krylov_bogoliubov_average(m, m.zero_state(), [5.0, 10.0, 20.0], 400, seed=0,
                                   family=ObservableFamily(1))
    vals = [e.get("mode1_sq")[0] for e in kb.estimates]
    # (1/T) int_0^T (1 - e^{-2t}) / 2 dt = 1/2 - (1 - e^{-2T}) / (4T)
    for T, v, e in zip(kb.horizons, vals, kb.estimates):
        oracle = 0.5 - (1 - math.exp(-2 * T)) / (4 * T)
        assert abs(v - oracle) <= 3 * e.get("mode1_sq")[1] + 0.005


def test_kb_deterministic_decay():
    m = linear_model(N=4)
    kb = krylov_bogoliubov_average(m, mode_state(m), [1.0, 5.0, 20.0], 2, seed=0, family=ObservableFamily(1),
                                   record_every=1)
    vals = [e.get("norm_B0_sq")[0] for e in kb.estimates]
    for T, v in zip(kb.horizons, vals):
        assert v == pytest.approx((1 - math.exp(-2 * T)) / (2 * T), rel=1e-4)
    assert vals[0] > vals[1] > vals[2]


def test_invariance_passes_and_is_symmetric():
    m = ou_model(N=2, a=(1.0, 0.5))
    rep, e1, e2 = invariance_experiment(m, m.zero_state(), 8.0, 400, seed=0)
    assert rep.passed
    assert invariance_test(e2, e1).passed == rep.passed
    assert invariance_test(e2, e1).worst_ratio == pytest.approx(rep.worst_ratio)


def test_invariance_negative_control():
    m = ou_model(N=2, a=(1.0, 0.5))
    start = mode_state(m, 1, 3.0)
    rep, _, _ = invariance_experiment(m, start, 0.5, 400, seed=0, burn_in=0.0)
    assert not rep.passed and rep.worst_ratio > 3


def test_invariance_deterministic_contraction():
    m = linear_model(N=4)
    rep, e1, e2 = invariance_experiment(m, mode_state(m), 40.0, 4, seed=0)
    assert rep.passed and np.all(np.abs(e1.mean) < 1e-8)


def test_homogeneity_ou_matches_analytic():
    m = ou_model()
    m0 = 4.0
    rep = homogeneity_test(m, mode_state(m, 1, 2.0), [0.0, 1.0, 2.0], 1.0, 1000, seed=0,
                           family=ObservableFamily(1))
    assert rep.passed
    oracle = math.exp(-2) * m0 + (1 - math.exp(-2)) / 2
    for est in rep.details["estimates"].values():
        o = est["observables"]["mode1_sq"]
        assert abs(o["mean"] - oracle) <= 3 * o["se"]


def test_homogeneity_zero_noise_bit_identical():
    m = linear_model(N=4)
    rep = homogeneity_test(m, mode_state(m), [0.0, 1.0, 2.0], 1.0, 4, seed=0)
    assert rep.details["bit_identical"] and rep.passed


def test_tightness_zero_ensemble():
    n, N = 50, 8
    z = np.zeros(n)
    rep = tightness_diagnostic(TerminalSample(z, z, z, np.zeros((n, N))), [0.1, 1.0, 10.0])
    assert rep.details["tail_fraction"] == [0.0, 0.0, 0.0] and rep.passed


def test_tightness_ou_and_high_modes():
    m = _geometric_ou()
    sample = terminal_sample(m, m.zero_state(), 7.0, 1000, seed=3)
    rep = tightness_diagnostic(sample, [0.25, 0.5, 1.0, 2.0])
    assert rep.passed and rep.details["chebyshev_consistent"]
    w = m.noise.coefficients / m.basis.eigenvalues
    oracle = w[4:].sum() / w.sum()
    est, se = rep.details["high_mode_energy_fraction"], rep.details["high_mode_energy_fraction_se"]
    assert est <= oracle + 3 * se


def test_feller_zero_perturbation():
    m = ou_model()
    rep = feller_perturbation_test(m, m.zero_state(), mode_state(m), [0.0], 1.0, 4, seed=0)
    assert rep.passed and rep.details["sup_E_diff_sq"] == [0.0]


def test_feller_linear_ratio_is_one():
    m = ou_model()
    rep = feller_perturbation_test(m, m.zero_state(), mode_state(m), [1.0, 0.5, 0.25], 2.0, 4, seed=0)
    np.testing.assert_allclose(rep.details["ratios"], 1.0, rtol=1e-12)


def test_feller_tanh_plateau(tanh):
    scales = [2.0 ** -j for j in range(7)]
    rep = feller_perturbation_test(tanh, mode_state(tanh), mode_state(tanh, 2, 1.0), scales, 2.0, 16, seed=0,
                                   record_every=10)
    assert rep.passed
    r = rep.details["ratios"]
    assert max(r) / min(r) < 1.5
