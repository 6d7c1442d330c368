import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sindy_highnoise.dynsys import get_system
from sindy_highnoise.errors import EvolutionFailed
from sindy_highnoise.evolve import (
    EvolutionLimits, FomSuite, compute_foms, evolve_model, histogram_corr, initial_condition_estimate,
)
from sindy_highnoise.library import SparseModel, build_polynomial_library


def test_ic_weighted_mean():
    vals = np.array([[1.0, 10.0], [3.0, 20.0], [100.0, 0.0]])
    w = np.array([[1.0, 0.0], [3.0, 1.0], [1.0, 1.0]])
    assert np.allclose(initial_condition_estimate(vals, w, 2), [2.5, 20.0])
    assert np.allclose(initial_condition_estimate(vals, None, 2, start=1), [51.5, 10.0])
    with pytest.raises(ValueError):
        initial_condition_estimate(vals, None, 3, start=1)


def test_evolve_matches_simulate(lorenz_clean):
    model = get_system("lorenz").true_model
    out = evolve_model(model, lorenz_clean.values[0], lorenz_clean.times[:500],
                       EvolutionLimits(rtol=1e-10, atol=1e-10))
    assert np.allclose(out, lorenz_clean.values[:500], atol=1e-5)


def test_evolution_failure_reports_partial():
    lib = build_polynomial_library(1, 2)
    coef = np.zeros((1, lib.n_terms))
    coef[0, 2] = 1.0
    with pytest.raises(EvolutionFailed) as err:
        evolve_model(SparseModel(lib, coef), [1.0], np.linspace(0, 2, 201))
    e = err.value
    assert e.reason == "diverged"
    assert 80 <= e.last_index <= 100
    assert np.all(np.isfinite(e.partial[: e.last_index + 1]))


def test_fom_self_comparison_identities(lorenz_clean):
    v = lorenz_clean.values
    f = compute_foms(v, v, v, np.full_like(v, 0.1), repeats=[v])
    assert f.stability == 0
    assert np.all(f.in_bounds_frac == 1)
    assert np.all(f.in_envelope_frac == 1)
    assert np.all(f.std_rel_err == 0)
    assert np.all(f.fft_power_corr == 1)
    assert np.all(f.hist_corr == 1)


def test_fom_std_error_sign(rng):
    ref = rng.normal(size=(500, 1))
    f = compute_foms(2 * ref, ref, ref, np.ones_like(ref))
    assert f.std_rel_err[0] == pytest.approx(1.0)
    assert f.fft_power_corr[0] == pytest.approx(1.0)


def test_constant_prediction_fails_envelope(lorenz_clean):
    v = lorenz_clean.values
    pred = np.broadcast_to(v.mean(axis=0), v.shape)
    f = compute_foms(pred, v, v, np.full_like(v, 0.01))
    assert np.all(f.in_envelope_frac < 0.1)
    assert np.all(f.std_rel_err == pytest.approx(-1.0))


def test_fom_dict_roundtrip():
    f = FomSuite(0.5, np.array([1.0]), np.array([0.3]), np.array([-0.1]), np.array([0.9]), np.array([0.8]))
    g = FomSuite.from_dict(f.to_dict())
    assert g.to_dict() == f.to_dict()
    bad = FomSuite.failed(2, "diverged")
    assert FomSuite.from_dict(bad.to_dict()).to_dict() == bad.to_dict()


def test_histogram_corr_identical():
    a = np.linspace(0, 1, 100)
    assert histogram_corr(a, a) == 1.0
    assert histogram_corr(np.ones(5), np.ones(5)) == 1.0


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-2, -0.1), x0=st.floats(-5, 5))
def test_linear_decay_property(a, x0):
    lib = build_polynomial_library(1, 1)
    model = SparseModel(lib, np.array([[0.0, a]]))
    t = np.linspace(0, 2, 51)
    out = evolve_model(model, [x0], t, EvolutionLimits(rtol=1e-10, atol=1e-12))
    assert np.allclose(out[:, 0], x0 * np.exp(a * t), atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-10, 10))
def test_foms_shift_invariant_correlations(seed, shift):
    rng = np.random.default_rng(seed)
    ref = np.cumsum(rng.normal(size=(300, 2)), axis=0)
    pred = ref + rng.normal(size=ref.shape)
    f = compute_foms(pred, ref, ref, np.ones_like(ref))
    g = compute_foms(pred + shift, ref + shift, ref + shift, np.ones_like(ref))
    assert np.allclose(f.fft_power_corr, g.fft_power_corr)
    assert np.allclose(f.std_rel_err, g.std_rel_err)
    assert np.allclose(f.in_envelope_frac, g.in_envelope_frac)
