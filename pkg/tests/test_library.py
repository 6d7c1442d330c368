import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sindy_highnoise.errors import DegeneratePercentile, MismatchedLibrary
from sindy_highnoise.library import (
    SparseModel, build_polynomial_library, evaluate_library, library_without_variable,
    nearest_rank_percentile, parse_equation, parse_term, rescale_factors, rescaled_coefficients,
    variable_names,
)


def test_degree2_3d_order():
    lib = build_polynomial_library(3, 2)
    assert lib.term_names() == ["1", "x", "y", "z", "x^2", "x*y", "x*z", "y^2", "y*z", "z^2"]


@pytest.mark.parametrize("dim,deg", [(2, 3), (3, 2), (3, 3), (4, 2)])
def test_term_count(dim, deg):
    from math import comb
    assert build_polynomial_library(dim, deg).n_terms == comb(dim + deg, deg)
    assert build_polynomial_library(dim, deg, include_constant=False).n_terms == comb(dim + deg, deg) - 1


def test_evaluate_library_values():
    lib = build_polynomial_library(2, 2)
    theta = evaluate_library(lib, np.array([[2.0, 3.0]]))
    assert theta.tolist() == [[1, 2, 3, 4, 6, 9]]


def test_parse_roundtrip():
    lib = build_polynomial_library(3, 2)
    names = variable_names(3)
    for t in lib.terms:
        assert parse_term(t.name(names), names) == t
    row = parse_equation("-10 x + 10 y - 0.5 x*z", lib)
    assert row[lib.index(parse_term("x*z", names))] == -0.5
    with pytest.raises(MismatchedLibrary):
        parse_equation("2 x^3", lib)


def test_model_equations_roundtrip(rng):
    lib = build_polynomial_library(3, 2)
    coef = rng.normal(size=(3, lib.n_terms)) * (rng.random((3, lib.n_terms)) > 0.5)
    model = SparseModel(lib, coef)
    back = np.vstack([parse_equation(e.split("=", 1)[1], lib) for e in model.equations()])
    assert np.array_equal(back, model.coef)


def test_inactive_coefficients_zeroed():
    lib = build_polynomial_library(2, 1)
    active = np.array([[True, True, False], [False, True, True]])
    m = SparseModel(lib.with_active(active), np.ones((2, 3)))
    assert np.array_equal(m.nonzero(), active)


def test_library_without_variable():
    lib = build_polynomial_library(3, 2)
    out = library_without_variable(lib, 1)
    assert not out.active[1].any()
    for i, t in enumerate(lib.terms):
        assert out.active[0, i] == (not t.contains(1))


def test_nearest_rank_percentile():
    assert nearest_rank_percentile([5, 1, 3, 2, 4], 50) == 3
    assert nearest_rank_percentile([1, 2, 3, 4], 50) == 2
    assert nearest_rank_percentile([1, 2, 3, 4], 100) == 4
    assert nearest_rank_percentile([7], 0) == 7


def test_rescale_factors_oracle():
    theta = np.column_stack([np.ones(5), np.arange(1, 6.0), 10 * np.arange(1, 6.0)])
    rf = rescale_factors(theta, [True, True, True])
    assert rf.M == 3.0
    assert np.allclose(rf.v, [1 / 3, 1, 10])


def test_degenerate_percentile():
    theta = np.zeros((5, 3))
    theta[:, 0] = 1
    with pytest.raises(DegeneratePercentile):
        rescale_factors(theta, [True, True, True])


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_rescale_ordering_invariant_to_variable_units(scale, seed):
    """Rescaling a variable and inversely scaling its coefficients keeps the |v xi| ordering."""
    rng = np.random.default_rng(seed)
    lib = build_polynomial_library(2, 2)
    x = rng.normal(size=(200, 2)) + 1.0
    coef = rng.normal(size=(2, lib.n_terms))
    model = SparseModel(lib, coef)
    base = rescaled_coefficients(model, evaluate_library(lib, x))
    # x -> s x: a term with k powers of x scales by s^k; compensate in coef
    powers = lib.exponent_matrix[:, 0]
    scaled = SparseModel(lib, coef / scale**powers)
    other = rescaled_coefficients(scaled, evaluate_library(lib, x * [scale, 1.0]))
    for j in range(2):
        assert np.allclose(base[j] / base[j].max(), other[j] / other[j].max(), rtol=1e-8)
