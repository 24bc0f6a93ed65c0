import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plhom.errors import GrowthInfeasible
from plhom.nonlinearity import (check_nonlinearity, cubic, derivative_errors, growth_constants, is_sign_dissipative,
                                linear, lower_growth, min_derivative, polynomial, sample_grid,
                                semi_monotonicity_check, validate_exponents, zero)


def test_cubic_growth_constants():
    a1, a2, b = growth_constants(cubic())
    assert abs(a1 - 1) < 1e-12 and abs(a2 - 1) < 1e-12 and b == 0.0


def test_cubic_minus_linear_needs_beta():
    a1, a2, beta = growth_constants(cubic(1.0, -1.0))
    s = sample_grid()
    r = cubic(1.0, -1.0)(s) * s
    assert np.all(a1 * np.abs(s) ** 4 - beta <= r + 1e-9)
    assert np.all(r <= a2 * np.abs(s) ** 4 + beta + 1e-9)
    assert beta > 0


def test_wrong_exponent_is_infeasible():
    with pytest.raises(GrowthInfeasible):
        growth_constants(polynomial((0, 0, 0, 1), exponent=2.0))
    with pytest.raises(GrowthInfeasible):
        growth_constants(polynomial((0, -1)))


def test_zero_has_no_lower_growth():
    assert lower_growth(zero()) == (0.0, 0.0)


def test_semi_monotonicity():
    f = cubic(1.0, -1.0)
    assert abs(min_derivative(f) + 1.0) < 1e-12
    assert semi_monotonicity_check(f, 1.0)
    assert not semi_monotonicity_check(f, 0.5)


def test_sign_dissipative():
    assert is_sign_dissipative(cubic()) and is_sign_dissipative(linear())
    assert not is_sign_dissipative(cubic(1.0, -1.0))


def test_derivative_consistency_first_order():
    errs = derivative_errors(cubic(2.0, -1.0))
    assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5


@pytest.mark.parametrize("p, N, q1, q2, ok", [
    (2, 2, 4, 2, True), (2, 2, 1.5, 2, False), (2, 3, 6, 4, True), (2, 3, 7, 4, False),
    (2, 3, 6, 5, False), (3, 3, 3, 3, True), (3, 3, 8, 2, False), (2.5, 2, 4, 4, False)])
def test_validate_exponents(p, N, q1, q2, ok):
    assert validate_exponents(p, N, q1, q2).admissible_theorem is ok


def test_report_contents():
    rep = check_nonlinearity(cubic(), l=0.0)
    assert rep["growth"]["feasible"] and rep["semi_monotone"] and rep["odd_polynomial"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5), st.floats(-5, 5))
def test_primitive_derivative_roundtrip(coeffs, s):
    nl = polynomial(coeffs)
    h = 1e-4
    fd = (nl.primitive(s + h) - nl.primitive(s - h)) / (2 * h)
    assert abs(fd - nl.value(s)) <= 1e-5 * (1 + abs(nl.value(s)) + 5 ** len(coeffs))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.floats(0, 5), st.integers(1, 3))
def test_odd_polynomials_are_feasible(a, b, k):
    coeffs = [0.0] * (2 * k + 2)
    coeffs[1] = b
    coeffs[2 * k + 1] = a
    nl = polynomial(coeffs)
    a1, a2, beta = growth_constants(nl)
    assert a1 > 0 and a2 >= a1 and beta >= 0
