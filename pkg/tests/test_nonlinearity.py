import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parapot.nonlinearity import E_ell, ExpNonlinearity, g_ell, truncate, truncate_primitive


def test_E1_at_one():
    assert E_ell(1.0, 1) == pytest.approx(math.e - 1, rel=1e-15)


def test_E3_small_leading_term():
    s = 1e-3
    assert E_ell(s, 3) == pytest.approx(s ** 3 / 6 * (1 + s / 4 + s * s / 20), rel=1e-12)


def test_E2_tiny_no_cancellation():
    assert E_ell(1e-8, 2) == pytest.approx(5.0000000166666668e-17, rel=1e-12)


def test_g_examples():
    nl = ExpNonlinearity(1.0, 1.0, 1)
    assert g_ell(0.0, nl) == 0.0
    assert g_ell(-1.0, nl) == pytest.approx(math.e - 1)
    assert g_ell(1.0, nl) <= 0.5 * g_ell(2.0, nl)


def test_truncations():
    assert truncate(0.0, 1.0) == 0.0 and truncate_primitive(0.0, 1.0) == 0.0
    assert truncate(5.0, 2.0) == 2.0
    assert truncate_primitive(5.0, 2.0) == pytest.approx(8.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 10))
def test_truncate_odd(s, k):
    assert truncate(-s, k) == -truncate(s, k)
    assert truncate_primitive(-s, k) == truncate_primitive(s, k)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 3.0), st.floats(0.2, 2.0), st.floats(1.0, 3.0), st.integers(1, 4))
def test_eps_scaling(eps, s, a, q, ell):
    nl = ExpNonlinearity(a, q, ell)
    lhs = g_ell(s, nl)
    rhs = eps ** nl.lq * g_ell(s / eps, nl)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5))
def test_g_even_and_signed_odd(u):
    nl = ExpNonlinearity(1.0, 2.0, 2)
    assert g_ell(u, nl) == g_ell(-u, nl)
    assert nl.signed(-u) == -nl.signed(u)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ExpNonlinearity(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        ExpNonlinearity(1.0, 0.5, 1)
    with pytest.raises(ValueError):
        ExpNonlinearity.for_source(1.0, 1.0, 1)


def test_derivative_matches_difference():
    nl = ExpNonlinearity(0.7, 1.5, 2)
    for u in (0.3, 1.1, -0.8):
        h = 1e-6
        fd = (nl.signed(u + h) - nl.signed(u - h)) / (2 * h)
        assert nl.derivative(u) == pytest.approx(fd, rel=1e-5)
