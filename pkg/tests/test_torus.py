import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msexit import (PeriodicField, TorusGrid, antiderivative_on_period, cell_average,
                    periodic_derivative, spectral_antiderivative, spectral_derivative)
from msexit.errors import DomainError, InvalidFieldError
from msexit.fields import TrigPolynomial

from oracles import richardson_simpson

TWO_PI = 2.0 * math.pi


def field(func, n=256, period=1.0):
    return PeriodicField.from_function(TorusGrid(period, n), func)


def trig_strategy():
    coef = st.floats(-2.0, 2.0, allow_nan=False)
    return st.builds(lambda c0, a, b: TrigPolynomial(c0, tuple(a), tuple(b)),
                     coef, st.lists(coef, min_size=1, max_size=4),
                     st.lists(coef, min_size=1, max_size=4))


def test_grid_rejects_bad_sizes():
    with pytest.raises(InvalidFieldError):
        TorusGrid(1.0, 4)
    with pytest.raises(InvalidFieldError):
        TorusGrid(-1.0, 64)


def test_non_finite_samples_rejected():
    g = TorusGrid(1.0, 16)
    with pytest.raises(InvalidFieldError):
        PeriodicField(g, np.full(16, np.nan))


def test_cell_average_constant_and_cosine():
    assert cell_average(field(lambda y: np.ones_like(y))) == pytest.approx(1.0, abs=1e-15)
    assert abs(cell_average(field(lambda y: np.cos(TWO_PI * y / 2.5), period=2.5))) < 1e-14


def test_cell_average_exp_cos_matches_refined_quadrature():
    ref = richardson_simpson(lambda y: np.exp(np.cos(TWO_PI * y)), 0.0, 1.0)
    assert cell_average(field(lambda y: np.exp(np.cos(TWO_PI * y)))) == pytest.approx(ref, abs=1e-12)


def test_periodic_derivative_of_constant_is_zero():
    d = periodic_derivative(field(lambda y: np.full_like(y, 3.7)))
    assert np.max(np.abs(d.values)) < 1e-12


def test_periodic_derivative_second_order():
    errs = []
    for n in (64, 128, 256):
        f = field(lambda y: np.sin(TWO_PI * y), n)
        exact = TWO_PI * np.cos(TWO_PI * f.grid.nodes)
        errs.append(np.max(np.abs(periodic_derivative(f).values - exact)))
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=0.02)


def test_antiderivative_examples():
    f = field(lambda y: np.cos(TWO_PI * y))
    assert antiderivative_on_period(f, 0.0) == 0.0
    assert abs(antiderivative_on_period(f, 1.0)) < 1e-12
    one = field(lambda y: np.ones_like(y), period=3.0)
    assert antiderivative_on_period(one, 1.5) == pytest.approx(1.5, abs=1e-14)
    with pytest.raises(DomainError):
        antiderivative_on_period(f, 1.5)
    with pytest.raises(DomainError):
        antiderivative_on_period(f, -0.1)


def test_linear_interpolation_wraps():
    f = field(lambda y: np.sin(TWO_PI * y), 64)
    assert f(1.25) == pytest.approx(f(0.25), abs=1e-15)
    assert f(-0.75) == pytest.approx(f(0.25), abs=1e-15)


def test_spectral_pair_is_exact_for_trig_polynomials():
    Q = TrigPolynomial(0.4, (1.0, 0.3), (0.2, -0.5))
    f = field(Q, 64)
    d = spectral_derivative(f)
    assert np.max(np.abs(d.values - Q.derivative()(f.grid.nodes))) < 1e-11
    back = spectral_antiderivative(d)
    assert np.max(np.abs(back.values - (f.values - 0.4))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(trig_strategy(), trig_strategy(), st.floats(-3, 3), st.floats(-3, 3))
def test_cell_average_is_linear(P, Q, a, b):
    f, g = field(P, 128), field(Q, 128)
    lhs = cell_average(a * f + b * g)
    rhs = a * cell_average(f) + b * cell_average(g)
    assert abs(lhs - rhs) < 1e-12 * (1 + abs(a) + abs(b)) * 10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=200))
def test_derivative_telescopes(values):
    f = PeriodicField(TorusGrid(1.0, len(values)), values)
    assert abs(cell_average(periodic_derivative(f))) < 1e-12 * max(1.0, max(map(abs, values)))


@settings(max_examples=50, deadline=None)
@given(trig_strategy(), st.sampled_from([0.5, 1.0, 2.0]))
def test_full_period_antiderivative_is_period_times_mean(Q, period):
    Q = TrigPolynomial(Q.const, Q.cos, Q.sin, period)
    f = field(Q, 256, period)
    assert antiderivative_on_period(f, period) == pytest.approx(
        period * cell_average(f), abs=1e-12)
