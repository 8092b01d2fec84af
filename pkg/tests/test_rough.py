import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import i0, i0e

from msexit import (ExitProblemSpec, RoughPotentialSpec, TorusGrid, averaged_coefficients,
                    conditional_exit_stats, conditioned_drift, gibbs_constants, j_bar_nested,
                    langevin_coefficients, scale_speed_functions, simulate_conditioned_ensemble)
from msexit.errors import ConfigurationError, PreconditionError, SingularIntegrandError
from msexit.fields import Polynomial, TrigPolynomial
from msexit.rough import scale_distance
from msexit.sde import UPPER

from oracles import gibbs_pair, richardson_simpson

WELL = Polynomial((0.0, 0.0, 0.5))
FLAT = TrigPolynomial()
COS = TrigPolynomial(0.0, (1.0,))


def rough(Q=FLAT, D=1.0, V=WELL, lo=0.5, hi=2.0, x0=1.0):
    return RoughPotentialSpec(V, Q, D, ExitProblemSpec(lo, hi, "upper"), x0)


def test_spec_preconditions():
    with pytest.raises(PreconditionError):
        rough(lo=-0.5)
    with pytest.raises(PreconditionError):
        rough(V=Polynomial((0.0, 1.0, -0.1)), lo=0.5, hi=2.0)
    with pytest.raises(ConfigurationError):
        RoughPotentialSpec(WELL, FLAT, 1.0, ExitProblemSpec(0.5, 2.0, "lower"), 1.0)
    with pytest.raises(ConfigurationError):
        rough(x0=2.5)
    r = rough()
    assert (r.rare_endpoint, r.x_rare) == ("upper", 2.0)


def test_gibbs_constants_flat():
    K, Kh, e = gibbs_constants(rough(TrigPolynomial(period=2.0)))
    assert (K, Kh, e) == pytest.approx((2.0, 2.0, 1.0), abs=1e-14)


def test_gibbs_constants_cosine():
    # the Gibbs constants of a cosine ripple are modified Bessel values
    K, Kh, e = gibbs_constants(rough(COS, D=1.0))
    assert K == pytest.approx(i0(1.0), abs=1e-12) and Kh == pytest.approx(i0(1.0), abs=1e-12)
    assert e == pytest.approx(i0(1.0) ** 2, abs=1e-12)
    K, Kh, e = gibbs_constants(rough(COS, D=0.5))
    assert K == pytest.approx(2.2795853023360673, abs=1e-10)
    assert e == pytest.approx(i0(2.0) ** 2, abs=1e-10)
    oK, oKh = gibbs_pair(COS, 0.5)
    assert abs(K - oK) < 1e-8 and abs(Kh - oKh) < 1e-8


def test_gibbs_constants_need_resolution():
    with pytest.raises(ConfigurationError):
        gibbs_constants(rough(COS), TorusGrid(1.0, 64))


def test_enhancement_bound_random_ripples():
    rng = np.random.default_rng(5)
    for _ in range(100):
        Q = TrigPolynomial.random(rng, order=5, scale=1.5)
        _, _, e = gibbs_constants(rough(Q, D=float(rng.uniform(0.3, 2.0))))
        assert e >= 1.0 - 1e-12


def test_enhancement_survives_deep_ripples():
    # e**300 overflows term by term; the constants themselves are representable
    K, _, e = gibbs_constants(rough(TrigPolynomial(0.0, (300.0,)), D=1.0))
    log_i0 = math.log(i0e(300.0)) + 300.0
    assert math.log(K) == pytest.approx(log_i0, rel=1e-12)
    assert math.log(e) == pytest.approx(2.0 * log_i0, rel=1e-12)


def test_flat_conditional_stats():
    T, var = conditional_exit_stats(rough())
    assert T == pytest.approx(math.log(2.0), abs=1e-12)
    assert var == pytest.approx(0.75, abs=1e-12)


def test_enhancement_scales_variance():
    T0, v0 = conditional_exit_stats(rough())
    T1, v1 = conditional_exit_stats(rough(COS, D=1.0))
    e = i0(1.0) ** 2
    assert T1 == pytest.approx(e * T0, rel=1e-12)
    assert v1 == pytest.approx(e**2 * v0, rel=1e-12)


def test_classical_small_noise_variance():
    V = Polynomial((0.0, 0.0, 0.5, 0.0, 0.25))
    T, var = conditional_exit_stats(rough(V=V, D=0.7))
    dV = lambda z: z + z**3  # noqa: E731
    assert T == pytest.approx(richardson_simpson(lambda z: 1 / dV(z), 1.0, 2.0), rel=1e-10)
    assert var == pytest.approx(1.4 * richardson_simpson(lambda z: dV(z) ** -3, 1.0, 2.0),
                                rel=1e-10)


def test_variance_decreases_in_start_point():
    v = [conditional_exit_stats(rough(x0=x))[1] for x in np.linspace(0.6, 1.9, 14)]
    assert all(b < a for a, b in zip(v, v[1:]))


def test_singular_integrand():
    # V' vanishes inside the range only if the precondition is bypassed
    r = rough()
    object.__setattr__(r, "x0", -0.5)
    with pytest.raises(SingularIntegrandError):
        conditional_exit_stats(r)


@pytest.mark.parametrize("Q", [TrigPolynomial(0.0, (), (1.0, 0.5)),
                               TrigPolynomial(0.0, (0.5,), (1.0,))])
def test_nested_extra_drift_matches_cell_solver(Q):
    r = rough(Q, D=1.0)
    c = langevin_coefficients(lambda x: x, Q.derivative(), 1.0)
    grid = TorusGrid(1.0, 512)
    xs = np.array([0.7, 1.3, 1.9])
    nested = j_bar_nested(r, xs)
    for x, j in zip(xs, nested):
        assert abs(averaged_coefficients(c, 1, float(x), grid).J_bar - j) < 1e-6


def _direct_h_ratio(eps, D, x, anchor=0.0):
    # independent evaluation of 2 eps D h(x) / int_anchor^x h with h = exp(V/(eps D))
    y = np.linspace(anchor, x, 200_001)
    lh = y**2 / 2 / (eps * D)
    w = np.exp(lh - lh[-1])
    return 2 * eps * D / np.trapezoid(w, y)


def test_conditioned_drift_flips_sign():
    xs = np.linspace(0.8, 1.9, 12)
    err = {}
    for eps in (0.1, 0.01):
        d = conditioned_drift(rough(), eps, None, xs)
        ref = -xs + np.array([_direct_h_ratio(eps, 1.0, x) for x in xs])
        assert np.max(np.abs(d - ref)) < 5e-4 * np.max(np.abs(ref))
        err[eps] = np.max(np.abs(d / xs - 1.0))
    assert err[0.01] < err[0.1] / 5.0 and err[0.01] < 0.05


def test_h_transform_pushes_against_the_flow():
    xs = np.linspace(0.5, 2.0, 50)
    for eps in (0.2, 0.05, 0.01):
        extra = conditioned_drift(rough(), eps, None, xs) + xs
        assert np.all(extra > 0)


def test_conditioned_paths_reach_rare_endpoint():
    res = simulate_conditioned_ensemble(rough(), 0.01, None, 1e-3, seed=9, n_paths=1000)
    assert np.mean(res.endpoint == UPPER) >= 0.99
    # the exit time concentrates at int dy / V' = ln 2
    assert abs(np.mean(res.tau[res.endpoint == UPPER]) - math.log(2.0)) < 0.03


def _direct_scale_speed(eps, D, xg, lo, anchor=0.0):
    y = np.linspace(anchor, xg[-1], 400_001)
    h = np.exp(y**2 / 2 / (eps * D))
    H = np.concatenate([[0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) * np.diff(y))])
    Hx = np.interp(xg, y, H)
    u = 1 / np.interp(lo, y, H) - 1 / Hx
    w = np.where(y >= lo, H**2 / h, 0.0)
    W = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(y))])
    return u, np.interp(xg, y, W) / (eps * D)


def test_scale_speed_against_direct_quadrature():
    r = rough()
    xg = np.linspace(0.5, 2.0, 31)
    ss = scale_speed_functions(r, 0.5, None, xg)
    u, v = _direct_scale_speed(0.5, 1.0, xg, 0.5)
    assert np.max(np.abs(ss.u - u)) < 1e-5 * np.max(u)
    assert np.max(np.abs(ss.v - v)) < 2e-3 * np.max(v)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.02, 0.5), st.sampled_from([None, 1e-2, 1e-3]), st.floats(0.3, 1.5))
def test_scale_and_speed_strictly_increase(eps, delta, D):
    r = rough(TrigPolynomial(0.0, (0.5,), (0.3,)), D=D)
    ss = scale_speed_functions(r, eps, delta, np.linspace(0.5, 2.0, 101))
    # u saturates in floating point once H(x) dwarfs H(lower)
    assert np.all(np.diff(ss.u) >= 0) and np.all(np.diff(ss.u[:10]) > 0)
    assert np.all(np.diff(ss.v) > 0)
    assert ss.u[0] == 0.0 and ss.v[0] == 0.0


def test_scale_distance_decreases_along_delta():
    d = scale_distance(rough(COS, D=1.0), 0.05, [1e-2, 1e-3, 1e-4])
    assert d[0] > d[1] > d[2]
