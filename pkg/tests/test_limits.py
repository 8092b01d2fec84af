import math

import numpy as np
import pytest

from msexit import (ExitLawPrediction, LimitCoefficients, LimitProcessSpec, TorusGrid,
                    classify_regime, effective_flow, exit_law_projection, homogenize,
                    langevin_coefficients, limit_fluctuation_moments, simulate_limit_ou)
from msexit.errors import ConfigurationError, TangencyError, UnsupportedRegimeError
from msexit.fields import TrigPolynomial
from msexit.sde import InitialPerturbation

from oracles import gibbs_pair, ou_variance

NOISE_ONLY = classify_regime(0.01, 2.0)      # ell = inf
J_ONLY = classify_regime(0.0001, 1.25)       # ell = 0
BOTH = classify_regime(0.01, 1.5)            # ell = 1


def linear_traj(a, t=1.0, x0=1.0, step=1e-3):
    return effective_flow(lambda x: -a * x, x0, t, step, jacobian=lambda x: -a + 0.0 * x)


def test_constant_extra_drift_only():
    traj = effective_flow(lambda x: 0.0 * x, 0.0, 2.0, 1e-2)
    spec = LimitProcessSpec(LimitCoefficients.constant(J=0.7), J_ONLY, traj)
    for t in (0.5, 1.3, 2.0):
        mean, var = limit_fluctuation_moments(spec, t)
        assert mean == pytest.approx(0.7 * t, abs=1e-12) and var == 0.0


def test_stationary_ou_variance():
    spec = LimitProcessSpec(LimitCoefficients.constant(q=1.5), NOISE_ONLY, linear_traj(0.8, 2.0))
    for t in (0.25, 1.0, 1.777):
        mean, var = limit_fluctuation_moments(spec, t)
        assert mean == 0.0
        assert var == pytest.approx(ou_variance(0.8, 1.5, t), rel=1e-9)


def test_langevin_variance_matches_refined_quadrature():
    D = 0.5
    Q = TrigPolynomial(0.0, (1.0,))
    coeffs = langevin_coefficients(lambda x: x, Q.derivative(), D)
    model = homogenize(coeffs, np.linspace(-0.5, 1.5, 41), TorusGrid(1.0, 256))
    traj = effective_flow(model, 1.0, 1.0, 1e-3)
    spec = LimitProcessSpec.from_model(model, NOISE_ONLY, traj)
    K, Kh = gibbs_pair(Q, D)
    kappa = 1.0 / (K * Kh)
    # Phi = exp(-kappa t) and q_bar = 2 D kappa, so the variance is D (1 - exp(-2 kappa))
    _, var = limit_fluctuation_moments(spec, 1.0)
    assert var == pytest.approx(D * (1.0 - math.exp(-2.0 * kappa)), rel=1e-7)


def test_missing_tables_rejected():
    traj = linear_traj(1.0)
    with pytest.raises(ConfigurationError):
        LimitProcessSpec(LimitCoefficients(), NOISE_ONLY, traj)
    with pytest.raises(ConfigurationError):
        LimitProcessSpec(LimitCoefficients.constant(q=1.0), BOTH, traj)


def test_trajectory_must_come_from_model():
    coeffs = langevin_coefficients(lambda x: x, lambda y: 0.0 * y, 1.0)
    model = homogenize(coeffs, np.linspace(0.0, 1.0, 5), TorusGrid(1.0, 64))
    with pytest.raises(ConfigurationError):
        LimitProcessSpec.from_model(model, NOISE_ONLY, linear_traj(1.0))


def test_all_inactive_gives_zero_samples():
    traj = linear_traj(1.0)
    spec = LimitProcessSpec(LimitCoefficients.constant(J=0.0), J_ONLY, traj)
    assert np.all(simulate_limit_ou(spec, 1.0, 100, seed=1) == 0.0)


def test_ou_samples_match_moments():
    spec = LimitProcessSpec(LimitCoefficients.constant(q=2.0, J=0.5), BOTH, linear_traj(1.2))
    mean, var = limit_fluctuation_moments(spec, 1.0)
    n = 100_000
    x = simulate_limit_ou(spec, 1.0, n, seed=3)
    assert abs(x.mean() - mean) < 4.0 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < 4.0 * var * math.sqrt(2.0 / n) + 2e-3 * var
    skew = np.mean((x - x.mean()) ** 3) / x.std() ** 3
    assert abs(skew) < 4.0 * math.sqrt(6.0 / n)


def test_ou_sampler_reproducible_and_offset_consistent():
    spec = LimitProcessSpec(LimitCoefficients.constant(q=1.0), NOISE_ONLY, linear_traj(1.0))
    a = simulate_limit_ou(spec, 1.0, 300, seed=4)
    b = simulate_limit_ou(spec, 1.0, 300, seed=4)
    assert np.array_equal(a, b)
    tail = simulate_limit_ou(spec, 1.0, 200, seed=4, path_offset=100)
    assert np.array_equal(a[100:], tail)


def test_variance_additivity_with_initial_perturbation():
    r = classify_regime(0.01, 2.0, a2=1.0)
    assert r.active_terms.noise and r.active_terms.initial_perturbation
    traj = linear_traj(0.5)
    xi = InitialPerturbation("gaussian", 0.4, 0.7)
    both = LimitProcessSpec(LimitCoefficients.constant(q=1.0), r, traj, xi)
    noise = LimitProcessSpec(LimitCoefficients.constant(q=1.0), NOISE_ONLY, traj)
    m, v = limit_fluctuation_moments(both, 1.0)
    _, v_noise = limit_fluctuation_moments(noise, 1.0)
    phi = math.exp(-0.5)
    assert v == pytest.approx(v_noise + phi**2 * 0.49, rel=1e-12)
    assert m == pytest.approx(phi * 0.4, rel=1e-9)
    x = simulate_limit_ou(both, 1.0, 50_000, seed=8)
    assert abs(x.mean() - m) < 4.0 * math.sqrt(v / x.size)


def _unit_speed_spec(speed):
    traj = effective_flow(lambda x: speed + 0.0 * x, 0.0, 2.0, 1e-3)
    return LimitProcessSpec(LimitCoefficients.constant(q=1.0, J=0.0), BOTH, traj)


def test_projection_scaling():
    p1 = exit_law_projection(_unit_speed_spec(1.0), (1.0, 1.0), (0.0, 1.0))
    p2 = exit_law_projection(_unit_speed_spec(2.0), (0.5, 1.0), (0.0, 1.0))
    assert p1.time_correction_var == 1.0 and p1.mean_shift == 0.0
    assert math.sqrt(p2.time_correction_var) == pytest.approx(0.5 * math.sqrt(p1.time_correction_var))
    assert p1.to_json()["location_correction"] == 0.0


def test_projection_of_point_mass_is_exact():
    for v in (-1.3, 0.0, 2.5):
        p = exit_law_projection(_unit_speed_spec(2.0), (0.5, 1.0), v)
        assert p.mean_shift == -v / 2.0 and p.time_correction_var == 0.0


def test_projection_of_samples():
    s = np.array([0.5, -1.0, 2.0, 0.1])
    p = exit_law_projection(_unit_speed_spec(2.0), (0.5, 1.0), s)
    assert np.array_equal(p.time_samples, -s / 2.0)
    assert isinstance(p, ExitLawPrediction)


def test_projection_regime_and_tangency_errors():
    traj = effective_flow(lambda x: 1.0 + 0.0 * x, 0.0, 2.0, 1e-3)
    spec = LimitProcessSpec(LimitCoefficients.constant(q=1.0), NOISE_ONLY, traj)
    with pytest.raises(UnsupportedRegimeError):
        exit_law_projection(spec, (1.0, 1.0), (0.0, 1.0))
    slow = effective_flow(lambda x: 1e-9 + 0.0 * x, 0.0, 2.0, 1e-3)
    spec = LimitProcessSpec(LimitCoefficients.constant(q=1.0, J=0.0), BOTH, slow)
    with pytest.raises(TangencyError):
        exit_law_projection(spec, (1.0, 1e-9), (0.0, 1.0))


def test_prediction_invariants():
    with pytest.raises(ConfigurationError):
        ExitLawPrediction(0.0, 1.0, 1.0, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        ExitLawPrediction(1.0, 1.0, 1.0, -1.0, 0.0)
