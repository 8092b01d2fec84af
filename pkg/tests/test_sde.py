import math

import numpy as np
import pytest

from msexit import (ExitProblemSpec, PathRecord, SimulationSpec, classify_regime, detect_exit,
                    effective_flow, extract_fluctuation, simulate_ensemble, simulate_path)
from msexit.errors import BlowUpError, BudgetError, ConfigurationError
from msexit.fields import Polynomial, SeparableField, TrigPolynomial
from msexit.rng import PhiloxNormals

from oracles import gibbs_pair

ZERO = SeparableField.zero()
ONE = SeparableField.constant(1.0)


def spec(b=ZERO, c=ZERO, sigma=ONE, eps=0.01, delta=1.0, x0=0.0, dt=1e-3, horizon=1.0,
         seed=11, **kw):
    return SimulationSpec(b=b, c=c, sigma=sigma, epsilon=eps, delta=delta, x0=x0, dt=dt,
                          horizon=horizon, seed=seed, **kw)


def test_no_dynamics_gives_constant_path():
    p = simulate_path(spec(sigma=ZERO, x0=0.3))
    assert np.all(p.states == 0.3)
    assert p.exit is None


def test_unit_transport_is_exact():
    p = simulate_path(spec(c=ONE, sigma=ZERO, dt=1.0 / 64))
    assert np.array_equal(p.states, p.times)
    assert p.times[-1] == 1.0


def test_paths_are_bit_reproducible():
    s = spec(c=SeparableField.of_x(Polynomial((0.0, -1.0))), eps=0.1)
    a, b = simulate_path(s, path_index=3), simulate_path(s, path_index=3)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, simulate_path(s.with_seed(12), path_index=3).states)


def test_ensemble_independent_of_chunking_and_block_size():
    s = spec(b=SeparableField.of_y(TrigPolynomial(0.0, (1.0,))), delta=0.1, dt=1e-4,
             horizon=0.2, eps=0.05)
    whole = simulate_ensemble(s, 300)
    parts = np.concatenate([simulate_ensemble(s, 100).x_final,
                            simulate_ensemble(s, 200, path_offset=100).x_final])
    assert np.array_equal(whole.x_final, parts)
    assert np.array_equal(whole.x_final, simulate_ensemble(s, 300, block=7).x_final)


def test_increments_come_from_the_keyed_stream():
    s = spec(eps=0.25, dt=0.01, horizon=0.5)
    p = simulate_path(s, path_index=5)
    z = PhiloxNormals(s.seed).increments(5, 0, 50)
    expected = np.concatenate([[0.0], np.cumsum(0.5 * math.sqrt(0.01) * z)])
    assert np.max(np.abs(p.states - expected)) < 1e-12


def test_strong_self_convergence():
    sig = SeparableField.of_x(Polynomial((1.0, 0.5)))
    c = SeparableField.of_x(Polynomial((0.0, -1.0)))
    sup = []
    for dt in (4e-3, 2e-3, 1e-3):
        coarse = spec(c=c, sigma=sig, eps=0.5, dt=dt, brownian_refinement=1)
        fine = spec(c=c, sigma=sig, eps=0.5, dt=dt / 2)
        d = []
        for i in range(100):
            a = simulate_path(coarse, path_index=i).states
            b = simulate_path(fine, path_index=i, record_stride=2).states
            d.append(np.max(np.abs(a - b)))
        sup.append(np.mean(d))
    for big, small in zip(sup, sup[1:]):
        assert 1.2 < big / small < 2.5


def test_weak_second_moment():
    eps = 0.01
    res = simulate_ensemble(spec(eps=eps, dt=1e-2), 10_000)
    x2 = res.x_final**2
    se = np.std(x2, ddof=1) / math.sqrt(x2.size)
    assert abs(np.mean(x2) - eps) < 3 * se


def test_resolution_budget_and_blow_up():
    with pytest.raises(ConfigurationError):
        spec(b=SeparableField.of_y(TrigPolynomial(0.0, (1.0,))), eps=0.1, delta=0.01, dt=1e-3)
    with pytest.raises(BudgetError):
        simulate_ensemble(spec(step_budget=1e4, dt=1e-3), 100)
    cubic = SeparableField.of_x(Polynomial((0.0, 0.0, 0.0, 10.0)))
    with pytest.raises(BlowUpError):
        simulate_ensemble(spec(c=cubic, sigma=ZERO, x0=10.0, dt=0.1), 1)


def test_detect_exit_examples():
    t = np.linspace(0.0, 2.0, 21)
    rec = detect_exit(PathRecord(t, t.copy(), 0), ExitProblemSpec(-1.0, 1.0))
    assert rec.tau == pytest.approx(1.0, abs=1e-12) and rec.endpoint == "upper"
    assert detect_exit(PathRecord(t, np.zeros_like(t), 0), ExitProblemSpec(-1.0, 1.0)) is None


def test_simulated_exit_is_bracketed():
    ex = ExitProblemSpec(-0.3, 0.3)
    s = spec(eps=0.2, dt=1e-3, horizon=5.0)
    for i in range(20):
        p = simulate_path(s, ex, path_index=i)
        assert p.exit is not None
        inside, outside = p.states[-2], p.states[-1]
        assert ex.lower < inside < ex.upper
        assert not ex.lower < outside < ex.upper
        assert p.times[-2] <= p.exit.tau <= p.times[-1]
        again = detect_exit(p, ex)
        assert again.tau == pytest.approx(p.exit.tau, abs=1e-12)
        assert again.endpoint == p.exit.endpoint


def test_exit_time_interpolation_bias_shrinks_with_dt():
    # unit drift and noise: the interpolated exit time is late by about C * dt**0.5,
    # so measured against a fine run on the same Brownian paths the offset at
    # dt0 * 4**k is C * dt0**0.5 * (2**k - 1); quartering dt halves the bias
    ex = ExitProblemSpec(-10.0, 0.1)
    dt0, n = 1e-6, 2000
    ref = simulate_ensemble(spec(c=ONE, dt=dt0, horizon=3.0), n, ex).tau
    C = []
    for k in (4, 5):
        s = spec(c=ONE, dt=dt0 * 4**k, horizon=3.0, brownian_refinement=2 * k)
        offset = np.mean(simulate_ensemble(s, n, ex).tau - ref)
        C.append(offset / (math.sqrt(dt0) * (2**k - 1)))
    assert C[0] > 0 and C[1] > 0
    assert abs(C[0] / C[1] - 1.0) < 0.25


def test_extract_fluctuation_examples():
    traj = effective_flow(lambda x: -x, 1.0, 1.0, 1e-2)
    p = PathRecord(traj.times, traj.states.copy(), 0)
    assert np.max(np.abs(extract_fluctuation(p, traj, 0.1))) == 0.0
    shifted = PathRecord(traj.times, traj.states + 0.25, 0)
    assert np.allclose(extract_fluctuation(shifted, traj, 1.0), 0.25, atol=1e-15)
    with pytest.raises(ConfigurationError):
        extract_fluctuation(p, traj, 0.0)


def test_fluctuation_paths_stay_tight():
    # cosine ripple, D = 1/2, delta = eps**2; 90% quantile of sup|eta| over [0, 1]
    b = SeparableField.of_y(TrigPolynomial(0.0, (), (2 * math.pi,)))
    c = SeparableField.of_x(Polynomial((0.0, -1.0)))
    sig = SeparableField.constant(1.0)
    K, Kh = gibbs_pair(TrigPolynomial(0.0, (1.0,)), 0.5)
    rate = 1.0 / (K * Kh)
    q = []
    for eps in (0.1, 0.05, 0.025):
        r = classify_regime(eps, 2.0)
        dt = 0.1 * r.delta**2 / eps
        s = SimulationSpec.from_regime(b, c, sig, r, 1.0, dt, 1.0, seed=3)
        stride = max(1, int(0.01 / dt))
        res = simulate_ensemble(s, 200, record_stride=stride)
        t = np.arange(res.record.shape[1]) * dt * stride
        eta = (res.record - np.exp(-rate * t)) / r.beta
        q.append(np.quantile(np.max(np.abs(eta), axis=1), 0.9))
    assert max(q) / min(q) < 1.5
