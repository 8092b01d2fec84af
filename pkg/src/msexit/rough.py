"""Overdamped Langevin dynamics in a rough potential ``V(x) + eps Q(x/delta)``.

The slow potential ``V`` is convex with its minimum below the exit interval,
so the unconditioned flow runs towards the lower endpoint and exit through
the upper endpoint is a rare event.  Conditioning on that event is a Doob
h-transform whose drift involves ``h(x) = exp(log_h(x))`` with::

    log_h(x) = (Q(x/delta) - Q(0)) / D + (V(x) - V(0)) / (eps D)

and the ratio ``h / int_anchor^x h``.  Both span hundreds of orders of
magnitude at small ``eps``, so every quantity here is accumulated in log
space.

The rare endpoint is always the one opposite to the deterministic flow.
Reports name it explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import (ConfigurationError, DomainError, NoExitError, PreconditionError,
                     SingularIntegrandError)
from .fields import Polynomial, SeparableField, TrigPolynomial
from .sde import (UPPER, DriftTable, EnsembleResult, ExitProblemSpec, PathRecord,
                  SimulationSpec, simulate_ensemble, simulate_path)
from .torus import PeriodicField, TorusGrid, cell_average

QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-12, limit=400)
J_FORMULA_TOL = 1e-6
# quadrature nodes per fast period, and per slow e-folding length of h
NODES_PER_PERIOD = 128
NODES_PER_EFOLD = 50


@dataclass(frozen=True)
class RoughPotentialSpec:
    """``dX = -[(eps/delta) Q'(X/delta) + V'(X)] dt + sqrt(2 eps D) dW`` on an interval."""

    V: Polynomial
    Q: TrigPolynomial
    D: float
    interval: ExitProblemSpec
    x0: float

    def __post_init__(self):
        if not (self.D > 0 and math.isfinite(self.D)):
            raise ConfigurationError("D must be positive")
        lo, hi = self.interval.lower, self.interval.upper
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ConfigurationError("the rough-potential interval must be bounded")
        if not lo < self.x0 < hi:
            raise ConfigurationError("x0 must lie strictly inside the interval")
        if self.interval.rare_endpoint == "lower":
            raise ConfigurationError(
                "the lower endpoint is where the flow goes; only the upper endpoint is rare")
        xs = np.linspace(lo, hi, 257)
        dV, d2V = self.V.derivative(), self.V.derivative().derivative()
        if np.any(d2V(xs) <= 0):
            raise PreconditionError("V must be strictly convex on the interval")
        if np.any(dV(xs) <= 0):
            raise PreconditionError("V' must be positive on the interval "
                                    "(minimum of V strictly below the lower endpoint)")

    @property
    def rho(self) -> float:
        return self.Q.period

    @property
    def rare_endpoint(self) -> str:
        return "upper"

    @property
    def x_rare(self) -> float:
        return self.interval.upper

    def V_prime(self, x):
        return self.V.derivative()(x)

    def to_json(self) -> dict:
        return {"V": self.V.to_json(), "Q": self.Q.to_json(), "D": self.D,
                "interval": {"lower": self.interval.lower, "upper": self.interval.upper},
                "rare_endpoint": self.rare_endpoint, "x0": self.x0}


# --------------------------------------------------------------------------
# Cell constants and closed forms
# --------------------------------------------------------------------------

def gibbs_constants(rough: RoughPotentialSpec, grid: TorusGrid | None = None):
    """``(K, K_hat, enhancement)`` with ``K = int e^{-Q/D}``, ``K_hat = int e^{Q/D}``.

    ``enhancement = <e^{-Q/D}><e^{Q/D}> = K K_hat / rho**2 >= 1``.
    """
    grid = grid or TorusGrid(rough.rho, 512)
    if grid.n_points < 128:
        raise ConfigurationError("the cell grid must have at least 128 points")
    if abs(grid.period - rough.rho) > 1e-12 * rough.rho:
        raise ConfigurationError("grid period differs from the period of Q")
    q = PeriodicField.from_function(grid, rough.Q) / rough.D
    qmax = float(np.max(np.abs(q.values)))
    # factor out the extremes so large |Q|/D cannot overflow
    m_minus = cell_average(q.map(lambda v: np.exp(-v - qmax)))
    m_plus = cell_average(q.map(lambda v: np.exp(v - qmax)))
    K = rough.rho * m_minus * math.exp(qmax)
    K_hat = rough.rho * m_plus * math.exp(qmax)
    return K, K_hat, m_minus * m_plus * math.exp(2 * qmax)


def _check_regular(rough: RoughPotentialSpec, a: float, b: float):
    xs = np.linspace(min(a, b), max(a, b), 1025)
    if np.any(rough.V_prime(xs) == 0.0) or np.any(np.diff(np.sign(rough.V_prime(xs))) != 0):
        raise SingularIntegrandError("V' vanishes on the integration range")


def conditional_exit_stats(rough: RoughPotentialSpec, grid: TorusGrid | None = None):
    """``(T, variance)`` of the conditioned exit time from ``x0`` to the rare endpoint.

    ``T = e int dy / V'`` and ``variance = 2 D e**2 int dz / V'**3``, both
    from ``x0`` to the rare endpoint, with ``e`` the Gibbs enhancement.
    """
    _, _, enh = gibbs_constants(rough, grid)
    a, b = rough.x0, rough.x_rare
    _check_regular(rough, a, b)
    dV = rough.V.derivative()
    t = integrate.quad(lambda y: 1.0 / dV(y), a, b, **QUAD_OPTS)[0]
    s = integrate.quad(lambda z: 1.0 / dV(z) ** 3, a, b, **QUAD_OPTS)[0]
    return enh * t, 2.0 * rough.D * enh**2 * s


def j_bar_nested(rough: RoughPotentialSpec, x) -> np.ndarray:
    """Extra-drift coefficient of the Langevin family by direct double quadrature.

    ``J(x) = -(rho / (K K_hat D)) V'(x)**2 int_0^rho (1 - rho e^{Q(y)/D}/K_hat)
    int_0^y (1 - rho e^{-Q(z)/D}/K) dz dy``.
    """
    rho, D, Q = rough.rho, rough.D, rough.Q
    K = integrate.quad(lambda y: math.exp(-Q(y) / D), 0.0, rho, **QUAD_OPTS)[0]
    Kh = integrate.quad(lambda y: math.exp(Q(y) / D), 0.0, rho, **QUAD_OPTS)[0]

    def inner(y):
        return integrate.quad(lambda z: 1.0 - rho * math.exp(-Q(z) / D) / K, 0.0, y,
                              **QUAD_OPTS)[0]

    outer = integrate.quad(lambda y: (1.0 - rho * math.exp(Q(y) / D) / Kh) * inner(y),
                           0.0, rho, **QUAD_OPTS)[0]
    return -rho / (K * Kh * D) * rough.V_prime(np.asarray(x, dtype=float)) ** 2 * outer


# --------------------------------------------------------------------------
# h-transform in log space
# --------------------------------------------------------------------------

def log_h(rough: RoughPotentialSpec, epsilon: float, delta: float | None, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = (rough.V(x) - rough.V(0.0)) / (epsilon * rough.D)
    if delta is not None and not rough.Q.is_constant:
        out = out + (rough.Q(x / delta) - rough.Q(0.0)) / rough.D
    return out


def _log_cumtrapz(lh: np.ndarray, spacing: float) -> np.ndarray:
    """``log int_{x_0}^{x_j} e^{lh}`` by the trapezoid rule; ``-inf`` at ``j = 0``."""
    seg = math.log(0.5 * spacing) + np.logaddexp(lh[:-1], lh[1:])
    return np.concatenate(([-np.inf], np.logaddexp.accumulate(seg)))


def quadrature_spacing(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                       span: float) -> float:
    vmax = float(np.max(np.abs(rough.V_prime(np.linspace(0.0, rough.x_rare, 257)))))
    h = rough.D * epsilon / (NODES_PER_EFOLD * max(vmax, 1e-300))
    if delta is not None and not rough.Q.is_constant:
        h = min(h, delta * rough.rho / NODES_PER_PERIOD)
    return min(h, span / 64)


@dataclass(frozen=True)
class HTransformTable:
    """``log h`` and ``log int_anchor^x h`` on a uniform grid starting at the anchor."""

    x: np.ndarray
    log_h: np.ndarray
    log_H: np.ndarray
    anchor: float

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    def ratio(self) -> np.ndarray:
        """``h / int_anchor^x h`` (infinite at the anchor)."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_h - self.log_H)


def h_transform_table(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                      anchor: float | str = 0.0, spacing: float | None = None) -> HTransformTable:
    """Tabulate the h-function and its integral from ``anchor`` up to the rare endpoint.

    ``anchor=0`` matches the usual normalization of the conditioned drift;
    ``anchor="lower"`` gives the exact conditioning on leaving through the
    rare endpoint before the lower one.
    """
    a = rough.interval.lower if anchor == "lower" else float(anchor)
    if a > rough.interval.lower:
        raise ConfigurationError("the h-transform anchor must not exceed the lower endpoint")
    span = rough.x_rare - a
    h = spacing or quadrature_spacing(rough, epsilon, delta, span)
    n = int(math.ceil(span / h))
    x = a + span * np.arange(n + 1) / n
    lh = log_h(rough, epsilon, delta, x)
    lH = _log_cumtrapz(lh, span / n)
    if not np.all(np.isfinite(lh)) or np.any(np.isnan(lH)):
        raise FloatingPointError("h-transform table is not finite")
    return HTransformTable(x, lh, lH, a)


def conditioned_drift_table(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                            anchor: float | str = 0.0,
                            spacing: float | None = None) -> DriftTable:
    """The extra drift ``2 eps D h / int h`` on the interval, as a simulator table."""
    tab = h_transform_table(rough, epsilon, delta, anchor, spacing)
    keep = (tab.x >= rough.interval.lower) & np.isfinite(tab.log_H)
    first = int(np.flatnonzero(keep)[0])
    vals = 2.0 * epsilon * rough.D * tab.ratio()[first:]
    return DriftTable(float(tab.x[first]), tab.spacing, vals)


def conditioned_drift(rough: RoughPotentialSpec, epsilon: float, delta: float | None, x,
                      anchor: float | str = 0.0) -> np.ndarray:
    """Full conditioned drift ``-(eps/delta) Q'(x/delta) - V'(x) + 2 eps D h/int h``."""
    tab = conditioned_drift_table(rough, epsilon, delta, anchor)
    x = np.asarray(x, dtype=float)
    extra = np.interp(x, tab.x0 + tab.spacing * np.arange(tab.values.size), tab.values)
    out = -rough.V_prime(x) + extra
    if delta is not None and not rough.Q.is_constant:
        out = out - (epsilon / delta) * rough.Q.derivative()(x / delta)
    return out


def conditioned_simulation_spec(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                                dt: float, seed: int = 0, horizon: float | None = None,
                                **kw) -> SimulationSpec:
    """Simulation spec of the conditioned dynamics without the h-ratio drift.

    ``horizon`` defaults to three times the limiting conditioned exit time.
    """
    rough_q = delta is not None and not rough.Q.is_constant
    if not rough_q:
        delta = 1.0 if delta is None else delta
    if horizon is None:
        horizon = 3.0 * conditional_exit_stats(rough)[0]
    b = SeparableField.of_y(rough.Q.derivative().scaled(-1.0)) if rough_q \
        else SeparableField.zero(rough.rho)
    return SimulationSpec(
        b=b, c=SeparableField.of_x(rough.V.derivative().scaled(-1.0), rough.rho),
        sigma=SeparableField.constant(math.sqrt(2.0 * rough.D), rough.rho),
        epsilon=epsilon, delta=delta, x0=rough.x0, dt=dt, horizon=horizon, seed=seed,
        period=rough.rho, **kw)


def simulate_conditioned_ensemble(rough: RoughPotentialSpec, epsilon: float,
                                  delta: float | None, dt: float, seed: int, n_paths: int,
                                  path_offset: int = 0, anchor: float | str = 0.0,
                                  horizon: float | None = None, **kw) -> EnsembleResult:
    spec = conditioned_simulation_spec(rough, epsilon, delta, dt, seed, horizon, **kw)
    table = conditioned_drift_table(rough, epsilon, delta, anchor)
    return simulate_ensemble(spec, n_paths, rough.interval, path_offset, extra_drift=table)


def simulate_conditioned_path(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                              dt: float, seed: int, path_index: int = 0, record_stride: int = 1,
                              anchor: float | str = 0.0, horizon: float | None = None,
                              **kw) -> PathRecord:
    spec = conditioned_simulation_spec(rough, epsilon, delta, dt, seed, horizon, **kw)
    table = conditioned_drift_table(rough, epsilon, delta, anchor)
    return simulate_path(spec, rough.interval, path_index, record_stride, extra_drift=table)


# --------------------------------------------------------------------------
# Scale and speed functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSpeed:
    """Scale ``u`` and speed ``v`` of the conditioned diffusion, both zero at ``lower``."""

    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    epsilon: float
    delta: Optional[float]

    def to_json(self) -> dict:
        return {"x": self.x.tolist(), "u": self.u.tolist(), "v": self.v.tolist(),
                "epsilon": self.epsilon, "delta": self.delta}


def scale_speed_functions(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                          x_grid, anchor: float = 0.0, spacing: float | None = None,
                          cell: TorusGrid | None = None) -> ScaleSpeed:
    """Scale and speed functions of the conditioned diffusion on ``x_grid``.

    The conditioned generator is ``eps D d^2 + (b + 2 eps D h/H) d`` with
    ``H = int_anchor^x h``.  Its scale density is ``h / H**2`` and its speed
    density ``H**2 / (eps D h)``, so::

        u(x) = 1/H(lower) - 1/H(x),    v(x) = (1/(eps D)) int_lower^x H**2 / h.

    With ``delta=None`` the fast factor ``e^{(Q(x/delta) - Q(0))/D}`` is
    replaced by its cell average in ``H`` and ``e^{-(Q - Q(0))/D}`` by its
    average in ``1/h``: the ``delta -> 0`` limit at fixed ``eps``.
    """
    xg = np.asarray(x_grid, dtype=float)
    lo, hi = rough.interval.lower, rough.interval.upper
    if xg.ndim != 1 or xg.size < 2 or np.any(np.diff(xg) <= 0):
        raise ConfigurationError("x_grid must be strictly increasing")
    if xg[0] < lo - 1e-12 or xg[-1] > hi + 1e-12:
        raise DomainError("x_grid must lie inside the interval")
    if anchor >= lo:
        raise ConfigurationError("the anchor must lie below the lower endpoint")
    if delta is None and not rough.Q.is_constant:
        cell = cell or TorusGrid(rough.rho, 512)
        q = PeriodicField.from_function(cell, rough.Q)
        q0 = float(rough.Q(0.0))
        avg_plus = math.log(cell_average(q.map(lambda v: np.exp((v - q0) / rough.D))))
        avg_minus = math.log(cell_average(q.map(lambda v: np.exp(-(v - q0) / rough.D))))
    else:
        avg_plus = avg_minus = 0.0
    tab = h_transform_table(rough, epsilon, delta, anchor, spacing)
    x, lH = tab.x, tab.log_H + avg_plus
    # 1/h: exact oscillating factor, or its average in the limit
    log_inv_h = -tab.log_h if delta is not None else avg_minus - tab.log_h
    i0 = int(np.searchsorted(x, lo, side="right"))
    lH_lo = float(np.interp(lo, x, lH))
    # speed integrand H^2/h from the lower endpoint on
    lw = 2.0 * lH + log_inv_h
    xs = np.concatenate(([lo], x[i0:]))
    lws = np.concatenate(([float(np.interp(lo, x, lw))], lw[i0:]))
    seg = np.log(0.5 * np.diff(xs)) + np.logaddexp(lws[:-1], lws[1:])
    lcum = np.concatenate(([-np.inf], np.logaddexp.accumulate(seg)))
    lH_g = np.interp(xg, x, lH)
    u = np.exp(-lH_lo) - np.exp(-lH_g)
    v = np.exp(np.interp(xg, xs, lcum)) / (epsilon * rough.D)
    return ScaleSpeed(xg, u, v, float(epsilon), None if delta is None else float(delta))


def scale_distance(rough: RoughPotentialSpec, epsilon: float, deltas, n_grid: int = 401,
                   anchor: float = 0.0) -> list[float]:
    """``sup |u^{eps,delta} - u^eps|`` over the interval for each ``delta``."""
    xg = np.linspace(rough.interval.lower, rough.interval.upper, n_grid)
    ref = scale_speed_functions(rough, epsilon, None, xg, anchor)
    return [float(np.max(np.abs(scale_speed_functions(rough, epsilon, d, xg, anchor).u - ref.u)))
            for d in deltas]


# --------------------------------------------------------------------------
# Monte Carlo check of the conditioned exit law
# --------------------------------------------------------------------------

def conditional_exit_clt_check(rough: RoughPotentialSpec, epsilon: float, delta: float | None,
                               n_paths: int, dt: float, seed: int, anchor: float | str = 0.0,
                               horizon: float | None = None,
                               max_failure_fraction: float = 0.01) -> dict:
    """Simulate conditioned paths and compare ``(tau - T)/sqrt(eps)`` with the limit law."""
    from .harness import ks_statistic
    from scipy.stats import norm

    T, var = conditional_exit_stats(rough)
    res = simulate_conditioned_ensemble(rough, epsilon, delta, dt, seed, n_paths,
                                        anchor=anchor, horizon=horizon)
    at_rare = res.endpoint == UPPER
    no_exit = int(np.sum(~res.exited))
    if no_exit > max_failure_fraction * n_paths:
        raise NoExitError(f"{no_exit} of {n_paths} conditioned paths did not exit")
    z = (res.tau[at_rare] - T) / math.sqrt(epsilon)
    n = z.size
    mean, v = float(np.mean(z)), float(np.var(z, ddof=1))
    m4 = float(np.mean((z - mean) ** 4))
    return {
        "rare_endpoint": rough.rare_endpoint,
        "rare_endpoint_value": rough.x_rare,
        "epsilon": epsilon, "delta": delta, "dt": dt, "seed": seed, "n_paths": n_paths,
        "T": T, "predicted_mean": 0.0, "predicted_variance": var,
        "mean": mean, "mean_se": math.sqrt(v / n),
        "variance": v, "variance_se": math.sqrt(max(m4 - v * v, 0.0) / n),
        "ks": ks_statistic(z, norm(0.0, math.sqrt(var)).cdf) if n >= 50 else float("nan"),
        "fraction_at_rare_endpoint": float(np.mean(at_rare)),
        "no_exit": no_exit, "samples": z,
    }
