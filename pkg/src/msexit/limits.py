"""Limit laws of the fluctuations and of the first-exit time.

Along the effective trajectory ``Xbar`` with linearization ``Phi`` the
limiting fluctuation solves the linear equation::

    d eta = [lambda_bar'(Xbar) eta + cJ J_bar(Xbar) + cP psi_bar(Xbar)] dt
            + n q_bar(Xbar)**0.5 dW,      eta_0 = i xi0

where the indicators ``cJ``, ``cP``, ``n``, ``i`` come from the regime
classification.  Its law is Gaussian with the moments computed by
:func:`limit_fluctuation_moments`.  In one dimension the exit time then
satisfies ``(tau - T) / beta -> -eta_T / lambda_bar(z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import (ConfigurationError, TangencyError, UnsupportedRegimeError)
from .homogenize import (TRANSVERSALITY_FLOOR, EffectiveTrajectory, HomogenizedModel,
                         RegimeClassification)
from .rng import LANE_INITIAL, PhiloxNormals
from .sde import InitialPerturbation


@dataclass(frozen=True)
class LimitCoefficients:
    """Averaged coefficients as plain callables of the slow state.

    Any of ``q_bar``, ``J_bar``, ``psi_bar`` may be ``None`` when the
    corresponding term is inactive.
    """

    q_bar: Optional[Callable] = None
    J_bar: Optional[Callable] = None
    psi_bar: Optional[Callable] = None

    @classmethod
    def from_model(cls, model: HomogenizedModel, with_psi: bool = True) -> "LimitCoefficients":
        return cls(model.q_bar, model.J_bar, model.psi_bar if with_psi else None)

    @classmethod
    def constant(cls, q=None, J=None, psi=None) -> "LimitCoefficients":
        def const(v):
            return None if v is None else (lambda x: np.full(np.shape(x), float(v)))
        return cls(const(q), const(J), const(psi))


@dataclass(frozen=True)
class LimitProcessSpec:
    coefficients: LimitCoefficients
    regime: RegimeClassification
    traj: EffectiveTrajectory
    xi0: InitialPerturbation = field(default_factory=InitialPerturbation)

    def __post_init__(self):
        act = self.regime.active_terms
        c = self.coefficients
        if isinstance(c, HomogenizedModel):
            object.__setattr__(self, "coefficients", LimitCoefficients.from_model(c))
            c = self.coefficients
        missing = [name for name, on, f in (("q_bar", act.noise, c.q_bar),
                                            ("J_bar", act.J_drift and self.J_coefficient != 0,
                                             c.J_bar),
                                            ("psi_bar", act.Psi_drift, c.psi_bar)) if on and f is None]
        if missing:
            raise ConfigurationError(f"active terms without coefficient tables: {missing}")

    @classmethod
    def from_model(cls, model: HomogenizedModel, regime: RegimeClassification,
                   traj: EffectiveTrajectory, xi0: InitialPerturbation | None = None):
        if traj.velocity is not None and traj.velocity != model.lambda_bar:
            raise ConfigurationError("trajectory was not generated from this model")
        return cls(LimitCoefficients.from_model(model), regime, traj,
                   xi0 or InitialPerturbation())

    @property
    def J_coefficient(self) -> float:
        return self.regime.J_coefficient if self.regime.active_terms.J_drift else 0.0


def _path_to(traj: EffectiveTrajectory, t: float):
    """Trajectory nodes on ``[0, t]``, closing with the exact RK4 dense step at ``t``."""
    if not (0.0 <= t <= traj.times[-1] * (1 + 1e-12)):
        raise ConfigurationError(f"t={t} outside the trajectory horizon")
    k = int(np.searchsorted(traj.times, t, side="right")) - 1
    k = min(k, traj.times.size - 1)
    times, xs, ph = traj.times[:k + 1], traj.states[:k + 1], traj.linearization[:k + 1]
    rest = t - times[-1]
    if rest > 1e-12 * max(1.0, t):
        x, p = traj.step_from(k, rest)
        times, xs, ph = np.append(times, t), np.append(xs, x), np.append(ph, p)
    return times, xs, ph


def _simpson(y, x):
    return float(integrate.simpson(y, x=x)) if x.size > 1 else 0.0


def limit_fluctuation_moments(spec: LimitProcessSpec, t: float):
    """``(mean, variance)`` of the limiting fluctuation at time ``t``.

    ``mean = cJ H(t) + cP Phi(t) int Phi^-1 psi_bar + i Phi(t) E[xi0]`` with
    ``H(t) = Phi(t) int_0^t Phi^-1 J_bar``, and ``variance = n Phi(t)**2
    int_0^t Phi^-2 q_bar + i Phi(t)**2 Var[xi0]``.  Integrals use the
    composite Simpson rule on the trajectory grid.
    """
    act = spec.regime.active_terms
    c = spec.coefficients
    times, xs, ph = _path_to(spec.traj, t)
    phi_t = ph[-1]
    mean = 0.0
    var = 0.0
    cj = spec.J_coefficient
    if cj != 0.0:
        mean += cj * phi_t * _simpson(c.J_bar(xs) / ph, times)
    if act.Psi_drift:
        mean += phi_t * _simpson(c.psi_bar(xs) / ph, times)
    if act.initial_perturbation:
        mean += phi_t * spec.xi0.expectation
        var += phi_t**2 * spec.xi0.variance
    if act.noise:
        var += phi_t**2 * _simpson(c.q_bar(xs) / ph**2, times)
    return float(mean), float(var)


def h_term(spec: LimitProcessSpec, t: float) -> float:
    """``H(t) = Phi(t) int_0^t Phi^-1 J_bar`` without the regime prefactor."""
    times, xs, ph = _path_to(spec.traj, t)
    return float(ph[-1] * _simpson(spec.coefficients.J_bar(xs) / ph, times))


def simulate_limit_ou(spec: LimitProcessSpec, t_end: float, n_samples: int, seed: int,
                      path_offset: int = 0) -> np.ndarray:
    """Terminal samples of the limiting fluctuation by the Euler scheme on the trajectory grid.

    Sample ``j`` uses the Gaussian stream of path ``path_offset + j``.
    """
    act = spec.regime.active_terms
    c = spec.coefficients
    times, xs, _ = _path_to(spec.traj, t_end)
    rng = PhiloxNormals(seed)
    eta = np.zeros(n_samples)
    if act.initial_perturbation and spec.xi0.kind != "none":
        if spec.xi0.kind == "point":
            eta += spec.xi0.mean
        else:
            z = np.array([rng.keyed(path_offset + j, 1, lane=LANE_INITIAL)[0]
                          for j in range(n_samples)])
            eta += spec.xi0.mean + spec.xi0.std * z
    jac = spec.traj.jacobian
    cj = spec.J_coefficient
    pair = None
    for i in range(times.size - 1):
        h = times[i + 1] - times[i]
        x = xs[i]
        drift = float(jac(x)) * eta
        if cj != 0.0:
            drift = drift + cj * float(c.J_bar(x))
        if act.Psi_drift:
            drift = drift + float(c.psi_bar(x))
        new = eta + drift * h
        if act.noise:
            if i % 2 == 0:
                pair = rng.block(i // 2, path_offset, n_samples)
            new = new + math.sqrt(max(float(c.q_bar(x)), 0.0) * h) * pair[i % 2]
        eta = new
    return eta


@dataclass(frozen=True)
class ExitLawPrediction:
    """Limit law of ``(tau - T)/beta``: Gaussian with ``mean_shift`` and ``time_correction_var``."""

    T: float
    z: float
    speed: float
    time_correction_var: float
    mean_shift: float
    mean_is_model_derived: bool = False
    time_samples: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError("deterministic exit time must be positive")
        if not self.time_correction_var >= 0:
            raise ConfigurationError("time correction variance must be nonnegative")

    def to_json(self) -> dict:
        return {"T": self.T, "z": self.z, "lambda_bar_at_exit": self.speed,
                "time_correction_var": self.time_correction_var,
                "mean_shift": self.mean_shift,
                "mean_is_model_derived": self.mean_is_model_derived,
                "location_correction": 0.0}


def exit_law_projection(spec: LimitProcessSpec, T_z, eta_T,
                        floor: float = TRANSVERSALITY_FLOOR) -> ExitLawPrediction:
    """Project the terminal fluctuation onto the exit time in one dimension.

    ``eta_T`` is ``(mean, variance)``, an array of samples, or a number
    (point mass).  The time correction is ``-eta_T / lambda_bar(z)``; the
    location correction vanishes in one dimension.
    """
    if math.isinf(spec.regime.ell):
        raise UnsupportedRegimeError("the exit-time limit needs ell < inf")
    T, z = float(T_z[0]), float(T_z[1])
    speed = float(spec.traj.velocity(z))
    if abs(speed) <= floor:
        raise TangencyError(f"|lambda_bar(z)| = {abs(speed):.3e} at the exit point")
    samples = None
    if isinstance(eta_T, tuple):
        mean, var = float(eta_T[0]), float(eta_T[1])
    elif np.ndim(eta_T) == 0:
        mean, var = float(eta_T), 0.0
    else:
        samples = -np.asarray(eta_T, dtype=float) / speed
        return ExitLawPrediction(T, z, speed, float(np.var(samples)), float(np.mean(samples)),
                                 spec.J_coefficient != 0.0, samples)
    return ExitLawPrediction(T, z, speed, var / speed**2, -mean / speed,
                             spec.J_coefficient != 0.0)
