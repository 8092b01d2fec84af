"""Cell problems, invariant measures and averaged coefficients in one dimension.

For a frozen slow state ``x`` the fast generator on the torus is
``L f = A(y) f' + S(y) f'' / 2`` with

* regime 1 (``eps/delta -> inf``): ``A = b``, ``S = sigma**2``;
* regime 2 (``eps/delta -> gamma``): ``A = gamma b + c``, ``S = gamma sigma**2``.

Both the stationary density and the Poisson problem ``L f = -g`` reduce to
first-order linear ODEs with periodic coefficients.  Writing
``2A/S = kappa + s_p'`` with ``s_p`` periodic, those ODEs are diagonal in
Fourier space after the substitution ``e^{s_p}``, so they are solved by FFT
without any linear system.  The results are exact up to the resolution of
the trigonometric interpolant, which is what the 1e-8 residual targets
require.  A sparse exponentially fitted Fokker-Planck discretization is kept
as an independent route for the invariant density.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import (ConfigurationError, ExtrapolationError, NoExitError,
                     PreconditionError, SolverError, TangencyError, UnsolvableError)
from .torus import (PeriodicField, TorusGrid, spectral_antiderivative,
                    spectral_derivative)

RESIDUAL_TOL = 1e-8
NORMALIZATION_TOL = 1e-10
TRANSVERSALITY_FLOOR = 1e-6
PERIODICITY_TOL = 1e-10


def _zero(x, y):
    return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class PeriodicCoefficientSet:
    """Coefficients ``b, c, sigma, psi`` of the multiscale SDE in ``d = 1``.

    Every callable takes ``(x, y)`` with scalar ``x`` and array ``y`` and
    returns an array shaped like ``y``.  ``psi`` is the perturbation at finite
    ``eps``; ``psi_limit`` its limit used by averaging (defaults to ``psi``).
    ``gamma = inf`` selects the first regime.
    """

    b: Callable
    c: Callable
    sigma: Callable
    psi: Callable | None = None
    psi_limit: Callable | None = None
    period: float = 1.0
    gamma: float = math.inf
    dimension: int = 1

    def __post_init__(self):
        if self.dimension != 1:
            raise ConfigurationError("numerical solvers support dimension 1 only")
        if not (self.period > 0):
            raise ConfigurationError("period must be positive")
        if self.gamma < 0 or math.isnan(self.gamma):
            raise ConfigurationError("gamma must be nonnegative or +inf")
        if self.psi is None:
            object.__setattr__(self, "psi", _zero)
        if self.psi_limit is None:
            object.__setattr__(self, "psi_limit", self.psi)

    @property
    def regime_index(self) -> int:
        return 1 if math.isinf(self.gamma) else 2

    def validate(self, xs, n_samples: int = 64, sigma_min: float = 1e-12) -> None:
        """Check nondegeneracy and periodicity on sample points."""
        y = np.linspace(0.0, self.period, n_samples, endpoint=False)
        # with gamma = 0 the fast generator is c d/dy and sigma does not enter it
        first_order = self.regime_index == 2 and self.gamma == 0.0
        for x in np.atleast_1d(xs):
            s = np.asarray(self.sigma(x, y), dtype=float)
            if not first_order and np.min(s * s) < sigma_min ** 2:
                raise PreconditionError(f"sigma degenerates at x={x}")
            for name in ("b", "c", "sigma", "psi"):
                f = getattr(self, name)
                mis = np.max(np.abs(np.asarray(f(x, y + self.period)) - np.asarray(f(x, y))))
                if mis > PERIODICITY_TOL * max(1.0, np.max(np.abs(f(x, y)))):
                    raise PreconditionError(f"{name} is not periodic in y (mismatch {mis:.2e})")


def langevin_coefficients(V_prime: Callable, Q_prime: Callable, D: float,
                          period: float = 1.0) -> PeriodicCoefficientSet:
    """Coefficients of ``dX = [-(eps/delta) Q'(X/delta) - V'(X)] dt + sqrt(2 eps D) dW``."""
    if D <= 0:
        raise ConfigurationError("D must be positive")
    s = math.sqrt(2.0 * D)
    return PeriodicCoefficientSet(
        b=lambda x, y: -np.asarray(Q_prime(y), dtype=float) + 0.0 * x,
        c=lambda x, y: np.full(np.shape(y), -float(V_prime(x))),
        sigma=lambda x, y: np.full(np.shape(y), s),
        period=period,
    )


def _sample(f, x, grid: TorusGrid) -> np.ndarray:
    return np.broadcast_to(np.asarray(f(x, grid.nodes), dtype=float), (grid.n_points,)).copy()


def generator_coefficients(coeffs: PeriodicCoefficientSet, regime_index: int, x: float,
                           grid: TorusGrid):
    """``(A, S)`` at the grid nodes for the frozen fast generator."""
    b = _sample(coeffs.b, x, grid)
    sig = _sample(coeffs.sigma, x, grid)
    if regime_index == 1:
        return b, sig * sig
    if regime_index == 2:
        g = coeffs.gamma
        if math.isinf(g):
            raise ConfigurationError("regime 2 needs a finite gamma")
        c = _sample(coeffs.c, x, grid)
        return g * b + c, g * sig * sig
    raise ConfigurationError(f"regime_index must be 1 or 2, got {regime_index}")


def _check_grid(coeffs, grid):
    if abs(grid.period - coeffs.period) > 1e-14 * coeffs.period:
        raise ConfigurationError("grid period differs from the coefficient period")


def _phase(A, S, grid):
    """``kappa`` and periodic ``s_p`` with ``2A/S = kappa + s_p'``."""
    r = PeriodicField(grid, 2.0 * A / S)
    kappa = float(np.mean(r.values))
    return kappa, spectral_antiderivative(r).values


def invariant_measure(coeffs: PeriodicCoefficientSet, regime_index: int, x: float,
                      grid: TorusGrid, method: str = "spectral") -> PeriodicField:
    """Normalized stationary density of the frozen fast process.

    ``method="spectral"`` uses the closed-form FFT solution,
    ``method="fokker_planck"`` solves the sparse adjoint of an exponentially
    fitted Markov-chain discretization.
    """
    _check_grid(coeffs, grid)
    A, S = generator_coefficients(coeffs, regime_index, x, grid)
    if regime_index == 2 and coeffs.gamma == 0.0:
        if np.all(A > 0) or np.all(A < 0):
            m = 1.0 / np.abs(A)
        else:
            raise PreconditionError("gamma = 0 requires c(x, .) of one strict sign")
    elif method == "spectral":
        m = _stationary_spectral(A, S, grid)
    elif method == "fokker_planck":
        m = _stationary_fokker_planck(A, S, grid)
    else:
        raise ConfigurationError(f"unknown invariant-measure method {method!r}")
    if not np.all(np.isfinite(m)):
        raise SolverError("non-finite invariant density")
    m = np.maximum(m, 0.0)
    total = np.mean(m) * grid.period
    if not total > 0:
        raise SolverError("invariant density has zero mass")
    return PeriodicField(grid, m / total)


def _stationary_spectral(A, S, grid):
    if np.min(S) <= 0:
        raise PreconditionError("diffusion coefficient must be positive")
    kappa, sp_ = _phase(A, S, grid)
    shift = np.max(sp_)
    e = np.exp(-(sp_ - shift))
    eh = np.fft.fft(e)
    k = grid.wavenumbers
    vh = np.empty_like(eh)
    vh[0] = eh[0]
    vh[1:] = kappa * eh[1:] / (kappa - 1j * k[1:])
    v = np.fft.ifft(vh).real
    return np.exp(sp_ - shift) * v / S


def _bernoulli(z):
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-8
    zb = z[big]
    out[big] = zb / np.expm1(zb)
    out[~big] = 1.0 - 0.5 * z[~big]
    return out


def _stationary_fokker_planck(A, S, grid):
    n = grid.n_points
    h = grid.spacing
    idx = np.arange(n)
    nxt = (idx + 1) % n
    a_mid = 0.25 * (S + S[nxt])
    A_mid = 0.5 * (A + A[nxt])
    pe = A_mid * h / a_mid
    up = a_mid / h**2 * _bernoulli(-pe)     # rate k -> k+1
    down = a_mid / h**2 * _bernoulli(pe)    # rate k+1 -> k
    Q = sp.lil_matrix((n, n))
    Q[idx, nxt] = up
    Q[nxt, idx] = down
    Q = Q.tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    M = Q.T.tolil()
    M[0, :] = 1.0
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        pi = spla.spsolve(M.tocsc(), rhs)
    except Exception as exc:  # pragma: no cover - scipy raises several types
        raise SolverError(f"stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(pi)):
        raise SolverError("singular Fokker-Planck system")
    return pi / h


def check_centering(coeffs: PeriodicCoefficientSet, x: float, mu: PeriodicField) -> float:
    """``int b(x, y) mu(dy)``."""
    return float(np.mean(_sample(coeffs.b, x, mu.grid) * mu.values) * mu.grid.period)


def _mu_integral(values, mu: PeriodicField) -> float:
    return float(np.mean(values * mu.values) * mu.grid.period)


@dataclass(frozen=True)
class CellSolution:
    """Solution ``f`` of ``L f = -g`` with derivatives and diagnostics."""

    field: PeriodicField
    derivative: PeriodicField
    second_derivative: PeriodicField
    residual: float
    mu_mean: float
    solvability_residual: float

    def __call__(self, y):
        return self.field(y)


def solve_poisson(A, S, g, mu: PeriodicField, scale: float = 0.0) -> CellSolution:
    """Solve ``A f' + S f''/2 = -g`` on the torus with ``int f dmu = 0``.

    ``S`` may vanish identically (first-order generator).  The returned
    residual is the max-norm of ``L f + g``, with ``L`` applied by spectral
    differentiation, relative to ``max(|g|, scale)``.  Pass ``scale`` when
    ``g`` is a centered remainder that may be pure rounding.
    """
    grid = mu.grid
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    g = np.asarray(g, dtype=float)
    solv = _mu_integral(g, mu)
    if np.all(S == 0.0):
        p = -g / A
        p = p - np.mean(p)
    else:
        if np.min(S) <= 0:
            raise PreconditionError("diffusion coefficient must be positive")
        kappa, sp_ = _phase(A, S, grid)
        shift = np.max(sp_)
        P = np.exp(sp_ - shift) * 2.0 * g / S
        Ph = np.fft.fft(P)
        k = grid.wavenumbers
        qh = np.zeros_like(Ph)
        qh[1:] = -Ph[1:] / (kappa + 1j * k[1:])
        if grid.n_points % 2 == 0:
            qh[grid.n_points // 2] = 0.0
        qt = np.fft.ifft(qh).real
        w = np.exp(-(sp_ - shift))
        C = -np.mean(w * qt) / np.mean(w)
        p = w * (C + qt)
    pf = PeriodicField(grid, p)
    f = spectral_antiderivative(pf)
    f = f - _mu_integral(f.values, mu)
    f1 = spectral_derivative(f)
    f2 = spectral_derivative(pf)
    res = A * f1.values + 0.5 * S * f2.values + g
    ref = max(float(np.max(np.abs(g))), float(scale))
    residual = float(np.max(np.abs(res)) / ref) if ref > 0 else float(np.max(np.abs(res)))
    return CellSolution(f, pf, f2, residual, _mu_integral(f.values, mu), solv)


def fd_residual(A, S, f: PeriodicField, g) -> float:
    """Max-norm of ``L f + g`` with ``L`` applied by centered differences."""
    v = f.values
    h = f.grid.spacing
    d1 = (np.roll(v, -1) - np.roll(v, 1)) / (2 * h)
    d2 = (np.roll(v, -1) - 2 * v + np.roll(v, 1)) / h**2
    return float(np.max(np.abs(np.asarray(A) * d1 + 0.5 * np.asarray(S) * d2 + np.asarray(g))))


def _solvability_tol(g) -> float:
    return RESIDUAL_TOL * max(1.0, float(np.max(np.abs(g))))


def solve_cell_problem(coeffs: PeriodicCoefficientSet, x: float, mu: PeriodicField,
                       grid: TorusGrid | None = None, tol: float | None = None) -> CellSolution:
    """Corrector ``chi`` with ``L^1 chi = -b`` and zero ``mu``-mean (regime 1)."""
    grid = grid or mu.grid
    A, S = generator_coefficients(coeffs, 1, x, grid)
    centering = check_centering(coeffs, x, mu)
    if abs(centering) > (tol if tol is not None else _solvability_tol(A)):
        raise UnsolvableError(f"centering condition fails at x={x}: residual {centering:.3e}")
    return solve_poisson(A, S, A, mu)


def solve_auxiliary_pde(coeffs: PeriodicCoefficientSet, regime_index: int, x: float,
                        mu: PeriodicField, grid: TorusGrid | None = None,
                        rhs: np.ndarray | None = None, tol: float | None = None) -> CellSolution:
    """``Xi`` with ``L^i Xi = -(lambda_i - lambda_bar_i)`` and zero ``mu``-mean.

    ``rhs`` may supply ``lambda_i(x, .)`` at the nodes; otherwise it is
    computed (which needs the corrector in regime 1).
    """
    grid = grid or mu.grid
    A, S = generator_coefficients(coeffs, regime_index, x, grid)
    if rhs is None:
        rhs = _lambda_pointwise(coeffs, regime_index, x, mu)
    lam = np.asarray(rhs, dtype=float)
    g = lam - _mu_integral(lam, mu)
    sol = solve_poisson(A, S, g, mu, scale=float(np.max(np.abs(lam))))
    if abs(sol.solvability_residual) > (tol if tol is not None else _solvability_tol(lam)):
        raise UnsolvableError(f"auxiliary right-hand side not centered at x={x}")
    return sol


def _lambda_pointwise(coeffs, regime_index, x, mu):
    grid = mu.grid
    c = _sample(coeffs.c, x, grid)
    if regime_index == 1:
        chi = solve_cell_problem(coeffs, x, mu, grid)
        return (1.0 + chi.derivative.values) * c
    return coeffs.gamma * _sample(coeffs.b, x, grid) + c


@dataclass(frozen=True)
class CellAverages:
    """Averaged coefficients at one slow state together with the pointwise fields."""

    x: float
    regime_index: int
    lambda_bar: float
    q_bar: float
    J_bar: float
    psi_bar: float
    mu: PeriodicField
    chi: CellSolution | None
    xi: CellSolution
    lambda_i: PeriodicField
    q_i: PeriodicField
    J_i: PeriodicField
    psi_i: PeriodicField
    centering: float

    @property
    def residuals(self) -> dict:
        out = {"xi_residual": self.xi.residual, "xi_mu_mean": self.xi.mu_mean,
               "normalization": abs(np.mean(self.mu.values) * self.mu.grid.period - 1.0)}
        if self.chi is not None:
            out.update(chi_residual=self.chi.residual, chi_mu_mean=self.chi.mu_mean,
                       centering=self.centering)
        return out


def averaged_coefficients(coeffs: PeriodicCoefficientSet, regime_index: int, x: float,
                          grid: TorusGrid, mu_method: str = "spectral") -> CellAverages:
    _check_grid(coeffs, grid)
    mu = invariant_measure(coeffs, regime_index, x, grid, method=mu_method)
    c = _sample(coeffs.c, x, grid)
    sig2 = _sample(coeffs.sigma, x, grid) ** 2
    psi = _sample(coeffs.psi_limit, x, grid)
    b = _sample(coeffs.b, x, grid)
    if regime_index == 1:
        centering = check_centering(coeffs, x, mu)
        chi = solve_cell_problem(coeffs, x, mu, grid)
        grad = 1.0 + chi.derivative.values
        lam = grad * c
        xi = solve_auxiliary_pde(coeffs, 1, x, mu, grid, rhs=lam)
        J = c * xi.derivative.values
        q = grad * grad * sig2
        ps = grad * psi
    else:
        centering = float("nan")
        chi = None
        lam = coeffs.gamma * b + c
        xi = solve_auxiliary_pde(coeffs, 2, x, mu, grid, rhs=lam)
        g2 = 1.0 + xi.derivative.values
        J = b * g2 + 0.5 * sig2 * xi.second_derivative.values
        q = g2 * g2 * sig2
        ps = g2 * psi
    avg = lambda v: _mu_integral(v, mu)  # noqa: E731
    return CellAverages(
        x=float(x), regime_index=regime_index,
        lambda_bar=avg(lam), q_bar=avg(q), J_bar=avg(J), psi_bar=avg(ps),
        mu=mu, chi=chi, xi=xi,
        lambda_i=PeriodicField(grid, lam), q_i=PeriodicField(grid, q),
        J_i=PeriodicField(grid, J), psi_i=PeriodicField(grid, ps),
        centering=centering,
    )


# --------------------------------------------------------------------------
# Regime classification
# --------------------------------------------------------------------------

def _frac(v) -> Fraction | None:
    if v is None or (isinstance(v, float) and math.isinf(v)):
        return None
    return Fraction(v).limit_denominator(10**6) if not isinstance(v, Fraction) else v


@dataclass(frozen=True)
class ActiveTerms:
    J_drift: bool
    Psi_drift: bool
    noise: bool
    initial_perturbation: bool

    def as_dict(self) -> dict:
        return {"J_drift": self.J_drift, "Psi_drift": self.Psi_drift,
                "noise": self.noise, "initial_perturbation": self.initial_perturbation}


@dataclass(frozen=True)
class RegimeClassification:
    """Scalings of the fluctuation limit at a given ``eps``.

    Regime 1 uses ``delta = eps**delta_exponent``; regime 2 uses
    ``eps/delta - gamma = eps**zeta``.  ``ell`` is one of ``0.0``, ``1.0``,
    ``inf`` since both scales are pure powers of ``eps``.
    """

    regime_index: int
    epsilon: float
    delta: float
    delta_exponent: float | None
    gamma: float
    a1: float
    a2: float
    theta: float
    m: float
    ell: float
    beta: float
    zeta: float
    active_terms: ActiveTerms

    @property
    def J_coefficient(self) -> float:
        """Prefactor of the H-drift: ``1/ell`` for finite positive ``ell``, ``1`` at ``ell = 0``."""
        if self.ell == 0.0:
            return 1.0
        if math.isinf(self.ell):
            return 0.0
        return 1.0 / self.ell

    def as_dict(self) -> dict:
        return {"regime_index": self.regime_index, "epsilon": self.epsilon, "delta": self.delta,
                "delta_exponent": self.delta_exponent, "gamma": _json_num(self.gamma),
                "a1": _json_num(self.a1), "a2": _json_num(self.a2), "theta": self.theta,
                "m": self.m, "ell": _json_num(self.ell), "beta": self.beta, "zeta": self.zeta,
                "active_terms": self.active_terms.as_dict()}

    def at(self, epsilon: float) -> "RegimeClassification":
        """Same exponent laws at a different ``eps``."""
        return classify_regime(epsilon, self.delta_exponent, self.gamma, self.a1, self.a2,
                               zeta=None if self.regime_index == 1 else self.zeta)


def _json_num(v):
    return "inf" if isinstance(v, float) and math.isinf(v) else v


def classify_regime(epsilon: float, delta_exponent: float | None = None,
                    gamma: float = math.inf, a1: float = math.inf, a2: float = math.inf,
                    zeta: float | None = None) -> RegimeClassification:
    """Classify the scaling regime from exponent laws.

    Regime 1 (``gamma = inf``) needs ``delta_exponent > 1``; then
    ``theta = delta/eps = eps**(delta_exponent - 1)``.  Regime 2 (finite
    ``gamma``) needs ``zeta > 0`` and sets ``delta = eps/(gamma + eps**zeta)``.
    """
    if not (0.0 < epsilon < 1.0):
        raise ConfigurationError("epsilon must lie in (0, 1)")
    for name, a in (("a1", a1), ("a2", a2)):
        if not (a > 0):
            raise ConfigurationError(f"{name} must be positive or inf")
    if math.isinf(gamma):
        if delta_exponent is None or not delta_exponent > 1.0:
            raise ConfigurationError("regime 1 requires delta = eps**p with p > 1")
        regime = 1
        zf = _frac(delta_exponent) - 1
        delta = epsilon ** delta_exponent
    else:
        if gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if zeta is None or not zeta > 0:
            raise ConfigurationError("regime 2 requires eps/delta - gamma = eps**zeta with zeta > 0")
        if gamma == 0.0 and not zeta < 1.0:
            raise ConfigurationError("gamma = 0 requires zeta < 1 so that delta -> 0")
        regime = 2
        zf = _frac(zeta)
        delta = epsilon / (gamma + epsilon ** zeta)
    mf = min([Fraction(1, 2)] + [f / 2 for f in (_frac(a1), _frac(a2)) if f is not None])
    if mf > zf:
        ell = 0.0
    elif mf == zf:
        ell = 1.0
    else:
        ell = math.inf
    theta = epsilon ** float(zf)
    m = float(mf)
    beta = theta if ell == 0.0 else epsilon ** m
    nz = ell != 0.0
    active = ActiveTerms(
        J_drift=not math.isinf(ell),
        Psi_drift=nz and _frac(a1) is not None and mf == _frac(a1) / 2,
        noise=nz and mf == Fraction(1, 2),
        initial_perturbation=nz and _frac(a2) is not None and mf == _frac(a2) / 2,
    )
    return RegimeClassification(
        regime_index=regime, epsilon=float(epsilon), delta=float(delta),
        delta_exponent=None if delta_exponent is None else float(delta_exponent),
        gamma=float(gamma), a1=float(a1), a2=float(a2), theta=float(theta), m=m, ell=ell,
        beta=float(beta), zeta=float(zf), active_terms=active)


# --------------------------------------------------------------------------
# Tabulated model
# --------------------------------------------------------------------------

class HomogenizedModel:
    """Averaged coefficients tabulated on an x-grid with cubic interpolation."""

    def __init__(self, x_grid, lambda_bar, q_bar, J_bar, psi_bar, *, regime_index: int,
                 torus: TorusGrid | None = None, coeffs: PeriodicCoefficientSet | None = None,
                 residuals: dict | None = None, tolerances: dict | None = None):
        x = np.asarray(x_grid, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ConfigurationError("x_grid must be strictly increasing with >= 2 points")
        self.x_grid = x
        self.regime_index = regime_index
        self.torus = torus
        self.coeffs = coeffs
        self.residuals = residuals or {}
        self.tolerances = tolerances or {"residual": RESIDUAL_TOL,
                                         "normalization": NORMALIZATION_TOL,
                                         "transversality_floor": TRANSVERSALITY_FLOOR}
        self.tables = {k: np.asarray(v, dtype=float) for k, v in
                       (("lambda_bar", lambda_bar), ("q_bar", q_bar),
                        ("J_bar", J_bar), ("psi_bar", psi_bar))}
        kind = "natural" if x.size < 4 else "not-a-knot"
        self._splines = {k: CubicSpline(x, v, bc_type=kind) for k, v in self.tables.items()}

    @property
    def domain(self):
        return float(self.x_grid[0]), float(self.x_grid[-1])

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        slack = 1e-12 * max(1.0, hi - lo)
        if np.any(x < lo - slack) or np.any(x > hi + slack):
            raise ExtrapolationError(f"x outside tabulated range [{lo}, {hi}]")
        return x

    def _eval(self, key, x, nu=0):
        v = self._splines[key](self._check(x), nu)
        return v if np.ndim(v) else float(v)

    def lambda_bar(self, x):
        return self._eval("lambda_bar", x)

    def dlambda_bar(self, x):
        return self._eval("lambda_bar", x, 1)

    def q_bar(self, x):
        return self._eval("q_bar", x)

    def J_bar(self, x):
        return self._eval("J_bar", x)

    def psi_bar(self, x):
        return self._eval("psi_bar", x)

    def cell(self, x: float) -> CellAverages:
        """Full cell solution at ``x`` (needs the coefficient set)."""
        if self.coeffs is None or self.torus is None:
            raise ConfigurationError("model was loaded without coefficients")
        return averaged_coefficients(self.coeffs, self.regime_index, x, self.torus)

    def mu(self, x: float) -> PeriodicField:
        return self.cell(x).mu

    def chi(self, x: float) -> PeriodicField:
        cell = self.cell(x)
        if cell.chi is None:
            raise ConfigurationError("the corrector chi exists in regime 1 only")
        return cell.chi.field

    def xi_corrector(self, x: float) -> PeriodicField:
        return self.cell(x).xi.field

    def to_json(self) -> dict:
        return {
            "regime_index": self.regime_index,
            "x_grid": self.x_grid.tolist(),
            **{k: v.tolist() for k, v in self.tables.items()},
            "torus": None if self.torus is None else
            {"period": self.torus.period, "n_points": self.torus.n_points},
            "tolerances": self.tolerances,
            "residuals": self.residuals,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> "HomogenizedModel":
        t = doc.get("torus")
        return cls(doc["x_grid"], doc["lambda_bar"], doc["q_bar"], doc["J_bar"], doc["psi_bar"],
                   regime_index=int(doc["regime_index"]),
                   torus=None if t is None else TorusGrid(t["period"], t["n_points"]),
                   residuals=doc.get("residuals"), tolerances=doc.get("tolerances"))


def homogenize(coeffs: PeriodicCoefficientSet, x_grid, torus: TorusGrid,
               regime_index: int | None = None) -> HomogenizedModel:
    """Tabulate averaged coefficients on ``x_grid``.

    The residual report records, for every diagnostic, its worst value over
    the grid.
    """
    regime_index = regime_index or coeffs.regime_index
    coeffs.validate(x_grid)
    rows = [averaged_coefficients(coeffs, regime_index, float(x), torus) for x in x_grid]
    worst: dict = {}
    for r in rows:
        for k, v in r.residuals.items():
            worst[k] = max(worst.get(k, 0.0), abs(v))
    return HomogenizedModel(
        x_grid, [r.lambda_bar for r in rows], [r.q_bar for r in rows],
        [r.J_bar for r in rows], [r.psi_bar for r in rows],
        regime_index=regime_index, torus=torus, coeffs=coeffs, residuals=worst)


# --------------------------------------------------------------------------
# Effective flow
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectiveTrajectory:
    """Solution of ``X' = lambda_bar(X)`` and ``Phi' = lambda_bar'(X) Phi`` with ``Phi(0) = 1``."""

    times: np.ndarray
    states: np.ndarray
    linearization: np.ndarray
    start: float
    velocity: Callable = field(repr=False, default=None)
    jacobian: Callable = field(repr=False, default=None)

    def state_at(self, t):
        return np.interp(t, self.times, self.states)

    def linearization_at(self, t):
        return np.interp(t, self.times, self.linearization)

    def step_from(self, k: int, s: float):
        """Advance the exact RK4 step of length ``s`` from node ``k`` (dense output)."""
        return _rk4_step(self.velocity, self.jacobian, self.states[k], self.linearization[k], s)


def _rk4_step(f, df, x, phi, h):
    k1 = f(x)
    l1 = df(x) * phi
    x2 = x + 0.5 * h * k1
    k2 = f(x2)
    l2 = df(x2) * (phi + 0.5 * h * l1)
    x3 = x + 0.5 * h * k2
    k3 = f(x3)
    l3 = df(x3) * (phi + 0.5 * h * l2)
    x4 = x + h * k3
    k4 = f(x4)
    l4 = df(x4) * (phi + h * l3)
    return (x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0,
            phi + h * (l1 + 2 * l2 + 2 * l3 + l4) / 6.0)


def _as_field(model_or_fn, jacobian=None, fd_step=1e-6):
    if isinstance(model_or_fn, HomogenizedModel):
        return model_or_fn.lambda_bar, model_or_fn.dlambda_bar
    f = model_or_fn
    if jacobian is None:
        def jacobian(x):
            return (f(x + fd_step) - f(x - fd_step)) / (2.0 * fd_step)
    return f, jacobian


def effective_flow(model, x0: float, horizon: float, step: float,
                   jacobian: Callable | None = None, until=None) -> EffectiveTrajectory:
    """Classical RK4 on a uniform grid ``0, step, ..., horizon``.

    ``model`` is a :class:`HomogenizedModel` or a callable ``lambda_bar``;
    for callables the derivative is ``jacobian`` or a centered difference.
    With an exit interval ``until`` the integration stops at the first node
    outside it.
    """
    if not (horizon > 0 and step > 0):
        raise ConfigurationError("horizon and step must be positive")
    f, df = _as_field(model, jacobian)
    n = int(math.ceil(horizon / step - 1e-9))
    times = np.linspace(0.0, n * step, n + 1)
    xs = np.empty(n + 1)
    ph = np.empty(n + 1)
    xs[0], ph[0] = x0, 1.0
    for i in range(n):
        xs[i + 1], ph[i + 1] = _rk4_step(f, df, xs[i], ph[i], step)
        if until is not None and not (until.lower < xs[i + 1] < until.upper):
            times, xs, ph = times[:i + 2], xs[:i + 2], ph[:i + 2]
            break
    return EffectiveTrajectory(times, xs, ph, float(x0), f, df)


def hitting_time_deterministic(traj: EffectiveTrajectory, exit_spec,
                               floor: float = TRANSVERSALITY_FLOOR):
    """First time the effective trajectory reaches ``exit_spec.lower`` or ``.upper``.

    Returns ``(T, z)``.  The bracketing step is located on the stored grid
    and then refined by bisection on the RK4 dense output.
    """
    xs = traj.states
    lo, hi = exit_spec.lower, exit_spec.upper
    outside = (xs <= lo) | (xs >= hi)
    hits = np.flatnonzero(outside)
    if hits.size == 0:
        raise NoExitError("effective trajectory does not reach the boundary within the horizon")
    k = int(hits[0])
    if k == 0:
        raise PreconditionError("start point is not inside the interval")
    z = lo if xs[k] <= lo else hi
    h = traj.times[k] - traj.times[k - 1]
    a, b = 0.0, h
    for _ in range(200):
        mid = 0.5 * (a + b)
        xm, _ = traj.step_from(k - 1, mid)
        if (xm - z) * (xs[k - 1] - z) > 0:
            a = mid
        else:
            b = mid
        if b - a < 1e-15 * max(1.0, traj.times[k]):
            break
    T = float(traj.times[k - 1] + 0.5 * (a + b))
    speed = traj.velocity(z)
    if abs(speed) < floor:
        raise TangencyError(f"|lambda_bar(z)| = {abs(speed):.3e} below the transversality floor")
    return T, float(z)
