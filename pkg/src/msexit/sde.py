"""Euler-Maruyama simulation of the multiscale SDE with first-exit detection.

The simulated equation is::

    dX = [(eps/delta) b(X, X/delta) + c(X, X/delta) + eps**(a1/2) psi(X, X/delta)] dt
         + sqrt(eps) sigma(X, X/delta) dW,      X_0 = x0 + eps**(a2/2) xi

Coefficients are :class:`~msexit.fields.SeparableField` objects; their fast
profiles are tabulated on a fine grid and linearly interpolated inside the
compiled kernel.  Paths are advanced in blocks so that the random-number and
drift loops vectorize across paths.  Gaussian increments of path ``p`` and
step ``i`` depend only on ``(seed, p, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numba as nb
import numpy as np

from .errors import BlowUpError, BudgetError, ConfigurationError
from .fields import SeparableField
from .homogenize import EffectiveTrajectory, RegimeClassification
from .rng import LANE_INITIAL, ZIG_F, ZIG_K, ZIG_W, fill_normals_block, keyed_normals, split_seed

DEFAULT_RESOLUTION_FACTOR = 0.1
DEFAULT_STEP_BUDGET = 2e11
DEFAULT_TABLE = 4096
BLOCK = 128

LOWER, NONE, UPPER = -1, 0, 1


@dataclass(frozen=True)
class InitialPerturbation:
    """Law of the initial perturbation ``xi``: none, a point mass or a Gaussian."""

    kind: str = "none"
    mean: float = 0.0
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "point", "gaussian"):
            raise ConfigurationError(f"unknown initial perturbation {self.kind!r}")
        if self.std < 0:
            raise ConfigurationError("std must be nonnegative")

    @property
    def expectation(self) -> float:
        return 0.0 if self.kind == "none" else self.mean

    @property
    def variance(self) -> float:
        return self.std**2 if self.kind == "gaussian" else 0.0

    def to_json(self):
        return {"kind": self.kind, "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class ExitProblemSpec:
    lower: float = -math.inf
    upper: float = math.inf
    rare_endpoint: Optional[str] = None

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigurationError("exit interval needs lower < upper")
        if self.rare_endpoint not in (None, "lower", "upper"):
            raise ConfigurationError("rare_endpoint must be 'lower', 'upper' or None")

    def contains(self, x: float) -> bool:
        return self.lower < x < self.upper

    def endpoint_value(self, which: str) -> float:
        return self.lower if which == "lower" else self.upper

    def to_json(self):
        return {"lower": _num(self.lower), "upper": _num(self.upper),
                "rare_endpoint": self.rare_endpoint}


def _num(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class ExitRecord:
    tau: float
    exit_state: float
    endpoint: str


@dataclass(frozen=True)
class PathRecord:
    times: np.ndarray
    states: np.ndarray
    seed: int
    path_index: int = 0
    exit: Optional[ExitRecord] = None


@dataclass(frozen=True)
class SimulationSpec:
    """Everything that determines a simulated path ensemble.

    ``dt`` must satisfy ``dt <= resolution_factor * delta**2 / eps`` whenever
    the fast drift ``b`` is nonzero.  ``brownian_refinement = L`` builds
    every increment from ``2**L`` consecutive normals of a grid with step
    ``dt / 2**L``, so runs at ``dt`` and ``dt/2`` can share Brownian paths.
    """

    b: SeparableField
    c: SeparableField
    sigma: SeparableField
    epsilon: float
    delta: float
    x0: float
    dt: float
    horizon: float
    seed: int = 0
    psi: Optional[SeparableField] = None
    a1: float = math.inf
    a2: float = math.inf
    xi: InitialPerturbation = field(default_factory=InitialPerturbation)
    period: float = 1.0
    resolution_factor: float = DEFAULT_RESOLUTION_FACTOR
    step_budget: float = DEFAULT_STEP_BUDGET
    brownian_refinement: int = 0
    n_table: int = DEFAULT_TABLE

    def __post_init__(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise ConfigurationError("epsilon and delta must be positive")
        if not (self.dt > 0 and self.horizon > 0):
            raise ConfigurationError("dt and horizon must be positive")
        if self.brownian_refinement < 0:
            raise ConfigurationError("brownian_refinement must be >= 0")
        for f in (self.b, self.c, self.sigma) + ((self.psi,) if self.psi is not None else ()):
            if not isinstance(f, SeparableField):
                raise ConfigurationError("simulation coefficients must be SeparableField objects")
            if f.terms and abs(f.period - self.period) > 1e-12 * self.period:
                raise ConfigurationError("coefficient period differs from the simulation period")
        if not self.b.is_zero:
            limit = self.resolution_factor * self.delta**2 / self.epsilon
            if self.dt > limit * (1 + 1e-12):
                raise ConfigurationError(
                    f"dt={self.dt:.3e} does not resolve the fast drift (limit {limit:.3e})")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def fast_scale(self) -> float:
        return self.epsilon / self.delta

    def initial_states(self, path0: int, n: int) -> np.ndarray:
        x = np.full(n, float(self.x0))
        if self.xi.kind == "none" or math.isinf(self.a2):
            return x
        scale = self.epsilon ** (self.a2 / 2.0)
        if self.xi.kind == "point":
            return x + scale * self.xi.mean
        k0, k1 = split_seed(self.seed)
        z = np.array([keyed_normals(1, np.uint64(path0 + j), LANE_INITIAL, 0, k0, k1)[0]
                      for j in range(n)])
        return x + scale * (self.xi.mean + self.xi.std * z)

    def packed_fields(self):
        fields = [self.b, self.c, self.sigma,
                  self.psi if self.psi is not None else SeparableField.zero(self.period)]
        J = max(1, max(len(f.terms) for f in fields))
        P = max(1, max((len(p.coeffs) for f in fields for p, _ in f.terms), default=1)) - 1
        polys = np.zeros((4, J, P + 1))
        tabs = np.zeros((4, J, self.n_table + 1))
        consts = np.zeros((4, J), dtype=np.int64)
        nterms = np.zeros(4, dtype=np.int64)
        for i, f in enumerate(fields):
            poly, tab, cst, n = f.pack(self.n_table, J, P)
            polys[i], tabs[i], consts[i], nterms[i] = poly, tab, cst, n
        return polys, tabs, consts, nterms

    @classmethod
    def from_regime(cls, b, c, sigma, regime: RegimeClassification, x0, dt, horizon,
                    seed=0, psi=None, xi=None, **kw) -> "SimulationSpec":
        return cls(b=b, c=c, sigma=sigma, epsilon=regime.epsilon, delta=regime.delta, x0=x0,
                   dt=dt, horizon=horizon, seed=seed, psi=psi, a1=regime.a1, a2=regime.a2,
                   xi=xi or InitialPerturbation(), **kw)

    def with_seed(self, seed: int) -> "SimulationSpec":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class DriftTable:
    """Extra slow drift ``g(x)`` tabulated on a uniform grid (clamped outside)."""

    x0: float
    spacing: float
    values: np.ndarray

    @property
    def x_end(self):
        return self.x0 + self.spacing * (self.values.size - 1)


_NO_TABLE = DriftTable(0.0, 1.0, np.zeros(2))


@nb.njit(inline="always", cache=True)
def _accumulate(i, scale, polys, tabs, consts, nterms, x, kk, ww, out, nb_):
    """``out[p] += scale * f_i(x[p], y[p])`` for the fast positions ``(kk, ww)``."""
    deg = polys.shape[2] - 1
    for j in range(nterms[i]):
        top = deg
        while top > 0 and polys[i, j, top] == 0.0:
            top -= 1
        if consts[i, j]:
            cst = scale * tabs[i, j, 0]
            if top == 0:
                a0 = cst * polys[i, j, 0]
                for p in range(nb_):
                    out[p] += a0
            else:
                for p in range(nb_):
                    pv = polys[i, j, top]
                    for d in range(top - 1, -1, -1):
                        pv = pv * x[p] + polys[i, j, d]
                    out[p] += cst * pv
        else:
            tab = tabs[i, j]
            if top == 0:
                a0 = scale * polys[i, j, 0]
                for p in range(nb_):
                    k = kk[p]
                    t0 = tab[k]
                    out[p] += a0 * (t0 + (tab[k + 1] - t0) * ww[p])
            else:
                for p in range(nb_):
                    pv = polys[i, j, top]
                    for d in range(top - 1, -1, -1):
                        pv = pv * x[p] + polys[i, j, d]
                    k = kk[p]
                    t0 = tab[k]
                    out[p] += scale * pv * (t0 + (tab[k + 1] - t0) * ww[p])


@nb.njit(cache=True)
def _kernel(x_init, path0, n_steps, dt, fast, inv_pd, psi_scale, noise, fine, lower, upper,
            polys, tabs, consts, nterms, xt0, xt_inv_h, xtab, k0, k1, KN, WN, FN,
            block, stride, x_out, tau_out, state_out, end_out, steps_out, rec):
    n = x_init.size
    M = tabs.shape[2] - 1
    sq = math.sqrt(dt / fine)
    has_tab = xtab.size > 2
    nx = xtab.size - 1
    g = np.empty((2, block))
    kk = np.empty(block, dtype=np.int64)
    ww = np.empty(block)
    drift = np.empty(block)
    sig = np.empty(block)
    xnew = np.empty(block)
    for start in range(0, n, block):
        nb_ = min(block, n - start)
        x = x_init[start:start + nb_].copy()
        active = np.ones(nb_, dtype=np.int64)
        dw = np.empty(nb_)
        n_active = nb_
        if rec.shape[1] > 0:
            for p in range(nb_):
                rec[start + p, 0] = x[p]
        i = 0
        while i < n_steps and n_active > 0:
            for p in range(nb_):
                dw[p] = 0.0
            for j in range(fine):
                nidx = i * fine + j
                r = nidx & 1
                if r == 0:
                    fill_normals_block(g, np.uint64(nidx >> 1), np.int64(path0 + start),
                                       k0, k1, KN, WN, FN)
                for p in range(nb_):
                    dw[p] += g[r, p]
            for p in range(nb_):
                s = x[p] * inv_pd
                s = (s - math.floor(s)) * M
                k = int(s)
                k = min(max(k, 0), M - 1)
                kk[p] = k
                ww[p] = s - k
                drift[p] = 0.0
                sig[p] = 0.0
            _accumulate(0, fast, polys, tabs, consts, nterms, x, kk, ww, drift, nb_)
            _accumulate(1, 1.0, polys, tabs, consts, nterms, x, kk, ww, drift, nb_)
            if psi_scale != 0.0:
                _accumulate(3, psi_scale, polys, tabs, consts, nterms, x, kk, ww, drift, nb_)
            _accumulate(2, noise * sq, polys, tabs, consts, nterms, x, kk, ww, sig, nb_)
            if has_tab:
                for p in range(nb_):
                    u = (x[p] - xt0) * xt_inv_h
                    u = min(max(u, 0.0), nx - 1e-9)
                    k = int(u)
                    drift[p] += xtab[k] + (xtab[k + 1] - xtab[k]) * (u - k)
            flag = False
            for p in range(nb_):
                xv = x[p] + drift[p] * dt + sig[p] * dw[p]
                xnew[p] = xv
                flag |= (xv <= lower) | (xv >= upper) | (not math.isfinite(xv))
            if not flag and n_active == nb_:
                for p in range(nb_):
                    x[p] = xnew[p]
            else:
                t = i * dt
                for p in range(nb_):
                    if active[p] == 0:
                        continue
                    xo = x[p]
                    xv = xnew[p]
                    x[p] = xv
                    if not math.isfinite(xv):
                        steps_out[start + p] = -1
                        active[p] = 0
                        n_active -= 1
                    elif xv <= lower or xv >= upper:
                        bnd = lower if xv <= lower else upper
                        tau_out[start + p] = t + dt * (bnd - xo) / (xv - xo)
                        state_out[start + p] = bnd
                        end_out[start + p] = -1 if xv <= lower else 1
                        steps_out[start + p] = i + 1
                        active[p] = 0
                        n_active -= 1
            i += 1
            if rec.shape[1] > 0 and i % stride == 0:
                col = i // stride
                if col < rec.shape[1]:
                    for p in range(nb_):
                        rec[start + p, col] = x[p] if active[p] else np.nan
        for p in range(nb_):
            x_out[start + p] = x[p]
            if active[p]:
                steps_out[start + p] = i


@dataclass
class EnsembleResult:
    """Terminal states and exit data of a path ensemble.

    ``endpoint`` holds -1 (lower), +1 (upper) or 0 (no exit before the
    horizon).  ``tau`` and ``exit_state`` are NaN for paths without exit.
    ``x_final`` is the state at the horizon for paths that did not exit and
    the first state outside the interval otherwise.
    """

    x_final: np.ndarray
    tau: np.ndarray
    exit_state: np.ndarray
    endpoint: np.ndarray
    steps: np.ndarray
    path_offset: int
    seed: int
    dt: float
    horizon: float
    record: Optional[np.ndarray] = None
    record_stride: int = 1

    @property
    def n_paths(self) -> int:
        return self.x_final.size

    @property
    def exited(self) -> np.ndarray:
        return self.endpoint != NONE

    def exit_records(self):
        names = {LOWER: "lower", UPPER: "upper"}
        return [ExitRecord(float(t), float(s), names[int(e)]) if e != NONE else None
                for t, s, e in zip(self.tau, self.exit_state, self.endpoint)]


def simulate_ensemble(spec: SimulationSpec, n_paths: int, exit: ExitProblemSpec | None = None,
                      path_offset: int = 0, extra_drift: DriftTable | None = None,
                      record_stride: int = 0, block: int = BLOCK) -> EnsembleResult:
    """Simulate paths ``path_offset .. path_offset + n_paths - 1``.

    With ``record_stride > 0`` every path is stored at steps that are
    multiples of the stride (NaN after exit).
    """
    n_steps = spec.n_steps
    fine = 2 ** int(spec.brownian_refinement)
    if float(n_steps) * n_paths * fine > spec.step_budget:
        raise BudgetError(f"{n_steps} steps x {n_paths} paths exceeds the step budget "
                          f"{spec.step_budget:.3g}")
    lower, upper = (-math.inf, math.inf) if exit is None else (exit.lower, exit.upper)
    x_init = spec.initial_states(path_offset, n_paths)
    if exit is not None and not np.all((x_init > lower) & (x_init < upper)):
        raise ConfigurationError("start point must lie strictly inside the exit interval")
    polys, tabs, consts, nterms = spec.packed_fields()
    tab = extra_drift or _NO_TABLE
    k0, k1 = split_seed(spec.seed)
    x_out = np.empty(n_paths)
    tau = np.full(n_paths, np.nan)
    st = np.full(n_paths, np.nan)
    end = np.zeros(n_paths, dtype=np.int64)
    steps = np.zeros(n_paths, dtype=np.int64)
    n_rec = n_steps // record_stride + 1 if record_stride > 0 else 0
    rec = np.full((n_paths, n_rec), np.nan) if n_rec else np.empty((n_paths, 0))
    psi_scale = 0.0 if math.isinf(spec.a1) else spec.epsilon ** (spec.a1 / 2.0)
    _kernel(x_init, np.int64(path_offset), np.int64(n_steps), float(spec.dt),
            float(spec.fast_scale), 1.0 / (spec.delta * spec.period), psi_scale,
            math.sqrt(spec.epsilon), np.int64(fine), float(lower), float(upper),
            polys, tabs, consts, nterms, float(tab.x0), 1.0 / tab.spacing,
            np.ascontiguousarray(tab.values, dtype=float), k0, k1, ZIG_K, ZIG_W, ZIG_F,
            np.int64(block), np.int64(max(record_stride, 1)), x_out, tau, st, end, steps, rec)
    if np.any(steps < 0):
        bad = int(np.flatnonzero(steps < 0)[0]) + path_offset
        raise BlowUpError(f"non-finite state on path {bad}")
    return EnsembleResult(x_out, tau, st, end, steps, path_offset, spec.seed, spec.dt,
                          n_steps * spec.dt, rec if n_rec else None, max(record_stride, 1))


def simulate_path(spec: SimulationSpec, exit: ExitProblemSpec | None = None,
                  path_index: int = 0, record_stride: int = 1,
                  extra_drift: DriftTable | None = None) -> PathRecord:
    """One recorded Euler-Maruyama path (stops at the first exit if ``exit`` is given)."""
    res = simulate_ensemble(spec, 1, exit, path_offset=path_index, extra_drift=extra_drift,
                            record_stride=record_stride, block=1)
    states = res.record[0]
    times = np.arange(states.size) * spec.dt * record_stride
    ex = res.exit_records()[0]
    if ex is not None:
        keep = np.isfinite(states)
        times, states = times[keep], states[keep]
        # the first outside state closes the recorded path
        times = np.append(times, res.steps[0] * spec.dt)
        states = np.append(states, res.x_final[0])
    return PathRecord(times, states, spec.seed, path_index, ex)


def detect_exit(path: PathRecord, exit: ExitProblemSpec) -> ExitRecord | None:
    """First crossing of the recorded path, with linear interpolation in time."""
    x = np.asarray(path.states, dtype=float)
    t = np.asarray(path.times, dtype=float)
    out = (x <= exit.lower) | (x >= exit.upper)
    idx = np.flatnonzero(out)
    if idx.size == 0:
        return None
    k = int(idx[0])
    if k == 0:
        raise ConfigurationError("path starts outside the interval")
    which = "lower" if x[k] <= exit.lower else "upper"
    bnd = exit.endpoint_value(which)
    tau = t[k - 1] + (t[k] - t[k - 1]) * (bnd - x[k - 1]) / (x[k] - x[k - 1])
    return ExitRecord(float(tau), float(bnd), which)


def extract_fluctuation(path: PathRecord, traj: EffectiveTrajectory, beta: float) -> np.ndarray:
    """``(X_t - Xbar_t) / beta`` on the path's time grid."""
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    xbar = np.interp(path.times, traj.times, traj.states)
    return (np.asarray(path.states) - xbar) / beta
