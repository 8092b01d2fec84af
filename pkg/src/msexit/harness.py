"""Reproducible Monte Carlo experiments and their reports.

Sample statistics are carried as exact rational count/sum/sum-of-squares
triples, so merging the reports of disjoint path ranges reproduces a
single run over their union bit for bit.  Path ``p`` of a run always uses
the random stream ``(master_seed, p)``, whatever the chunking.
"""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .config import STATISTICAL_KINDS, ExperimentConfig
from .errors import ConfigurationError, MsexitError, SampleSizeError
from .homogenize import (effective_flow, hitting_time_deterministic, homogenize)
from .limits import (LimitProcessSpec, exit_law_projection, h_term,
                     limit_fluctuation_moments)
from .rough import conditional_exit_stats, scale_distance, simulate_conditioned_ensemble
from .sde import LOWER, NONE, UPPER, SimulationSpec, simulate_ensemble
from .torus import TorusGrid

KS_BAND = 1.63  # asymptotic two-sided 1% point of sqrt(N) * KS
MIN_KS_SAMPLES = 50
CHUNK = 2048


def ks_statistic(samples, reference_cdf: Callable) -> float:
    """Two-sided Kolmogorov-Smirnov distance between the sample and a continuous law."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < MIN_KS_SAMPLES:
        raise SampleSizeError(f"KS statistic needs at least {MIN_KS_SAMPLES} samples, got {n}")
    F = np.asarray(reference_cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass
class Accumulator:
    """Exact ``(count, sum, sum of squares)`` of a sample."""

    count: int = 0
    total: Fraction = Fraction(0)
    total_sq: Fraction = Fraction(0)

    def add(self, values) -> "Accumulator":
        for v in np.asarray(values, dtype=float).ravel():
            f = Fraction(float(v))
            self.count += 1
            self.total += f
            self.total_sq += f * f
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.count + other.count, self.total + other.total,
                           self.total_sq + other.total_sq)

    @property
    def mean(self) -> float:
        return float(self.total / self.count) if self.count else math.nan

    @property
    def variance(self) -> float:
        """Unbiased sample variance, rounded once from the exact value."""
        n = self.count
        if n < 2:
            return math.nan
        return float((self.total_sq - self.total * self.total / n) / (n - 1))

    @property
    def standard_error(self) -> float:
        v = self.variance
        return math.sqrt(max(v, 0.0) / self.count) if self.count > 1 else math.nan

    def to_json(self) -> dict:
        return {"count": self.count, "sum": str(self.total), "sum_sq": str(self.total_sq)}

    @classmethod
    def from_json(cls, doc: dict) -> "Accumulator":
        return cls(int(doc["count"]), Fraction(doc["sum"]), Fraction(doc["sum_sq"]))


def _variance_se(samples: np.ndarray, var: float) -> float:
    n = samples.size
    if n < 2:
        return math.nan
    m4 = float(np.mean((samples - np.mean(samples)) ** 4))
    return math.sqrt(max(m4 - var * var, 0.0) / n)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: "
                f"{self.value:.6g} vs {self.threshold:.6g}")

    def to_json(self) -> dict:
        return {"name": self.name, "value": _j(self.value), "threshold": _j(self.threshold),
                "passed": bool(self.passed)}


def _j(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


@dataclass
class EpsilonBlock:
    """Normalized samples and statistics at one ``eps``."""

    epsilon: float
    params: dict
    predicted: dict
    samples: np.ndarray
    path_start: int
    endpoint_tally: dict = field(default_factory=dict)
    exit_failures: int = 0
    extra: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def accumulator(self) -> Accumulator:
        return Accumulator().add(self.samples)

    def statistics(self) -> dict:
        acc = self.accumulator
        var = acc.variance
        out = {"n": acc.count, "mean": acc.mean, "variance": var,
               "mean_se": acc.standard_error, "variance_se": _variance_se(self.samples, var)}
        pv = self.predicted.get("variance")
        if pv is not None and pv > 0 and acc.count >= MIN_KS_SAMPLES:
            law = norm(self.predicted.get("mean", 0.0), math.sqrt(pv))
            out["ks"] = ks_statistic(self.samples, law.cdf)
        return out

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "params": self.params,
                "predicted": {k: _j(v) for k, v in self.predicted.items()},
                "empirical": {k: _j(v) for k, v in self.statistics().items()},
                "accumulator": self.accumulator.to_json(),
                "path_range": [self.path_start, self.path_start + int(self.samples.size)
                               + self.exit_failures],
                "endpoint_tally": self.endpoint_tally, "exit_failures": self.exit_failures,
                **({"extra": {k: _j(v) for k, v in self.extra.items()}} if self.extra else {}),
                "checks": [c.to_json() for c in self.checks]}


@dataclass
class EnsembleReport:
    kind: str
    config_hash: str
    master_seed: int
    blocks: list
    metadata: dict
    wall_time: float = 0.0
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.all_checks())

    def all_checks(self):
        out = list(self.checks)
        for b in self.blocks:
            out.extend(b.checks)
        return out

    def to_json(self, include_wall_time: bool = False) -> dict:
        doc = {"kind": self.kind, "config_hash": self.config_hash,
               "master_seed": self.master_seed, "metadata": self.metadata,
               "blocks": [b.to_json() for b in self.blocks],
               "checks": [c.to_json() for c in self.checks], "passed": self.passed}
        if include_wall_time:
            doc["wall_time_s"] = self.wall_time
        return doc

    def dumps(self, include_wall_time: bool = False) -> str:
        return json.dumps(self.to_json(include_wall_time), indent=2, sort_keys=True) + "\n"

    def samples_csv(self) -> str:
        """One column per ``eps``; the header names the config hash."""
        cols = [b.samples for b in self.blocks]
        n = max((c.size for c in cols), default=0)
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash},master_seed={self.master_seed}\n")
        buf.write(",".join(f"eps={b.epsilon!r}" for b in self.blocks) + "\n")
        for i in range(n):
            buf.write(",".join(repr(float(c[i])) if i < c.size else "" for c in cols) + "\n")
        return buf.getvalue()

    def lines(self) -> list[str]:
        return [c.line() for c in self.all_checks()]


def merge_reports(first: EnsembleReport, second: EnsembleReport,
                  config: ExperimentConfig) -> EnsembleReport:
    """Report of the union of two adjacent path ranges of the same config and seed."""
    if (first.config_hash, first.master_seed) != (second.config_hash, second.master_seed):
        raise ConfigurationError("reports come from different configs or seeds")
    if len(first.blocks) != len(second.blocks):
        raise ConfigurationError("reports cover different epsilon sweeps")
    a_first = first.blocks and second.blocks and first.blocks[0].path_start \
        <= second.blocks[0].path_start
    lo, hi = (first, second) if a_first else (second, first)
    blocks = []
    for a, b in zip(lo.blocks, hi.blocks):
        end_a = a.path_start + a.samples.size + a.exit_failures
        if end_a != b.path_start:
            raise ConfigurationError("path ranges are not adjacent")
        tally = {k: a.endpoint_tally.get(k, 0) + b.endpoint_tally.get(k, 0)
                 for k in set(a.endpoint_tally) | set(b.endpoint_tally)}
        blk = EpsilonBlock(a.epsilon, a.params, a.predicted,
                           np.concatenate([a.samples, b.samples]), a.path_start, tally,
                           a.exit_failures + b.exit_failures, dict(a.extra))
        blk.checks = _block_checks(config, blk)
        blocks.append(blk)
    meta = dict(lo.metadata, n_paths=lo.metadata["n_paths"] + hi.metadata["n_paths"],
                path_range=[lo.metadata["path_range"][0], hi.metadata["path_range"][1]])
    return EnsembleReport(first.kind, first.config_hash, first.master_seed, blocks,
                          meta, first.wall_time + second.wall_time, list(first.checks))


# --------------------------------------------------------------------------
# Checks
# --------------------------------------------------------------------------

def _block_checks(config: ExperimentConfig, blk: EpsilonBlock) -> list:
    tol = config.tolerances
    st = blk.statistics()
    checks = []
    pm, pv = blk.predicted.get("mean"), blk.predicted.get("variance")
    n_total = blk.samples.size + blk.exit_failures
    if "no_exit_fraction" in tol and tol["no_exit_fraction"] is not None:
        frac = blk.exit_failures / max(n_total, 1)
        checks.append(Check(f"eps={blk.epsilon:g} no-exit fraction", frac,
                            tol["no_exit_fraction"], frac <= tol["no_exit_fraction"]))
    if st["n"] < 2:
        checks.append(Check(f"eps={blk.epsilon:g} sample size", st["n"], 2, False))
        return checks
    if pv is not None and tol.get("variance_rel") is not None:
        if pv > 0:
            rel = abs(st["variance"] - pv) / pv
            checks.append(Check(f"eps={blk.epsilon:g} variance relative error", rel,
                                tol["variance_rel"], rel <= tol["variance_rel"]))
        else:
            # a degenerate limit leaves no scale for a relative error
            lim = tol.get("variance_abs", 1e-12)
            checks.append(Check(f"eps={blk.epsilon:g} variance", st["variance"], lim,
                                st["variance"] <= lim))
    if pm is not None and tol.get("mean_se") is not None:
        se = st["mean_se"]
        if se > 0:
            z = abs(st["mean"] - pm) / se
            checks.append(Check(f"eps={blk.epsilon:g} mean offset in standard errors", z,
                                tol["mean_se"], z <= tol["mean_se"]))
        else:
            d = abs(st["mean"] - pm)
            lim = tol.get("mean_abs", 1e-6)
            checks.append(Check(f"eps={blk.epsilon:g} mean offset", d, lim, d <= lim))
    if "ks" in st and tol.get("ks_factor") is not None:
        band = tol["ks_factor"] * KS_BAND / math.sqrt(st["n"])
        checks.append(Check(f"eps={blk.epsilon:g} KS statistic", st["ks"], band,
                            st["ks"] <= band))
    if tol.get("rare_fraction") is not None and blk.endpoint_tally:
        frac = blk.endpoint_tally.get("upper", 0) / max(n_total, 1)
        checks.append(Check(f"eps={blk.epsilon:g} fraction at rare endpoint", frac,
                            tol["rare_fraction"], frac >= tol["rare_fraction"]))
    return checks


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------

def _chunks(start: int, stop: int, size: int = CHUNK):
    for a in range(start, stop, size):
        yield a, min(size, stop - a)


def _tally(endpoints: np.ndarray) -> dict:
    return {"lower": int(np.sum(endpoints == LOWER)), "upper": int(np.sum(endpoints == UPPER)),
            "none": int(np.sum(endpoints == NONE))}


def _model(config: ExperimentConfig):
    cm = config.coefficients()
    torus = TorusGrid(cm.period, config.torus_points)
    model = homogenize(cm.coefficient_set(), config.x_grid(), torus)
    return cm, model


def _with_context(exc: MsexitError, eps: float, path: int | None = None) -> MsexitError:
    where = f" (eps={eps:g}" + (f", paths from {path})" if path is not None else ")")
    exc.args = (str(exc.args[0] if exc.args else exc) + where,) + tuple(exc.args[1:])
    return exc


def _sim_spec(config, cm, regime, dt, horizon):
    return SimulationSpec.from_regime(cm.b, cm.c, cm.sigma, regime, config.x0, dt, horizon,
                                      seed=config.master_seed, psi=cm.psi, xi=config.xi(),
                                      period=cm.period,
                                      step_budget=float(config.doc.get("step_budget", 2e11)))


def _run_fluctuation(config: ExperimentConfig, start: int, stop: int):
    cm, model = _model(config)
    T = config.horizon
    traj = effective_flow(model, config.x0, T, config.flow_step)
    xbar = float(traj.states[-1])
    blocks = []
    for eps in config.epsilons:
        regime = config.regime_at(eps)
        spec_l = LimitProcessSpec.from_model(model, regime, traj, config.xi())
        mean, var = limit_fluctuation_moments(spec_l, T)
        dt_max = config.dt_for(eps, regime.delta, not cm.b.is_zero)
        dt = T / math.ceil(T / dt_max - 1e-9)
        sim = _sim_spec(config, cm, regime, dt, T)
        xs = []
        for a, n in _chunks(start, stop):
            try:
                xs.append(simulate_ensemble(sim, n, path_offset=a).x_final)
            except MsexitError as exc:
                raise _with_context(exc, eps, a)
        eta = (np.concatenate(xs) - xbar) / regime.beta
        pred = {"mean": mean, "variance": var, "xbar_T": xbar,
                "h_term": h_term(spec_l, T) if model.tables["J_bar"].any() else 0.0}
        params = {"delta": regime.delta, "dt": dt, "beta": regime.beta,
                  "regime": regime.as_dict()}
        blk = EpsilonBlock(eps, params, pred, eta, start)
        blk.checks = _block_checks(config, blk)
        blocks.append(blk)
    meta = {"residuals": model.residuals, "torus_points": config.torus_points,
            "x_grid_points": int(model.x_grid.size)}
    return blocks, meta


def _run_exit(config: ExperimentConfig, start: int, stop: int):
    cm, model = _model(config)
    exit_spec = config.exit_spec()
    flow_h = float(config.doc.get("flow_horizon", 10.0 * config.horizon))
    traj = effective_flow(model, config.x0, flow_h, config.flow_step, until=exit_spec)
    T, z = hitting_time_deterministic(traj, exit_spec)
    sim_h = float(config.doc.get("simulation_horizon", 2.0 * T + 1.0))
    blocks = []
    for eps in config.epsilons:
        regime = config.regime_at(eps)
        spec_l = LimitProcessSpec.from_model(model, regime, traj, config.xi())
        moments = limit_fluctuation_moments(spec_l, T)
        pred = exit_law_projection(spec_l, (T, z), moments)
        dt = config.dt_for(eps, regime.delta, not cm.b.is_zero)
        sim = _sim_spec(config, cm, regime, dt, sim_h)
        taus, ends = [], []
        for a, n in _chunks(start, stop):
            try:
                res = simulate_ensemble(sim, n, exit_spec, path_offset=a)
            except MsexitError as exc:
                raise _with_context(exc, eps, a)
            taus.append(res.tau)
            ends.append(res.endpoint)
        tau, end = np.concatenate(taus), np.concatenate(ends)
        ok = end != NONE
        samples = (tau[ok] - T) / regime.beta
        params = {"delta": regime.delta, "dt": dt, "beta": regime.beta,
                  "regime": regime.as_dict(), "simulation_horizon": sim_h}
        blk = EpsilonBlock(eps, params,
                           {"mean": pred.mean_shift, "variance": pred.time_correction_var,
                            **pred.to_json()},
                           samples, start, _tally(end), int(np.sum(~ok)))
        blk.checks = _block_checks(config, blk)
        blocks.append(blk)
    return blocks, {"residuals": model.residuals, "T": T, "z": z}


def _run_conditional(config: ExperimentConfig, start: int, stop: int):
    rough = config.rough()
    rd = config.doc["rough"]
    T, var = conditional_exit_stats(rough)
    anchor = rd.get("anchor", 0.0)
    blocks = []
    for eps in config.epsilons:
        delta = rd.get("delta")
        if delta == "auto":
            delta = min(eps**3, 1e-4)
        delta = None if delta is None else float(delta)
        rough_q = delta is not None and not rough.Q.is_constant
        if rough_q:
            dt = config.dt_for(eps, delta, True)
        else:
            dt = config.dt_for(eps, 1.0, False)
        horizon = float(rd.get("horizon", 3.0 * T))
        taus, ends = [], []
        for a, n in _chunks(start, stop):
            try:
                res = simulate_conditioned_ensemble(rough, eps, delta, dt, config.master_seed,
                                                    n, path_offset=a, anchor=anchor,
                                                    horizon=horizon)
            except MsexitError as exc:
                raise _with_context(exc, eps, a)
            taus.append(res.tau)
            ends.append(res.endpoint)
        tau, end = np.concatenate(taus), np.concatenate(ends)
        ok = end == UPPER
        samples = (tau[ok] - T) / math.sqrt(eps)
        params = {"delta": delta, "dt": dt, "beta": math.sqrt(eps), "anchor": anchor,
                  "horizon": horizon}
        blk = EpsilonBlock(eps, params, {"mean": 0.0, "variance": var, "T": T}, samples, start,
                           _tally(end), int(np.sum(end == NONE)),
                           {"rare_endpoint": rough.rare_endpoint,
                            "rare_endpoint_value": rough.x_rare,
                            "exits_at_other_endpoint": int(np.sum(end == LOWER))})
        blk.checks = _block_checks(config, blk)
        blocks.append(blk)
    meta = {"rare_endpoint": rough.rare_endpoint, "rare_endpoint_value": rough.x_rare,
            "T": T, "predicted_variance": var}
    return blocks, meta


def _run_homogenize(config: ExperimentConfig):
    cm, model = _model(config)
    tol = model.tolerances
    checks = []
    for k, v in sorted(model.residuals.items()):
        lim = tol["normalization"] if k == "normalization" else tol["residual"]
        checks.append(Check(f"residual {k}", v, lim, v <= lim))
    return model, checks


def _run_scale_speed(config: ExperimentConfig):
    rough = config.rough()
    ss = config.doc.get("scale_speed", {})
    eps = float(ss.get("epsilon", 0.05))
    deltas = [float(d) for d in ss.get("deltas", [1e-2, 1e-3, 1e-4])]
    dist = scale_distance(rough, eps, deltas, int(ss.get("points", 401)),
                          float(config.doc["rough"].get("anchor", 0.0)))
    mono = all(b < a for a, b in zip(dist, dist[1:]))
    checks = [Check(f"sup|u(delta) - u| decreasing along delta={deltas}",
                    float(max((b - a for a, b in zip(dist, dist[1:])), default=-1.0)), 0.0,
                    mono)]
    return {"epsilon": eps, "deltas": deltas, "distances": dist}, checks


def run_ensemble(config: ExperimentConfig, path_range: tuple | None = None) -> EnsembleReport:
    """Run the configured experiment over paths ``path_range = (start, stop)``."""
    t0 = time.perf_counter()
    start, stop = path_range or (0, config.n_paths)
    if config.kind in STATISTICAL_KINDS and not 0 <= start < stop:
        raise ConfigurationError("path_range must satisfy 0 <= start < stop")
    checks: list = []
    if config.kind == "fluctuation":
        blocks, meta = _run_fluctuation(config, start, stop)
    elif config.kind == "exit":
        blocks, meta = _run_exit(config, start, stop)
    elif config.kind == "conditional_exit":
        blocks, meta = _run_conditional(config, start, stop)
    elif config.kind == "homogenize_only":
        model, checks = _run_homogenize(config)
        blocks, meta = [], {"residuals": model.residuals}
    elif config.kind == "scale_speed":
        meta, checks = _run_scale_speed(config)
        blocks = []
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ConfigurationError(config.kind)
    meta = dict(meta, n_paths=stop - start, path_range=[start, stop])
    return EnsembleReport(config.kind, config.config_hash, config.master_seed, blocks,
                          _jsonable(meta), time.perf_counter() - t0, checks)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    return _j(v)


def summarize_exit(records, T: float, beta: float) -> dict:
    """Normalized exit-time samples ``(tau - T)/beta`` with moments and endpoint tallies."""
    recs = [r for r in records if r is not None]
    if not records:
        raise ConfigurationError("no exit records")
    s = np.array([(r.tau - T) / beta for r in recs])
    acc = Accumulator().add(s)
    tally = {"lower": sum(r.endpoint == "lower" for r in recs),
             "upper": sum(r.endpoint == "upper" for r in recs),
             "none": len(records) - len(recs)}
    return {"samples": s, "n": acc.count, "mean": acc.mean,
            "variance": acc.variance if acc.count > 1 else 0.0,
            "mean_se": acc.standard_error if acc.count > 1 else 0.0, "endpoints": tally}
