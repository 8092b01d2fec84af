"""JSON experiment configurations.

One document per run, discriminated by ``"kind"``.  Physical functions are
named built-ins with parameters (see :mod:`msexit.fields`); there is no
expression parsing.  A fluctuation config looks like::

    {"kind": "fluctuation",
     "coefficients": {"langevin": {"V": {"kind": "quadratic_well"},
                                   "Q": {"kind": "cosine"}, "D": 0.5}},
     "regime": {"delta_exponent": 2},
     "x0": 0.0, "horizon": 1.0,
     "x_grid": {"lower": -1.5, "upper": 1.5, "points": 61},
     "epsilons": [0.02], "n_paths": 5000,
     "dt": {"resolution_factor": 0.01},
     "seed": 7,
     "tolerances": {"variance_rel": 0.10, "ks_factor": 1.5}}

Kinds: ``fluctuation``, ``exit``, ``conditional_exit``, ``homogenize_only``
and ``scale_speed``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .fields import (Polynomial, SeparableField, TrigPolynomial, field_from_json,
                     polynomial_from_json, trig_from_json)
from .homogenize import PeriodicCoefficientSet, RegimeClassification, classify_regime
from .rough import RoughPotentialSpec
from .sde import ExitProblemSpec, InitialPerturbation

KINDS = ("fluctuation", "exit", "conditional_exit", "homogenize_only", "scale_speed")
STATISTICAL_KINDS = ("fluctuation", "exit", "conditional_exit")
MIN_PATHS = 100
SEED_ENV = "MSEXIT_SEED"

DEFAULT_TOLERANCES = {
    "fluctuation": {"variance_rel": 0.10, "mean_se": 3.0, "ks_factor": 1.5, "mean_abs": 1e-6},
    "exit": {"variance_rel": 0.10, "mean_se": 3.0, "ks_factor": 1.0, "no_exit_fraction": 0.01},
    "conditional_exit": {"variance_rel": 0.15, "rare_fraction": 0.99, "ks_factor": None,
                         "no_exit_fraction": 0.01},
    "homogenize_only": {},
    "scale_speed": {},
}


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _seed(v) -> int:
    try:
        s = int(v)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"seed must be an integer, got {v!r}") from exc
    if not 0 <= s < 2**64:
        raise ConfigurationError("seed must be a 64-bit unsigned integer")
    return s


@dataclass(frozen=True)
class CoefficientModel:
    """Simulator fields and the matching callables for the cell solvers."""

    b: SeparableField
    c: SeparableField
    sigma: SeparableField
    psi: Optional[SeparableField]
    period: float
    gamma: float

    def coefficient_set(self) -> PeriodicCoefficientSet:
        return PeriodicCoefficientSet(b=self.b, c=self.c, sigma=self.sigma, psi=self.psi,
                                      period=self.period, gamma=self.gamma)


def coefficients_from_json(doc: dict, gamma: float = math.inf) -> CoefficientModel:
    if not isinstance(doc, dict):
        raise ConfigurationError("'coefficients' must be an object")
    if "langevin" in doc:
        lv = doc["langevin"]
        V = polynomial_from_json(lv.get("V", {"kind": "quadratic_well"}))
        Q = trig_from_json(lv.get("Q", 0.0), float(lv.get("period", 1.0)))
        D = float(lv.get("D", 1.0))
        if not D > 0:
            raise ConfigurationError("D must be positive")
        per = Q.period
        return CoefficientModel(
            b=SeparableField.of_y(Q.derivative().scaled(-1.0)),
            c=SeparableField.of_x(V.derivative().scaled(-1.0), per),
            sigma=SeparableField.constant(math.sqrt(2.0 * D), per),
            psi=None, period=per, gamma=gamma)
    per = float(doc.get("period", 1.0))
    try:
        b = field_from_json(doc.get("b", 0.0), per)
        c = field_from_json(doc.get("c", 0.0), per)
        sigma = field_from_json(doc["sigma"], per)
        psi = field_from_json(doc["psi"], per) if "psi" in doc else None
    except KeyError as exc:
        raise ConfigurationError(f"missing coefficient {exc}") from exc
    return CoefficientModel(b, c, sigma, psi, per, gamma)


def rough_from_json(doc: dict) -> RoughPotentialSpec:
    try:
        iv = doc["interval"]
        interval = ExitProblemSpec(float(iv["lower"]), float(iv["upper"]),
                                   iv.get("rare_endpoint", "upper"))
        Q = trig_from_json(doc.get("Q", 0.0), float(doc.get("period", 1.0)))
        return RoughPotentialSpec(polynomial_from_json(doc.get("V", {"kind": "quadratic_well"})),
                                  Q, float(doc.get("D", 1.0)), interval, float(doc["x0"]))
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"incomplete rough-potential spec: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    doc: dict
    epsilons: tuple
    n_paths: int
    master_seed: int
    tolerances: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, seed_override: int | None = None,
                  use_env: bool = True) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
        kind = doc.get("kind")
        if kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {kind!r}")
        seed = doc.get("seed", 0)
        if use_env and os.environ.get(SEED_ENV):
            seed = os.environ[SEED_ENV]
        if seed_override is not None:
            seed = seed_override
        seed = _seed(seed)
        eps = tuple(float(e) for e in doc.get("epsilons", ()))
        if kind in STATISTICAL_KINDS:
            if not eps:
                raise ConfigurationError("'epsilons' must be a non-empty list")
            if any(not 0 < e < 1 for e in eps):
                raise ConfigurationError("every epsilon must lie in (0, 1)")
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigurationError("epsilon sweep must be strictly decreasing")
        n_paths = int(doc.get("n_paths", 0))
        if kind in STATISTICAL_KINDS and n_paths < MIN_PATHS:
            raise ConfigurationError(f"n_paths must be at least {MIN_PATHS}")
        tol = dict(DEFAULT_TOLERANCES[kind])
        tol.update(doc.get("tolerances", {}))
        return cls(kind, doc, eps, n_paths, seed, tol)

    @classmethod
    def load(cls, path, seed_override: int | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, seed_override)

    @property
    def config_hash(self) -> str:
        """Hash of the physical configuration (the seed is reported separately)."""
        doc = {k: v for k, v in self.doc.items() if k != "seed"}
        return hashlib.sha256(_canonical(doc).encode()).hexdigest()[:16]

    # ---- problem pieces -------------------------------------------------

    def regime_at(self, epsilon: float) -> RegimeClassification:
        r = self.doc.get("regime", {})
        inf = math.inf
        try:
            return classify_regime(
                epsilon, r.get("delta_exponent"),
                float(r.get("gamma", inf)), float(r.get("a1", inf)), float(r.get("a2", inf)),
                r.get("zeta"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"invalid regime block: {exc}") from exc

    @property
    def gamma(self) -> float:
        return float(self.doc.get("regime", {}).get("gamma", math.inf))

    def coefficients(self) -> CoefficientModel:
        if "coefficients" not in self.doc:
            raise ConfigurationError("config needs a 'coefficients' block")
        return coefficients_from_json(self.doc["coefficients"], self.gamma)

    def rough(self) -> RoughPotentialSpec:
        if "rough" not in self.doc:
            raise ConfigurationError("config needs a 'rough' block")
        return rough_from_json(self.doc["rough"])

    def x_grid(self) -> np.ndarray:
        g = self.doc.get("x_grid")
        if g is None:
            raise ConfigurationError("config needs an 'x_grid' block")
        if isinstance(g, list):
            return np.asarray(g, dtype=float)
        return np.linspace(float(g["lower"]), float(g["upper"]), int(g.get("points", 41)))

    @property
    def torus_points(self) -> int:
        return int(self.doc.get("torus_points", 512))

    @property
    def x0(self) -> float:
        return float(self.doc.get("x0", 0.0))

    @property
    def horizon(self) -> float:
        return float(self.doc.get("horizon", 1.0))

    @property
    def flow_step(self) -> float:
        return float(self.doc.get("flow_step", 1e-3))

    def xi(self) -> InitialPerturbation:
        x = self.doc.get("xi", {"kind": "none"})
        return InitialPerturbation(x.get("kind", "none"), float(x.get("mean", 0.0)),
                                   float(x.get("std", 0.0)))

    def exit_spec(self) -> ExitProblemSpec:
        e = self.doc.get("exit")
        if e is None:
            raise ConfigurationError("config needs an 'exit' block")
        return ExitProblemSpec(float(e.get("lower", -math.inf)), float(e.get("upper", math.inf)))

    def dt_for(self, epsilon: float, delta: float, fast_drift: bool) -> float:
        """Step size from the ``dt`` policy: ``{"dt": v}`` or ``{"resolution_factor": r}``."""
        pol = self.doc.get("dt", {"resolution_factor": 0.1})
        if isinstance(pol, (int, float)):
            pol = {"dt": float(pol)}
        if "dt" in pol:
            dt = float(pol["dt"])
        elif "resolution_factor" in pol:
            if not fast_drift:
                if "dt_max" not in pol:
                    raise ConfigurationError("without fast drift the dt policy needs 'dt_max'")
                dt = float(pol["dt_max"])
            else:
                dt = float(pol["resolution_factor"]) * delta**2 / epsilon
                if "dt_max" in pol:
                    dt = min(dt, float(pol["dt_max"]))
        else:
            raise ConfigurationError("dt policy needs 'dt' or 'resolution_factor'")
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        return dt

    @property
    def resolution_factor(self) -> float:
        pol = self.doc.get("dt", {})
        return float(pol.get("resolution_factor", 0.1)) if isinstance(pol, dict) else 0.1
