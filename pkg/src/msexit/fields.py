"""Named coefficient building blocks.

Configuration files describe every physical function through these classes
rather than through expression strings.  A coefficient ``f(x, y)`` of the
multiscale system is a :class:`SeparableField`, a finite sum of products
``P_j(x) * T_j(y)`` with ``P_j`` a polynomial in the slow variable and
``T_j`` a trigonometric polynomial in the fast variable.  This class of
fields is closed under the operations the library needs (derivatives,
products with constants) and can be packed into flat arrays for the
compiled path simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Polynomial:
    """``sum_k coeffs[k] * x**k``."""

    coeffs: tuple = (0.0,)

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.coeffs))
        if not c:
            c = (0.0,)
        if not all(np.isfinite(c)):
            raise ConfigurationError("polynomial coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    def derivative(self) -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polyder(self.coeffs)) or (0.0,))

    def antiderivative(self) -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polyint(self.coeffs)))

    def scaled(self, a: float) -> "Polynomial":
        return Polynomial(tuple(a * v for v in self.coeffs))

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.coeffs)

    def to_json(self) -> dict:
        return {"kind": "polynomial", "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class TrigPolynomial:
    """``const + sum_k cos[k-1] cos(2 pi k y / period) + sin[k-1] sin(2 pi k y / period)``."""

    const: float = 0.0
    cos: tuple = ()
    sin: tuple = ()
    period: float = 1.0

    def __post_init__(self):
        cos = tuple(float(v) for v in self.cos)
        sin = tuple(float(v) for v in self.sin)
        n = max(len(cos), len(sin))
        cos += (0.0,) * (n - len(cos))
        sin += (0.0,) * (n - len(sin))
        if not (self.period > 0 and np.isfinite(self.period)):
            raise ConfigurationError("trigonometric period must be positive")
        if not all(np.isfinite((self.const,) + cos + sin)):
            raise ConfigurationError("trigonometric coefficients must be finite")
        object.__setattr__(self, "const", float(self.const))
        object.__setattr__(self, "cos", cos)
        object.__setattr__(self, "sin", sin)
        object.__setattr__(self, "period", float(self.period))

    @property
    def order(self) -> int:
        return len(self.cos)

    @property
    def is_constant(self) -> bool:
        return all(v == 0.0 for v in self.cos + self.sin)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, self.const)
        w = 2.0 * np.pi / self.period
        for k, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            if a:
                out = out + a * np.cos(k * w * y)
            if b:
                out = out + b * np.sin(k * w * y)
        return out if out.ndim else float(out)

    def derivative(self) -> "TrigPolynomial":
        w = 2.0 * np.pi / self.period
        cos = tuple(k * w * b for k, b in enumerate(self.sin, start=1))
        sin = tuple(-k * w * a for k, a in enumerate(self.cos, start=1))
        return TrigPolynomial(0.0, cos, sin, self.period)

    def scaled(self, a: float) -> "TrigPolynomial":
        return TrigPolynomial(a * self.const, tuple(a * v for v in self.cos),
                              tuple(a * v for v in self.sin), self.period)

    def to_json(self) -> dict:
        return {"kind": "trig", "const": self.const, "cos": list(self.cos),
                "sin": list(self.sin), "period": self.period}

    @classmethod
    def random(cls, rng: np.random.Generator, order: int = 4, scale: float = 1.0,
               period: float = 1.0) -> "TrigPolynomial":
        """Random coefficients with amplitudes decaying like ``1/k``."""
        k = np.arange(1, order + 1)
        return cls(float(rng.normal()), tuple(scale * rng.normal(size=order) / k),
                   tuple(scale * rng.normal(size=order) / k), period)


def constant_trig(value: float = 1.0, period: float = 1.0) -> TrigPolynomial:
    return TrigPolynomial(const=value, period=period)


@dataclass(frozen=True)
class SeparableField:
    """``f(x, y) = sum_j P_j(x) T_j(y)``."""

    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        terms = tuple((p, t) for p, t in self.terms)
        for p, t in terms:
            if not isinstance(p, Polynomial) or not isinstance(t, TrigPolynomial):
                raise ConfigurationError("separable terms must be (Polynomial, TrigPolynomial)")
        periods = {t.period for _, t in terms}
        if len(periods) > 1:
            raise ConfigurationError("all fast profiles of a field must share one period")
        object.__setattr__(self, "terms", terms)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        for p, t in self.terms:
            out = out + p(x) * t(y)
        return out if out.ndim else float(out)

    @property
    def period(self) -> float | None:
        return self.terms[0][1].period if self.terms else None

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero or (t.is_constant and t.const == 0.0) for p, t in self.terms)

    @property
    def is_y_independent(self) -> bool:
        return all(t.is_constant for _, t in self.terms)

    def dx(self) -> "SeparableField":
        return SeparableField(tuple((p.derivative(), t) for p, t in self.terms))

    def dy(self) -> "SeparableField":
        return SeparableField(tuple((p, t.derivative()) for p, t in self.terms))

    def scaled(self, a: float) -> "SeparableField":
        return SeparableField(tuple((p.scaled(a), t) for p, t in self.terms))

    def __add__(self, other: "SeparableField") -> "SeparableField":
        return SeparableField(self.terms + other.terms)

    def to_json(self) -> dict:
        return {"kind": "separable",
                "terms": [{"x": p.to_json(), "y": t.to_json()} for p, t in self.terms]}

    @classmethod
    def of_x(cls, poly: Polynomial, period: float = 1.0) -> "SeparableField":
        return cls(((poly, constant_trig(1.0, period)),))

    @classmethod
    def of_y(cls, trig: TrigPolynomial) -> "SeparableField":
        return cls(((Polynomial((1.0,)), trig),))

    @classmethod
    def constant(cls, value: float, period: float = 1.0) -> "SeparableField":
        return cls(((Polynomial((float(value),)), constant_trig(1.0, period)),))

    @classmethod
    def zero(cls, period: float = 1.0) -> "SeparableField":
        return cls.constant(0.0, period)

    def pack(self, n_table: int, max_terms: int, max_degree: int):
        """Flat arrays for the compiled simulator.

        Returns ``(poly, table, is_const, n_terms)`` where ``table[j]`` holds
        ``n_table + 1`` samples of ``T_j`` on ``[0, period]`` (closed) for
        linear interpolation.
        """
        poly = np.zeros((max_terms, max_degree + 1))
        table = np.zeros((max_terms, n_table + 1))
        is_const = np.zeros(max_terms, dtype=np.int64)
        period = self.period or 1.0
        y = np.linspace(0.0, period, n_table + 1)
        for j, (p, t) in enumerate(self.terms):
            poly[j, :len(p.coeffs)] = p.coeffs
            if t.is_constant:
                is_const[j] = 1
                table[j, :] = t.const
            else:
                table[j, :] = t(y)
                table[j, -1] = table[j, 0]
        return poly, table, is_const, len(self.terms)


def _number(spec, key, default=None):
    try:
        v = spec[key] if default is None else spec.get(key, default)
        return float(v)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"missing or invalid numeric entry {key!r}") from exc


def polynomial_from_json(spec) -> Polynomial:
    if isinstance(spec, (int, float)):
        return Polynomial((float(spec),))
    if not isinstance(spec, dict):
        raise ConfigurationError(f"cannot build a polynomial from {spec!r}")
    kind = spec.get("kind")
    if kind == "polynomial":
        return Polynomial(tuple(spec.get("coeffs", (0.0,))))
    if kind == "constant":
        return Polynomial((_number(spec, "value"),))
    if kind == "monomial":
        deg = int(spec.get("degree", 1))
        return Polynomial((0.0,) * deg + (_number(spec, "coeff", 1.0),))
    if kind == "quadratic_well":
        # V(x) = k/2 (x - center)^2
        k, c0 = _number(spec, "stiffness", 1.0), _number(spec, "center", 0.0)
        return Polynomial((0.5 * k * c0 * c0, -k * c0, 0.5 * k))
    raise ConfigurationError(f"unknown polynomial kind {kind!r}")


def trig_from_json(spec, period: float | None = None) -> TrigPolynomial:
    if isinstance(spec, (int, float)):
        return TrigPolynomial(float(spec), period=period or 1.0)
    if not isinstance(spec, dict):
        raise ConfigurationError(f"cannot build a trigonometric polynomial from {spec!r}")
    kind = spec.get("kind")
    per = float(spec.get("period", period or 1.0))
    if kind == "trig":
        return TrigPolynomial(_number(spec, "const", 0.0), tuple(spec.get("cos", ())),
                              tuple(spec.get("sin", ())), per)
    if kind == "constant":
        return TrigPolynomial(_number(spec, "value"), period=per)
    if kind == "cosine":
        k = int(spec.get("harmonic", 1))
        return TrigPolynomial(0.0, (0.0,) * (k - 1) + (_number(spec, "amplitude", 1.0),), (), per)
    if kind == "sine":
        k = int(spec.get("harmonic", 1))
        return TrigPolynomial(0.0, (), (0.0,) * (k - 1) + (_number(spec, "amplitude", 1.0),), per)
    if kind == "zero":
        return TrigPolynomial(0.0, period=per)
    raise ConfigurationError(f"unknown trigonometric kind {kind!r}")


def field_from_json(spec, period: float = 1.0) -> SeparableField:
    """Build a two-variable coefficient from its JSON description.

    Accepted forms: a number (constant), ``{"kind": "constant"}``,
    ``{"kind": "of_x", "x": <polynomial>}``, ``{"kind": "of_y", "y": <trig>}``
    and ``{"kind": "separable", "terms": [{"x": ..., "y": ...}, ...]}``.
    """
    if isinstance(spec, (int, float)):
        return SeparableField.constant(float(spec), period)
    if not isinstance(spec, dict):
        raise ConfigurationError(f"cannot build a field from {spec!r}")
    kind = spec.get("kind")
    if kind == "constant":
        return SeparableField.constant(_number(spec, "value"), period)
    if kind == "zero":
        return SeparableField.zero(period)
    if kind == "of_x":
        return SeparableField.of_x(polynomial_from_json(spec["x"]), period)
    if kind == "of_y":
        return SeparableField.of_y(trig_from_json(spec["y"], period))
    if kind == "separable":
        terms = spec.get("terms")
        if not isinstance(terms, list) or not terms:
            raise ConfigurationError("separable field needs a non-empty 'terms' list")
        return SeparableField(tuple((polynomial_from_json(t.get("x", 1.0)),
                                     trig_from_json(t.get("y", 1.0), period)) for t in terms))
    raise ConfigurationError(f"unknown field kind {kind!r}")


def sum_fields(fields: Iterable[SeparableField]) -> SeparableField:
    terms: Sequence = ()
    for f in fields:
        terms = tuple(terms) + f.terms
    return SeparableField(tuple(terms))
