"""Periodic functions sampled on a uniform grid over one period.

The grid covers ``[0, period)`` with nodes ``y_k = k * period / n``.  All
quadrature is the periodic trapezoid rule, which for smooth periodic
integrands converges faster than any power of the spacing.

Besides the finite-difference derivative required for local operators, the
module exposes FFT-based derivative and antiderivative helpers; the cell
problem solvers rely on them for their spectral accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InvalidFieldError

MIN_POINTS = 8


@dataclass(frozen=True)
class TorusGrid:
    period: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.period) and self.period > 0):
            raise InvalidFieldError(f"period must be positive, got {self.period!r}")
        if int(self.n_points) != self.n_points or self.n_points < MIN_POINTS:
            raise InvalidFieldError(f"n_points must be an integer >= {MIN_POINTS}")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self) -> float:
        return self.period / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) * self.spacing

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers matching ``numpy.fft.fft`` ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    def refined(self, factor: int = 2) -> "TorusGrid":
        return TorusGrid(self.period, self.n_points * factor)


class PeriodicField:
    """Samples of a periodic function on a :class:`TorusGrid`.

    Calling the field evaluates the piecewise linear interpolant, wrapping
    the argument into one period.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.n_points,):
            raise InvalidFieldError(
                f"expected {grid.n_points} samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidFieldError("field samples must be finite")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: TorusGrid, func: Callable) -> "PeriodicField":
        return cls(grid, np.broadcast_to(func(grid.nodes), (grid.n_points,)))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        s = np.mod(y, self.grid.period) / self.grid.spacing
        k = np.floor(s).astype(np.int64)
        w = s - k
        k %= self.grid.n_points
        v = self.values
        out = (1.0 - w) * v[k] + w * v[(k + 1) % self.grid.n_points]
        return out if out.ndim else float(out)

    def __len__(self):
        return self.grid.n_points

    def __repr__(self):
        return f"PeriodicField(period={self.grid.period}, n_points={self.grid.n_points})"

    def _lift(self, other):
        if isinstance(other, PeriodicField):
            if other.grid != self.grid:
                raise InvalidFieldError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return PeriodicField(self.grid, self.values + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return PeriodicField(self.grid, self.values - self._lift(other))

    def __rsub__(self, other):
        return PeriodicField(self.grid, self._lift(other) - self.values)

    def __mul__(self, other):
        return PeriodicField(self.grid, self.values * self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return PeriodicField(self.grid, self.values / self._lift(other))

    def __neg__(self):
        return PeriodicField(self.grid, -self.values)

    def map(self, func: Callable) -> "PeriodicField":
        return PeriodicField(self.grid, func(self.values))


def _check(f: PeriodicField) -> None:
    if not isinstance(f, PeriodicField):
        raise InvalidFieldError(f"expected PeriodicField, got {type(f).__name__}")


def cell_average(f: PeriodicField) -> float:
    """Mean value over one period (periodic trapezoid rule)."""
    _check(f)
    return float(np.mean(f.values))


def integrate(f: PeriodicField) -> float:
    """Integral over one period."""
    return cell_average(f) * f.grid.period


def periodic_derivative(f: PeriodicField) -> PeriodicField:
    """Second-order centered difference with wrap-around."""
    _check(f)
    v = f.values
    return PeriodicField(f.grid, (np.roll(v, -1) - np.roll(v, 1)) / (2.0 * f.grid.spacing))


def periodic_second_derivative(f: PeriodicField) -> PeriodicField:
    """Second-order three-point second difference with wrap-around."""
    _check(f)
    v = f.values
    return PeriodicField(f.grid, (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / f.grid.spacing**2)


def cumulative_integral(f: PeriodicField) -> np.ndarray:
    """Cumulative trapezoid ``int_0^{y_k} f`` at the nodes plus the full period.

    Returns ``n_points + 1`` values; the last entry is the integral over the
    whole period.
    """
    _check(f)
    v = f.values
    ext = np.append(v, v[0])
    out = np.empty(v.size + 1)
    out[0] = 0.0
    np.cumsum(0.5 * (ext[1:] + ext[:-1]) * f.grid.spacing, out=out[1:])
    return out


def antiderivative_on_period(f: PeriodicField, y: float) -> float:
    """``int_0^y f`` for ``0 <= y <= period``, integrating the linear interpolant."""
    _check(f)
    grid = f.grid
    y = float(y)
    if not (0.0 <= y <= grid.period):
        raise DomainError(f"y={y} outside [0, {grid.period}]")
    if y == 0.0:
        return 0.0
    cum = cumulative_integral(f)
    s = y / grid.spacing
    k = min(int(np.floor(s)), grid.n_points - 1)
    w = s - k
    v0 = f.values[k]
    v1 = f.values[(k + 1) % grid.n_points]
    return float(cum[k] + grid.spacing * (w * v0 + 0.5 * w * w * (v1 - v0)))


def spectral_derivative(f: PeriodicField, order: int = 1) -> PeriodicField:
    """Derivative of the trigonometric interpolant; the Nyquist mode is dropped."""
    _check(f)
    n = f.grid.n_points
    k = f.grid.wavenumbers
    fh = np.fft.fft(f.values) * (1j * k) ** order
    if n % 2 == 0:
        fh[n // 2] = 0.0
    return PeriodicField(f.grid, np.fft.ifft(fh).real)


def spectral_antiderivative(f: PeriodicField) -> PeriodicField:
    """Zero-mean periodic antiderivative of ``f - <f>``."""
    _check(f)
    n = f.grid.n_points
    k = f.grid.wavenumbers
    fh = np.fft.fft(f.values)
    out = np.zeros_like(fh)
    out[1:] = fh[1:] / (1j * k[1:])
    if n % 2 == 0:
        out[n // 2] = 0.0
    return PeriodicField(f.grid, np.fft.ifft(out).real)
