"""Concave per-user utility functions and their closed-form flow-control rules.

Each utility exposes ``value(x)``, its right derivative ``slope(x)``,
``max_slope`` (the largest right derivative on ``x >= 0``, infinite when
unbounded) and ``gamma(Q, V, x_max)``, the maximizer of
``V * value(g) - Q * g`` over ``0 <= g <= x_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


@dataclass(frozen=True)
class PiecewiseLinear:
    """``nu * min(x, theta)``: linear up to a target rate, flat after."""

    nu: float
    theta: float

    def __post_init__(self):
        if self.nu <= 0 or self.theta <= 0:
            raise ValueError("PiecewiseLinear needs nu > 0 and theta > 0")

    @property
    def max_slope(self) -> float:
        return self.nu

    def value(self, x: float) -> float:
        return self.nu * min(x, self.theta)

    def slope(self, x: float) -> float:
        """Right derivative at ``x``."""
        return self.nu if x < self.theta else 0.0

    def gamma(self, Q: float, V: float, x_max: float) -> float:
        if V == 0:
            return 0.0
        return min(self.theta, x_max) if Q <= V * self.nu else 0.0


@dataclass(frozen=True)
class LogOnePlus:
    """``ln(1 + nu * x)``, a bounded-slope stand-in for proportional fairness."""

    nu: float = 1.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("LogOnePlus needs nu > 0")

    @property
    def max_slope(self) -> float:
        return self.nu

    def value(self, x: float) -> float:
        return math.log1p(self.nu * x)

    def slope(self, x: float) -> float:
        return self.nu / (1.0 + self.nu * x)

    def gamma(self, Q: float, V: float, x_max: float) -> float:
        if V == 0:
            return 0.0
        if Q <= 0:
            return float(x_max)
        return _clamp(V / Q - 1.0 / self.nu, 0.0, x_max)


@dataclass(frozen=True)
class PureLog:
    """``ln(x)``; unbounded slope at 0, so the queue bounds do not apply."""

    @property
    def max_slope(self) -> float:
        return math.inf

    def value(self, x: float) -> float:
        return math.log(x) if x > 0 else -math.inf

    def slope(self, x: float) -> float:
        return 1.0 / x if x > 0 else math.inf

    def gamma(self, Q: float, V: float, x_max: float) -> float:
        if V == 0:
            return 0.0
        if Q <= 0:
            return float(x_max)
        return _clamp(V / Q, 0.0, x_max)


Utility = PiecewiseLinear | LogOnePlus | PureLog


def parse_utility(kind: str, nu: float = 1.0, theta: float | None = None) -> Utility:
    """Build a utility from its config name: ``log1p``, ``linear`` or ``log``."""
    kind = kind.strip().lower()
    if kind in ("log1p", "logoneplus"):
        return LogOnePlus(nu)
    if kind in ("linear", "piecewise", "piecewiselinear"):
        if theta is None:
            raise ValueError("piecewise-linear utility needs theta")
        return PiecewiseLinear(nu, theta)
    if kind in ("log", "purelog"):
        return PureLog()
    raise ValueError(f"unknown utility {kind!r}")


def utility_name(u: Utility) -> str:
    return {PiecewiseLinear: "linear", LogOnePlus: "log1p", PureLog: "log"}[type(u)]
