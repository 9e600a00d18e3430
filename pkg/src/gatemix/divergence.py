"""Numerical divergences between conditional densities.

Both distances integrate the conditional response densities over the
covariate law (uniform on the covariate box, matching the sampler) by
Monte Carlo in x, and over the response by a dense composite trapezoid
rule on an interval wide enough to hold all expert tails.  Estimates come
with a standard error from the x sample; consumers should test against
3-sigma bands.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple
import numpy as np

from .measure import MixingMeasure, log_density_grid

__all__ = ["QuadratureSpec", "DivergenceEstimate", "hellinger_sq", "total_variation",
           "response_halfwidth"]


@dataclass(frozen=True)
class QuadratureSpec:
    """Monte Carlo / trapezoid settings.

    ``y_halfwidth`` of None sizes the response interval automatically so
    that each mixture leaves less than ``tail_mass`` outside it.  The x
    batch is drawn once from ``seed``, so estimates are deterministic and
    two divergences computed with the same spec share their covariates.
    """

    n_x: int = 200
    n_y: int = 4001
    y_halfwidth: float | None = None
    seed: int = 0
    tail_mass: float = 1e-10
    x_lo: float | np.ndarray = -1.0
    x_hi: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.n_y < 1001:
            raise ValueError("n_y must be at least 1001")
        if self.n_x < 1:
            raise ValueError("n_x must be at least 1")


class DivergenceEstimate(NamedTuple):
    value: float
    se: float


def _tail_z(tail_mass: float) -> float:
    """z with 2*Phi(-z) <= tail_mass, by bisection on erfc."""
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / math.sqrt(2.0)) > tail_mass:
            lo = mid
        else:
            hi = mid
    return hi


def response_halfwidth(measures, x_lo, x_hi, tail_mass: float = 1e-10) -> float:
    """Interval half-width holding all expert tails over the covariate box."""
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    z = _tail_z(tail_mass)
    half = 0.0
    for g in measures:
        reach = np.sum(np.maximum(np.abs(g.a * x_lo), np.abs(g.a * x_hi)), axis=1)
        half = max(half, float(np.max(reach + np.abs(g.b) + z * np.sqrt(g.sigma))))
    return half


def _setup(g1: MixingMeasure, g2: MixingMeasure, spec: QuadratureSpec):
    if g1.dim != g2.dim:
        raise ValueError("measures have different covariate dimensions")
    d = g1.dim
    lo = np.broadcast_to(np.asarray(spec.x_lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(spec.x_hi, dtype=float), (d,))
    half = (spec.y_halfwidth if spec.y_halfwidth is not None
            else response_halfwidth((g1, g2), lo, hi, spec.tail_mass))
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(lo, hi, size=(spec.n_x, d))
    y = np.linspace(-half, half, spec.n_y)
    dens1 = np.exp(log_density_grid(g1, X, y))
    dens2 = np.exp(log_density_grid(g2, X, y))
    for name, dens in (("first", dens1), ("second", dens2)):
        mass = np.trapezoid(dens, y, axis=1)
        if np.any(mass < 1.0 - 1e-8):
            raise ValueError(
                f"{name} density leaves {1.0 - float(np.min(mass)):.2e} mass outside "
                f"[-{half:.3g}, {half:.3g}]; increase y_halfwidth"
            )
    return X, y, dens1, dens2


def _estimate(per_x: np.ndarray) -> DivergenceEstimate:
    value = float(np.mean(per_x))
    se = float(np.std(per_x, ddof=1) / math.sqrt(per_x.shape[0])) if per_x.shape[0] > 1 else 0.0
    return DivergenceEstimate(value=value, se=se)


def hellinger_sq(g1: MixingMeasure, g2: MixingMeasure,
                 spec: QuadratureSpec | None = None) -> DivergenceEstimate:
    """Squared Hellinger distance 0.5 E_x int (sqrt g1 - sqrt g2)^2 dy."""
    spec = spec if spec is not None else QuadratureSpec()
    _, y, dens1, dens2 = _setup(g1, g2, spec)
    per_x = 0.5 * np.trapezoid((np.sqrt(dens1) - np.sqrt(dens2)) ** 2, y, axis=1)
    return _estimate(per_x)


def total_variation(g1: MixingMeasure, g2: MixingMeasure,
                    spec: QuadratureSpec | None = None) -> DivergenceEstimate:
    """Total variation 0.5 E_x int |g1 - g2| dy."""
    spec = spec if spec is not None else QuadratureSpec()
    _, y, dens1, dens2 = _setup(g1, g2, spec)
    per_x = 0.5 * np.trapezoid(np.abs(dens1 - dens2), y, axis=1)
    return _estimate(per_x)
