"""Radial grids and quadrature.

The grid is geometric on [r_min, r_join] and uniform on [r_join, r_max], with
the uniform spacing matched to the geometric step at the joint so the local
spacing varies smoothly.  That resolves both the r^{-gamma} singularity at the
origin and the e^{-r} tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RadialGrid:
    r: np.ndarray
    n_geo: int
    r_min: float
    r_join: float
    r_max: float
    cell: np.ndarray = field(init=False, repr=False)
    simpson: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        r = self.r
        cell = np.empty_like(r)
        cell[1:-1] = 0.5 * (r[2:] - r[:-2])
        cell[0] = 0.5 * (r[1] - r[0])
        cell[-1] = 0.5 * (r[-1] - r[-2])
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "simpson", _simpson_weights(r, self.n_geo))

    @property
    def n(self) -> int:
        return self.r.size

    def weights(self, rule: str = "simpson") -> np.ndarray:
        if rule == "simpson":
            return self.simpson
        if rule == "trapezoid":
            return self.cell
        raise ValueError(f"unknown quadrature rule {rule!r}")

    def spec(self) -> dict:
        return {"N": int(self.n), "r_min": self.r_min, "r_max": self.r_max}

    def refined(self) -> "RadialGrid":
        """Same layout with every spacing halved."""
        return make_grid(self.r_min, self.r_max, n_geo=2 * self.n_geo,
                         n_uni=2 * (self.n - 1 - self.n_geo), r_join=self.r_join)


def _simpson_pattern(m: int) -> np.ndarray:
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _simpson_weights(r: np.ndarray, n_geo: int) -> np.ndarray:
    w = np.zeros_like(r)
    if n_geo > 0:
        hs = math.log(r[n_geo] / r[0]) / n_geo
        # ∫ f dr = ∫ f(e^s) e^s ds on the geometric part
        w[: n_geo + 1] += hs * _simpson_pattern(n_geo) * r[: n_geo + 1]
    n_uni = r.size - 1 - n_geo
    if n_uni > 0:
        h = (r[-1] - r[n_geo]) / n_uni
        w[n_geo:] += h * _simpson_pattern(n_uni)
    return w


def make_grid(r_min: float = 1e-6, r_max: float = 30.0, n: int = 8001,
              r_join: float = 1.0, n_geo: int | None = None,
              n_uni: int | None = None) -> RadialGrid:
    """Build a geometric-then-uniform grid with about ``n`` nodes.

    Interval counts on both pieces are kept even so composite Simpson applies.
    """
    if not (0 < r_min < r_join < r_max):
        raise ValueError("need 0 < r_min < r_join < r_max")
    span = math.log(r_join / r_min)
    if n_geo is None or n_uni is None:
        n_geo = int(round((n - 1) / (1.0 + (r_max - r_join) / (r_join * span))))
        n_geo += n_geo % 2
        hs = span / n_geo
        n_uni = int(round((r_max - r_join) / (r_join * hs)))
        n_uni += n_uni % 2
    if n_geo % 2 or n_uni % 2:
        raise ValueError("interval counts must be even")
    geo = r_min * np.exp(np.linspace(0.0, span, n_geo + 1))
    geo[-1] = r_join
    uni = np.linspace(r_join, r_max, n_uni + 1)
    r = np.concatenate([geo, uni[1:]])
    return RadialGrid(r, n_geo, r_min, r_join, r_max)


def power_law_exponent(r0: float, r1: float, f0: float, f1: float) -> float:
    """Exponent m with f ~ r^m fitted through the first two nodes (0 if unusable)."""
    if f0 == 0 or f1 == 0 or (f0 > 0) != (f1 > 0):
        return 0.0
    return math.log(f1 / f0) / math.log(r1 / r0)


def radial_integral(grid: RadialGrid, f: np.ndarray, d: int, rule: str = "simpson",
                    inner_exponent: float | None = None) -> float:
    """∫_0^{r_max} f(r) r^{d-1} dr (no sphere factor).

    The piece (0, r_min) is integrated in closed form assuming f ~ r^m there;
    m is given or fitted from the first two nodes.
    """
    f = np.asarray(f)
    r = grid.r
    body = float(np.sum(grid.weights(rule) * f * r ** (d - 1)))
    m = inner_exponent
    if m is None:
        m = power_law_exponent(r[0], r[1], float(np.real(f[0])), float(np.real(f[1])))
    if m + d <= 0:
        raise ValueError("integrand is not integrable at the origin")
    inner = float(np.real(f[0])) * r[0] ** d / (m + d)
    return body + inner
