"""Problem parameters, the radial ground-state ODE and its monitored functionals.

The radial profile equation is

    q_rr = -((d-1)/r) q_r + (a/r²) q + q - |q|^p q

and all helpers here are plain functions of ``(r, q, q_r)`` that broadcast
over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, Optional

import numpy as np

ESCAPE_BOUND = 1e8


class ParamsError(ValueError):
    """Raised when (d, p, a) violates the admissibility constraints."""


@dataclass(frozen=True)
class Params:
    """The triple (d, p, a) and the constants derived from it.

    ``beta = sqrt((d-2)² + 4a)`` and ``sigma = 1 - (d-2)p/4`` are computed once.
    ``gamma = (d-2-beta)/2`` is the decay exponent of solutions at the origin,
    ``q ~ b r^{-gamma}``.
    """

    d: int
    p: float
    a: float
    beta: float = field(init=False, repr=False)
    sigma: float = field(init=False, repr=False)
    gamma: float = field(init=False, repr=False)
    dynamics_admissible: bool = field(init=False, repr=False)

    def __post_init__(self) -> None:
        d, p, a = self.d, float(self.p), float(self.a)
        if int(d) != d or d < 3:
            raise ParamsError(f"dimension must be an integer >= 3, got {d}")
        hardy = ((d - 2) / 2.0) ** 2
        if not (-hardy < a < 0.0):
            raise ParamsError(f"need -{hardy:g} < a < 0, got a={a:g}")
        if not (0.0 < p < 4.0 / (d - 2)):
            raise ParamsError(f"need 0 < p < {4.0 / (d - 2):g}, got p={p:g}")
        beta = math.sqrt((d - 2) ** 2 + 4.0 * a)
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", 1.0 - (d - 2) * p / 4.0)
        object.__setattr__(self, "gamma", (d - 2 - beta) / 2.0)
        a_floor = (d - 2) ** 2 / 4.0 * (-1.0 + p**2 / (p + 1) ** 2)
        ok = a > a_floor and p >= 1.0 and 4.0 / d < p < 4.0 / (d - 2)
        object.__setattr__(self, "dynamics_admissible", bool(ok))

    @property
    def sphere_area(self) -> float:
        """|S^{d-1}|, the factor turning radial integrals into integrals over R^d."""
        return 2.0 * math.pi ** (self.d / 2.0) / math.gamma(self.d / 2.0)

    def sector_exponent(self, mu: float = 0.0) -> float:
        """Regular power at the origin for the potential (a + mu)/r²."""
        d = self.d
        return -(d - 2) / 2.0 + 0.5 * math.sqrt((d - 2) ** 2 + 4.0 * (self.a + mu))

    def require_dynamics(self) -> None:
        if not self.dynamics_admissible:
            raise ParamsError(
                f"(d, p, a) = ({self.d}, {self.p:g}, {self.a:g}) is outside the range "
                "where the dynamics results apply"
            )

    def as_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "a": self.a}


class OdeState(NamedTuple):
    r: float
    q: float
    qr: float


def power_term(q, p):
    """|q|^p q written as sign(q)|q|^{p+1} so negative q stays well defined."""
    return np.sign(q) * np.abs(q) ** (p + 1)


def rhs(state: OdeState, params: Params):
    """Return (dq/dr, dq_r/dr) for the radial profile equation."""
    r, q, qr = state
    d, p, a = params.d, params.p, params.a
    dqr = -((d - 1) / r) * qr + (a / r**2) * q + q - power_term(q, p)
    return qr, dqr


def energy_H(state: OdeState, params: Params):
    r, q, qr = state
    p, a = params.p, params.a
    return 0.5 * qr**2 - a / (2 * r**2) * q**2 - 0.5 * q**2 + np.abs(q) ** (p + 2) / (p + 2)


def pohozaev(state: OdeState, params: Params):
    """Pohozaev-type quantities (H1, H2) at a point of a trajectory."""
    r, q, qr = state
    d, p = params.d, params.p
    h1 = 2 * r**d * energy_H(state, params) + (d - 2) * r ** (d - 1) * q * qr
    h2 = h1 + p / (p + 2) * r**d * np.abs(q) ** (p + 2)
    return h1, h2


def energy_H_derivative(state: OdeState, params: Params):
    """dH/dr = -(d-1)/r q_r² + a/r³ q², negative for a < 0 and q ≢ 0."""
    r, q, qr = state
    return -(params.d - 1) / r * qr**2 + params.a / r**3 * q**2


def h1_derivative(state: OdeState, params: Params):
    """Closed form of dH1/dr along solutions."""
    r, q, _ = state
    d, p = params.d, params.p
    return r ** (d - 1) * ((4 - p * (d - 2)) / (p + 2) * np.abs(q) ** (p + 2) - 2 * q**2)


def q1_of(state: OdeState, params: Params):
    """Scaling derivative q1 = (2/p) q + r q_r."""
    r, q, qr = state
    return 2.0 / params.p * q + r * qr


def q1_ratio_derivative(state: OdeState, params: Params):
    """Closed form of d(q1/q)/dr = -H2 / (r^{d-1} q²)."""
    r, q, _ = state
    _, h2 = pohozaev(state, params)
    return -h2 / (r ** (params.d - 1) * q**2)


def h1_threshold(params: Params) -> float:
    """Value of q where dH1/dr changes sign."""
    d, p = params.d, params.p
    return (2 * (p + 2) / (4 - p * (d - 2))) ** (1.0 / p)


EVENT_KINDS = ("q_zero", "qr_zero", "escaped", "tail_entered")


class Event(NamedTuple):
    kind: str
    r: float


@dataclass
class Trajectory:
    """Adaptive samples of one radial solution plus its event markers.

    ``dense`` (when present) maps radii to stacked state rows
    ``[q, q_r, ...]`` using the integrator's interpolant; extra rows carry the
    variational solution when it was co-integrated.
    """

    r: np.ndarray
    q: np.ndarray
    qr: np.ndarray
    params: Params
    events: list = field(default_factory=list)
    valid: bool = True
    message: str = ""
    dense: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    extra: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.r.size > 1 and not np.all(np.diff(self.r) > 0):
            raise ValueError("trajectory radii must be strictly increasing")
        if len(self.events) > 1:
            raise ValueError("a trajectory carries at most one terminating event")

    @property
    def samples(self) -> Iterator[OdeState]:
        for r, q, qr in zip(self.r, self.q, self.qr):
            yield OdeState(float(r), float(q), float(qr))

    @property
    def event(self) -> Optional[Event]:
        return self.events[0] if self.events else None

    @property
    def r_end(self) -> float:
        return float(self.r[-1])

    def __call__(self, r):
        """Dense evaluation of (q, q_r) at radii inside the integrated range."""
        if self.dense is None:
            raise RuntimeError("trajectory was integrated without dense output")
        y = self.dense(np.atleast_1d(np.asarray(r, dtype=float)))
        return y[0], y[1]
