"""Radial time evolution near the ground-state orbit.

The equation is i u_t = L_a u - |u|^p u.  Space uses the sector-0 operator of
:mod:`hardynls.spectral`, so every quadratic form below is the discrete one
and the discrete ground state is an exact standing wave of the scheme.
Integrals carry the sphere factor, i.e. they are over R^d.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import interpolate
from scipy.linalg import lapack

from . import spectral
from .groundstate import GroundStateProfile, _fmt
from .grid import RadialGrid
from .ode import Params

log = logging.getLogger(__name__)

DIRECTIONS = ("stable_minus", "stable_plus", "unstable_plus", "unstable_minus")


class StepError(RuntimeError):
    """The implicit step's fixed-point iteration did not converge."""


class ModulationError(ValueError):
    """The field is too far from the ground-state orbit to decompose."""


@dataclass
class ComplexField:
    grid: RadialGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.r.shape:
            raise ValueError("field values must live on the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")


@dataclass
class Model:
    """Discrete problem: L_a in tridiagonal form plus the discrete ground state.

    ``Q`` solves A_a Q + W Q - W Q^{p+1} = 0 to round-off, where A_a is the
    stiffness matrix of L_a and W the lumped weights.
    """

    params: Params
    grid: RadialGrid
    diag: np.ndarray
    off: np.ndarray
    weight: np.ndarray
    Q: np.ndarray
    newton_residual: float = math.nan
    K_Q: float = field(init=False)
    M_Q: float = field(init=False)
    P_Q: float = field(init=False)
    E_Q: float = field(init=False)
    _rowsum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rs = self.diag.copy()
        rs[:-1] += self.off
        rs[1:] += self.off
        self._rowsum = rs
        self.K_Q = self.kinetic(self.Q)
        self.M_Q = self.mass(self.Q)
        self.P_Q = self.lp(self.Q)
        self.E_Q = 0.5 * self.K_Q - self.P_Q / (self.params.p + 2)

    @property
    def S(self) -> float:
        return self.params.sphere_area

    @property
    def delta0(self) -> float:
        return 1e-2 * self.K_Q

    def stiffness(self, v):
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def kinetic(self, u) -> float:
        """‖u‖²_{Ḣ¹_a}.

        Written as a sum of squared differences plus a row-sum term, which
        avoids the cancellation in u^H A u and is phase invariant to round-off.
        """
        u = np.asarray(u)
        grad = float(np.sum(-self.off * np.abs(np.diff(u)) ** 2))
        return self.S * (grad + float(np.sum(self._rowsum * np.abs(u) ** 2)))

    def mass(self, u) -> float:
        return self.S * float(np.sum(self.weight * np.abs(u) ** 2))

    def lp(self, u) -> float:
        return self.S * float(np.sum(self.weight * np.abs(u) ** (self.params.p + 2)))

    def energy(self, u) -> float:
        return 0.5 * self.kinetic(u) - self.lp(u) / (self.params.p + 2)

    def pair(self, f, g) -> float:
        """Re ⟨(L_a + 1) f, g⟩."""
        return self.S * float(np.real(np.vdot(g, self.stiffness(f) + self.weight * f)))

    def dist(self, u) -> float:
        return abs(self.kinetic(u) - self.K_Q)

    def derivative(self, u):
        return np.gradient(u, self.grid.r, edge_order=2)


def polish_ground_state(profile: GroundStateProfile, tol: float = 1e-14, max_iter: int = 20):
    """Newton iteration for the discrete ground state, started from ``profile.Q``."""
    L = spectral.assemble_sector(profile, 0, 0.0)
    p = profile.params.p
    Q = profile.Q.copy()
    w = L.weight
    res = math.inf
    for _ in range(max_iter):
        nl = w * np.abs(Q) ** p * Q
        F = L.stiffness(Q) - nl
        # relative to the size of the terms that cancel; dividing by w would
        # amplify round-off near the origin
        scale = np.abs(L.diag * Q) + np.abs(nl)
        scale[:-1] += np.abs(L.off * Q[1:])
        scale[1:] += np.abs(L.off * Q[:-1])
        res = float(np.max(np.abs(F) / scale))
        if res < tol:
            break
        J = spectral.TridiagonalLU(L.off, L.diag - (p + 1) * w * np.abs(Q) ** p, L.off)
        Q = Q - J.solve(F)
    log.debug("discrete ground state: residual %.3g", res)
    return Q, res


def build_model(profile: GroundStateProfile, polish: bool = True) -> Model:
    La = spectral.assemble_sector(profile, 0, 0.0, constant=0.0)
    Q, res = polish_ground_state(profile) if polish else (profile.Q.copy(), math.nan)
    return Model(profile.params, profile.grid, La.diag, La.off, La.weight, Q, res)


def discrete_profile(profile: GroundStateProfile, model: Model) -> GroundStateProfile:
    """Copy of ``profile`` carrying the discrete ground state, for spectra used in runs."""
    Qr = np.gradient(model.Q, profile.r, edge_order=2)
    Q1 = 2.0 / profile.params.p * model.Q + profile.r * Qr
    return replace(profile, Q=model.Q, Qr=Qr, Q1=Q1, evaluator=None)


def _dfp_factor(s_new, s_old, p: float):
    """(F(s1) - F(s0)) / (s1 - s0) with F(s) = 2/(p+2) s^{(p+2)/2}, s = |u|²."""
    h = 0.5 * p
    ds = s_new - s_old
    m = 0.5 * (s_new + s_old)
    close = np.abs(ds) <= 1e-6 * np.maximum(m, 1e-300)
    out = np.empty_like(m)
    # series about the midpoint: F'(m) + F'''(m) ds²/24
    mc = m[close]
    x = np.divide(ds[close], mc, out=np.zeros_like(mc), where=mc > 0)
    out[close] = mc**h * (1.0 + h * (h - 1) * x**2 / 24)
    far = ~close
    out[far] = (2.0 / (p + 2)) * (s_new[far] ** (h + 1) - s_old[far] ** (h + 1)) / ds[far]
    return out


def step_perturbation(v: np.ndarray, dt: float, model: Model, tol: float = 1e-12,
                      max_iter: int = 8, guess: Optional[np.ndarray] = None) -> np.ndarray:
    """One Crank-Nicolson step for v, where u = e^{it}(Q + v).

    In the rotating frame w = Q + v solves i w_t = (L_a + 1) w - |w|^p w and
    the scheme is W (w+ - w) = -i dt (B - W G)(w+ + w)/2 with B the stiffness
    of L_a + 1 and G the divided difference of F(s) = 2/(p+2) s^{(p+2)/2}
    between |w|² and |w+|² (energy conserving).  Any real G makes the step
    W-unitary in w, so mass is conserved at every fixed-point iterate.

    Subtracting B Q = W Q^{p+1} leaves an equation for v whose forcing
    W Q (Q^p - G) vanishes identically at v = 0, so the standing wave is
    reproduced exactly and perturbations are never formed as differences
    of O(1) numbers.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = np.asarray(v, dtype=complex)
    Q = model.Q
    p = model.params.p
    w = model.weight
    qp = (Q * Q) ** (0.5 * p)
    s_old = np.abs(Q + v) ** 2
    vp = v.copy() if guess is None else np.asarray(guess, dtype=complex)
    off = (0.5j * dt) * model.off.astype(complex)
    bdiag = model.diag + w
    norm_w = math.sqrt(float(np.sum(w * s_old))) or 1.0
    change = math.inf
    for _ in range(max_iter):
        G = _dfp_factor(np.abs(Q + vp) ** 2, s_old, p)
        dl, d, du, du2, ipiv, info = lapack.zgttrf(off, w + 0.5j * dt * (bdiag - w * G), off)
        if info != 0:
            raise StepError(f"singular step matrix (info={info})")
        # v+ = 2 M^{-1} (W v - i dt/2 W Q (Q^p - G)) - v with M = W + i dt H/2;
        # this never forms (W - i dt H/2) v, whose terms cancel where H/W ~ r^-2
        rhs = w * (v - 0.5j * dt * Q * (qp - G))
        y, info = lapack.zgttrs(dl, d, du, du2, ipiv, rhs)
        new = 2.0 * y - v
        change = math.sqrt(float(np.sum(w * np.abs(new - vp) ** 2))) / norm_w
        vp = new
        if change < tol:
            return vp
    raise StepError(f"fixed point stalled at relative change {change:.3g} after {max_iter} iterations")


def step(field: ComplexField, dt: float, model: Model, tol: float = 1e-12, max_iter: int = 8,
         guess: Optional[np.ndarray] = None) -> ComplexField:
    """One Crank-Nicolson step for an arbitrary field u.

    Same scheme as :func:`step_perturbation` written for u itself:
    W (u+ - u) = -i dt (A_a - W G)(u+ + u)/2.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = field.values
    p = model.params.p
    w = model.weight
    s_old = np.abs(u) ** 2
    up = u.copy() if guess is None else np.asarray(guess, dtype=complex)
    off = (0.5j * dt) * model.off.astype(complex)
    norm_u = math.sqrt(float(np.sum(w * s_old))) or 1.0
    change = math.inf
    for _ in range(max_iter):
        G = _dfp_factor(np.abs(up) ** 2, s_old, p)
        dl, d, du, du2, ipiv, info = lapack.zgttrf(off, w + 0.5j * dt * (model.diag - w * G), off)
        if info != 0:
            raise StepError(f"singular step matrix (info={info})")
        y, info = lapack.zgttrs(dl, d, du, du2, ipiv, w * u)
        new = 2.0 * y - u
        change = math.sqrt(float(np.sum(w * np.abs(new - up) ** 2))) / norm_u
        up = new
        if change < tol:
            return ComplexField(field.grid, up, field.t + dt)
    raise StepError(f"fixed point stalled at relative change {change:.3g} after {max_iter} iterations")


def conserved(field: ComplexField, model: Model):
    """(M, E) in the discrete forms the scheme conserves."""
    u = field.values
    return model.mass(u), model.energy(u)


@dataclass
class ModulationState:
    theta: float
    alpha: float
    u_tilde: np.ndarray = field(repr=False)
    dist: float = 0.0
    above: bool = False

    def recompose(self, Q):
        return np.exp(1j * self.theta) * ((1 + self.alpha) * Q + self.u_tilde)


def _decompose(v: np.ndarray, phase: float, model: Model, limit: Optional[float]) -> ModulationState:
    """Decompose f = e^{i phase}(Q + v) working with v throughout."""
    Q = model.Q
    BQ = model.stiffness(Q) + model.weight * Q
    AQ = model.stiffness(Q)
    # ‖Q+v‖² - ‖Q‖² expanded, so d stays accurate when v is tiny
    dK = model.S * float(2 * np.real(np.sum(AQ * v)) + np.real(np.vdot(v, model.stiffness(v))))
    dist = abs(dK)
    if limit is not None and dist >= limit:
        raise ModulationError(f"d(f) = {dist:.3g} is not below delta0 = {limit:.3g}")
    # ⟨(L_a+1)Q, Q⟩ from the same sum as the pairing below, so c is exactly e^{iθ} times it on the orbit
    norm = model.S * float(np.sum(BQ * Q))
    c = norm + model.S * np.sum(BQ * v)
    if abs(c) == 0:
        raise ModulationError("field is orthogonal to Q")
    th = float(np.angle(c))
    g = np.expm1(-1j * th) * Q + np.exp(-1j * th) * v
    alpha = model.S * float(np.real(np.sum(BQ * g))) / norm
    return ModulationState(phase + th, alpha, g - alpha * Q, dist, dK > 0)


def modulation_decompose(field: ComplexField | np.ndarray, model: Model,
                         delta0: Optional[float] = -1.0) -> ModulationState:
    """e^{-iθ} f = (1 + α) Q + ũ with ũ ⊥ Q, iQ in the (L_a + 1) pairing.

    The phase condition is linear in e^{-iθ}, so θ = arg ⟨(L_a+1) f, Q⟩
    exactly.  ``delta0=-1`` uses the default threshold 1e-2 ‖Q‖²_{Ḣ¹_a};
    ``None`` disables the check.
    """
    f = field.values if isinstance(field, ComplexField) else np.asarray(field, dtype=complex)
    limit = model.delta0 if delta0 == -1.0 else delta0
    return _decompose(f - model.Q, 0.0, model, limit)


def orthogonality(state: ModulationState, model: Model):
    """The two pairings that must vanish: ⟨(L_a+1)ũ, Q⟩ and ⟨(L_a+1)ũ, iQ⟩."""
    return model.pair(state.u_tilde, model.Q), model.pair(state.u_tilde, 1j * model.Q)


def remainder_R(v, Q, p: float):
    """R(v) = i (|Q+v|^p (Q+v) - Q^{p+1} - (p+1) Q^p Re v - i Q^p Im v)."""
    v = np.asarray(v, dtype=complex)
    w = Q + v
    # Q^{p+1} as |Q|^p Q so that v = 0 cancels exactly
    qp = np.abs(Q) ** p
    return 1j * (np.abs(w) ** p * w - qp * Q - (p + 1) * qp * v.real - 1j * qp * v.imag)


# Cutoff φ = r² on [0, 1], constant 11/5 on [2, ∞), a polynomial blend between
# with φ''' continuous.  On the blend φ'' = 2 - t² (90 t² - 184 t + 96), t = r - 1,
# which stays ≤ 2 because that quadratic has no real roots.
PHI_BLEND = np.array([1.0, 2.0, 1.0, 0.0, -8.0, 46.0 / 5.0, -3.0])
PHI_FAR = 11.0 / 5.0


def phi_derivs(r, R: float = 1.0):
    """(φ_R, φ_R', φ_R'', φ_R''', φ_R'''') for φ_R(r) = R² φ(r/R)."""
    x = np.asarray(r, dtype=float) / R
    out = np.zeros((5,) + x.shape)
    inner = x <= 1
    out[0, inner] = x[inner] ** 2
    out[1, inner] = 2 * x[inner]
    out[2, inner] = 2.0
    mid = (x > 1) & (x < 2)
    t = x[mid] - 1
    poly = np.polynomial.Polynomial(PHI_BLEND)
    for k in range(5):
        out[k, mid] = poly.deriv(k)(t) if k else poly(t)
    out[0, x >= 2] = PHI_FAR
    scale = np.array([R**2, R, 1.0, 1.0 / R, 1.0 / R**2])
    return out * scale.reshape((5,) + (1,) * x.ndim)


def check_phi(samples: int = 100001) -> float:
    """Largest φ'' on a fine grid of [0, 3]; the design requires ≤ 2."""
    return float(np.max(phi_derivs(np.linspace(0.0, 3.0, samples))[2]))


def _laplacians(dphi, d2phi, d3phi, d4phi, r, d):
    """Δφ and Δ²φ for radial φ."""
    lap = d2phi + (d - 1) * dphi / r
    dlap = d3phi + (d - 1) * (d2phi / r - dphi / r**2)
    d2lap = d4phi + (d - 1) * (d3phi / r - 2 * d2phi / r**2 + 2 * dphi / r**3)
    return lap, d2lap + (d - 1) * dlap / r


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def virial_error(u, model: Model, R: float) -> float:
    """A_R: the part of ∂_tt V_R not captured by the Ḣ¹_a / L^{p+2} balance.

    The density vanishes for r < R and jumps at R and 2R, so it is integrated
    piecewise with Gauss-Legendre on a cubic spline of u whose breakpoints
    include both jumps.
    """
    prm = model.params
    d, p, a = prm.d, prm.p, prm.a
    r = model.grid.r
    if R >= r[-1]:
        return 0.0
    i0 = max(int(np.searchsorted(r, R)) - 3, 0)
    spl = interpolate.CubicSpline(r[i0:], u[i0:])
    br = np.unique(np.concatenate([[R, 2 * R], r[r > R]]))
    br = br[br <= r[-1]]
    lo, hi = br[:-1], br[1:]
    x = (0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * _GL_X).ravel()
    wq = (0.5 * (hi - lo)[:, None] * _GL_W).ravel()
    v, vr = spl(x), spl(x, 1)
    s = np.abs(v) ** 2
    _, dphi, d2phi, d3phi, d4phi = phi_derivs(x, R)
    lap, bilap = _laplacians(dphi, d2phi, d3phi, d4phi, x, d)
    dens = ((4 * d2phi - 8) * np.abs(vr) ** 2
            + (2 * p / (p + 2)) * (2 * d - lap) * s ** ((p + 2) / 2)
            - bilap * s
            + 4 * a * (x * dphi - 2 * x**2) / x**4 * s)
    return model.S * float(np.sum(wq * x ** (d - 1) * dens))


def virial_quantities(u, model: Model, R: float):
    """(V_R, ∂_t V_R, A_R) for a radial field."""
    r = model.grid.r
    phi, dphi = phi_derivs(r, R)[:2]
    wS = model.S * model.weight
    V = float(np.sum(wS * phi * np.abs(u) ** 2))
    Vdot = 2.0 * float(np.sum(wS * np.imag(np.conj(u) * model.derivative(u)) * dphi))
    return V, Vdot, virial_error(u, model, R)


@dataclass
class VirialSeries:
    R: float
    times: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    A_R: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.times)
        if not (len(self.V) == len(self.Vdot) == len(self.A_R) == n):
            raise ValueError("virial arrays must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def second_difference(self):
        """(t, centered second difference of V) on interior samples."""
        t, V = self.times, self.V
        h1, h2 = t[1:-1] - t[:-2], t[2:] - t[1:-1]
        vtt = 2 * (h1 * V[2:] - (h1 + h2) * V[1:-1] + h2 * V[:-2]) / (h1 * h2 * (h1 + h2))
        return t[1:-1], vtt


@dataclass
class RunConfig:
    d: int
    p: float
    a: float
    dt: float = 1e-3
    T: float = 1.0
    delta: float = 1e-3
    direction: str = "none"
    R: float = 20.0
    record_every: int = 10

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class RunResult:
    config: RunConfig
    t: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    dist: np.ndarray
    above: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    VR: np.ndarray
    Vdot: np.ndarray
    AR: np.ndarray
    ortho: np.ndarray
    unorm: np.ndarray
    sign: float = 1.0
    truncated: bool = False
    message: str = ""
    final: Optional[ComplexField] = field(default=None, repr=False)

    COLUMNS = ("t", "theta", "alpha", "dist", "mass", "energy", "VR", "Vdot", "AR")

    def virial(self) -> VirialSeries:
        return VirialSeries(self.config.R, self.t, self.VR, self.Vdot, self.AR)

    def save(self, directory: str | Path, stem: str = "run") -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv = directory / f"{stem}.csv"
        rows = [",".join(self.COLUMNS)]
        cols = [getattr(self, c) for c in self.COLUMNS]
        for vals in zip(*cols):
            rows.append(",".join(_fmt(v) for v in vals))
        csv.write_text("\n".join(rows) + "\n")
        cfg = directory / f"{stem}_config.json"
        cfg.write_text(self.config.to_json())
        return [csv, cfg]


def evolve(u0: Optional[np.ndarray], model: Model, config: RunConfig, decompose: bool = True,
           v0: Optional[np.ndarray] = None) -> RunResult:
    """Integrate to T, recording diagnostics every ``record_every`` steps.

    Pass either the field ``u0`` or the perturbation ``v0`` with u0 = Q + v0.
    With ``v0`` the run uses :func:`step_perturbation`, which keeps tiny
    perturbations of Q free of cancellation; with ``u0`` it steps u directly.  The recorded
    theta is the modulation phase relative to the rotation e^{it}.  A refused
    modulation decomposition (d ≥ delta0) or a failed step stops the run
    and marks the result truncated.
    """
    if (u0 is None) == (v0 is None):
        raise ValueError("give exactly one of u0 and v0")
    frame = v0 is not None
    # in direct mode the state is u itself; diagnostics see Q + v either way
    v = np.asarray(v0 if frame else np.asarray(u0, dtype=complex) - model.Q, dtype=complex).copy()
    u = None if frame else np.asarray(u0, dtype=complex).copy()
    nsteps = int(round(config.T / config.dt))
    keys = ("t", "theta", "alpha", "dist", "above", "mass", "energy", "VR", "Vdot", "AR", "ortho", "unorm")
    rec = {k: [] for k in keys}
    truncated, msg = False, ""
    t, prev = 0.0, None

    def record(t: float, v: np.ndarray) -> None:
        w = model.Q + v if frame else np.exp(-1j * t) * u
        if decompose:
            st = _decompose(v, 0.0, model, model.delta0)
            th, al, dist, above = st.theta, st.alpha, st.dist, st.above
            orth = max(abs(x) for x in orthogonality(st, model))
            un = math.sqrt(max(model.pair(st.u_tilde, st.u_tilde), 0.0))
        else:
            st = _decompose(v, 0.0, model, None)
            th = al = orth = un = math.nan
            dist, above = st.dist, st.above
        V, Vd, A = virial_quantities(w, model, config.R)
        vals = (t, th, al, dist, above, model.mass(w), model.energy(w), V, Vd, A, orth, un)
        for k, x in zip(keys, vals):
            rec[k].append(x)

    try:
        record(t, v)
        for n in range(1, nsteps + 1):
            if frame:
                guess = None if prev is None else 2 * v - prev
                new = step_perturbation(v, config.dt, model, guess=guess)
                prev, v = v, new
            else:
                guess = None if prev is None else 2 * u - prev
                new = step(ComplexField(model.grid, u, t), config.dt, model, guess=guess).values
                prev, u = u, new
                v = np.exp(-1j * n * config.dt) * u - model.Q
            t = n * config.dt
            if n % config.record_every == 0:
                record(t, v)
    except (ModulationError, StepError) as exc:
        truncated, msg = True, str(exc)
        log.info("run stopped at t=%.4f: %s", t, msg)
    arr = {k: np.asarray(x, dtype=float) for k, x in rec.items()}
    arr["above"] = arr["above"].astype(bool)
    final = ComplexField(model.grid, np.exp(1j * t) * (model.Q + v) if frame else u, t)
    return RunResult(config, **arr, truncated=truncated, message=msg, final=final)


def initial_data(direction: str, delta: float, model: Model, dichotomy) -> tuple:
    """Perturbation s δ V (initial field Q + s δ V) with V = V- for stable and V+ for unstable directions.

    s = ±1 is picked so that ‖u(0)‖_{Ḣ¹_a} is below ‖Q‖ for the ``minus``
    branches and above it for the ``plus`` branches.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    v1, v2 = dichotomy.Vminus if direction.startswith("stable") else dichotomy.Vplus
    V = v1 + 1j * v2
    want_above = direction.endswith("plus")
    for s in (1.0, -1.0):
        v0 = s * delta * V
        if _decompose(v0, 0.0, model, None).above == want_above:
            return v0, s
    raise ValueError("neither sign of the perturbation moves ‖u‖_{Ḣ¹_a} the requested way")


def run_perturbed(direction: str, delta: float, T: float, model: Model, dichotomy,
                  dt: float = 1e-3, R: float = 20.0, record_every: int = 10) -> RunResult:
    prm = model.params
    prm.require_dynamics()
    cfg = RunConfig(prm.d, prm.p, prm.a, dt, T, delta, direction, R, record_every)
    if delta == 0:
        v0, s = np.zeros_like(model.Q, dtype=complex), 1.0
    else:
        v0, s = initial_data(direction, delta, model, dichotomy)
    res = evolve(None, model, cfg, v0=v0)
    res.sign = s
    return res


def fit_exponential_rate(t, y, window: Optional[tuple] = None):
    """Least squares for log y = log A - rate t; returns (rate, A, rms residual)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, y = t[m], y[m]
    if t.size < 2:
        raise ValueError("need at least two samples in the window")
    if np.any(y <= 0):
        raise ValueError("samples must be positive in the fit window")
    slope, icpt = np.polyfit(t, np.log(y), 1)
    resid = float(np.sqrt(np.mean((np.log(y) - (slope * t + icpt)) ** 2)))
    return float(-slope), float(math.exp(icpt)), resid


def rate_window(result: RunResult, lower: float, upper: float, growing: bool):
    """Time window of the monotone stretch where lower ≤ d(u) ≤ upper."""
    t, d = result.t, result.dist
    ok = (d >= lower) & (d <= upper)
    # keep the part before d turns around
    turn = np.argmin(d) if not growing else np.argmax(d)
    ok[turn + 1:] = False
    idx = np.nonzero(ok)[0]
    if idx.size < 2:
        return None
    return float(t[idx[0]]), float(t[idx[-1]])


def signed_gap(result: RunResult):
    """‖Q‖²_{Ḣ¹_a} - ‖u‖²_{Ḣ¹_a} from the recorded dist and side."""
    return np.where(result.above, -result.dist, result.dist)


def virial_series(result: RunResult) -> VirialSeries:
    return result.virial()


def virial_identity_error(result: RunResult, min_dist: float = 1e-6):
    """Compare centered second differences of V_R with (2pd - 8)(K_Q - K) + A_R.

    Returns (max relative error, max A_R / d) over samples with d > min_dist.
    The identity also carries 4pd (E - E_Q), which is O(d²) near Q and is
    left in the error.
    """
    cfg = result.config
    t, vtt = result.virial().second_difference()
    pred = ((2 * cfg.p * cfg.d - 8) * signed_gap(result) + result.AR)[1:-1]
    mask = result.dist[1:-1] > min_dist
    if not np.any(mask):
        raise ValueError("no samples above min_dist")
    rel = np.abs(vtt - pred)[mask] / np.abs(pred[mask])
    ratio = np.abs(result.AR[result.dist > min_dist]) / result.dist[result.dist > min_dist]
    return float(rel.max()), float(ratio.max())


def modulation_rates(result: RunResult, min_dist: float = 0.0):
    """max (|α'| + |θ'|) / d along the run, by centered differences."""
    t = result.t
    if t.size < 3:
        raise ValueError("need at least three records")
    da = np.gradient(result.alpha, t)
    dth = np.gradient(np.unwrap(result.theta), t)
    m = result.dist > min_dist
    return float(np.max((np.abs(da) + np.abs(dth))[m] / result.dist[m]))


def comparability(result: RunResult, min_dist: float = 0.0):
    """(min, max) of max(|α|, ‖ũ‖_{H¹_a}) / d over the recorded samples."""
    m = result.dist > min_dist
    ratio = np.maximum(np.abs(result.alpha), result.unorm)[m] / result.dist[m]
    return float(ratio.min()), float(ratio.max())
