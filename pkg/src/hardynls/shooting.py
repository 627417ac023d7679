"""Shooting from the singular origin.

Solutions that are locally H¹ near r = 0 form a one-parameter family
``q(b, r) ~ b r^{-gamma}``.  Each b is classified by what the trajectory does
first: q_r returns to zero (S+), q crosses zero (S-), or it decays into the
origin's stable direction (the ground state, S0).  Bisection on that tag finds
b0.

Integration runs in s = ln r for r < 1, with state (q, P = r q_r), which turns
the 1/r and 1/r² coefficients into constants; for r >= 1 it runs in r with
state (q, q_r).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import special
from scipy.integrate import solve_ivp

from .ode import ESCAPE_BOUND, Event, OdeState, Params, Trajectory, power_term, rhs

log = logging.getLogger(__name__)

SPLUS = "Splus"
SMINUS = "Sminus"
UNDECIDED = "Undecided"


class IntegrationError(RuntimeError):
    """The integrator failed or the trajectory escaped before any event."""


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class ShootingOptions:
    r0: float = 1e-6
    r_max: float = 30.0
    rtol: float = 1e-10
    atol: float = 1e-16
    tail_threshold: float = 1e-4
    use_tail: bool = True
    origin_order: int = 1


@dataclass(frozen=True)
class OriginData:
    b: float
    r0: float
    q0: float
    qr0: float
    order: int = 1

    def mirrored(self) -> "OriginData":
        """Data for -b: the equation is odd in (q, q_r)."""
        return OriginData(-self.b, self.r0, -self.q0, -self.qr0, self.order)


def _origin_correction(b: float, r0: float, params: Params):
    """Relative next-order terms of r^{gamma} q at the origin.

    Returns (corr, r*corr', d corr/db, r*d corr'/db).  The two leading
    corrections come from the mass term (~ r²) and the nonlinearity
    (~ |b|^p r^{2 - p gamma}).
    """
    beta, g, p = params.beta, params.gamma, params.p
    kappa = 2.0 - p * g
    c1 = 1.0 / (2.0 * (2.0 + beta))
    c2 = -abs(b) ** p / (kappa * (kappa + beta))
    corr = c1 * r0**2 + c2 * r0**kappa
    rcorr = 2 * c1 * r0**2 + kappa * c2 * r0**kappa
    # d/db of b * (1 + corr) = 1 + corr + b * dcorr/db
    c2b = (p + 1) * c2
    corr_b = c1 * r0**2 + c2b * r0**kappa
    rcorr_b = 2 * c1 * r0**2 + kappa * c2b * r0**kappa
    return corr, rcorr, corr_b, rcorr_b


def _origin_values(b: float, r0: float, params: Params, order: int):
    g = params.gamma
    lead = r0 ** (-g)
    if order == 0:
        return b * lead, -g * b * lead / r0, lead, -g * lead / r0
    corr, rcorr, corr_b, rcorr_b = _origin_correction(b, r0, params)
    q0 = b * lead * (1.0 + corr)
    qr0 = b * lead * (-g * (1.0 + corr) + rcorr) / r0
    qb0 = lead * (1.0 + corr_b)
    qbr0 = lead * (-g * (1.0 + corr_b) + rcorr_b) / r0
    return q0, qr0, qb0, qbr0


def origin_expansion(b: float, r0: float, params: Params, order: int = 1) -> OriginData:
    """Initial values at r0 of the solution with r^{gamma} q -> b.

    ``order=0`` returns the bare power law; ``order=1`` adds the mass-term and
    nonlinear corrections, which makes the start accurate to O(r0^{2(2-p gamma)}).
    """
    if not b > 0:
        raise ValueError(f"shooting parameter must be positive, got {b}")
    if not (0.0 < r0 <= 0.1):
        raise ValueError(f"matching radius must lie in (0, 0.1], got {r0}")
    q0, qr0, _, _ = _origin_values(b, r0, params, order)
    return OriginData(float(b), float(r0), float(q0), float(qr0), order)


def _signed_origin(b: float, params: Params, opts: ShootingOptions) -> OriginData:
    if b == 0:
        raise ValueError("b = 0 gives the zero solution")
    data = origin_expansion(abs(b), opts.r0, params, opts.origin_order)
    return data if b > 0 else data.mirrored()


def _log_rhs(params: Params, with_qb: bool):
    d, p, a = params.d, params.p, params.a

    def f(s, y):
        e2 = math.exp(2.0 * s)
        q, P = y[0], y[1]
        out = [P, -(d - 2) * P + a * q + e2 * (q - power_term(q, p))]
        if with_qb:
            w, W = y[2], y[3]
            out += [W, -(d - 2) * W + a * w + e2 * (w - (p + 1) * abs(q) ** p * w)]
        return out

    return f


def _lin_rhs(params: Params, with_qb: bool):
    d, p, a = params.d, params.p, params.a

    def f(r, y):
        q, qr = y[0], y[1]
        out = list(rhs(OdeState(r, q, qr), params))
        if with_qb:
            w, wr = y[2], y[3]
            out += [wr, -(d - 1) / r * wr + a / r**2 * w + w - (p + 1) * abs(q) ** p * w]
        return out

    return f


def _events(log_phase: bool, opts: ShootingOptions, sign: float):
    # In the log phase y[1] = r q_r, so r = e^s is needed to recover q_r.
    def qr_of(t, y):
        return y[1] / math.exp(t) if log_phase else y[1]

    def q_zero(t, y):
        return y[0]

    def qr_zero(t, y):
        return y[1]

    def escaped(t, y):
        # below r = 1 the singular start has q_r ~ q/r, so the bound is put
        # on the scale-free pair (q, r q_r) there
        return abs(y[0]) + abs(y[1]) - ESCAPE_BOUND

    def tail(t, y):
        q, qr = y[0], qr_of(t, y)
        size = abs(q) + abs(qr)
        if q != 0 and -1.5 < qr / q < -0.5 and sign * q > 0:
            return size - opts.tail_threshold
        return max(size, opts.tail_threshold)

    evs = [q_zero, qr_zero, escaped]
    if opts.use_tail:
        evs.append(tail)
    for ev in evs:
        ev.terminal = True
    return evs


_KINDS = ("q_zero", "qr_zero", "escaped", "tail_entered")


def _run(params: Params, origin: OriginData, r_max: float, opts: ShootingOptions,
         with_qb: bool, dense: bool):
    sign = 1.0 if origin.b >= 0 else -1.0
    y0 = [origin.q0, origin.r0 * origin.qr0]
    if with_qb:
        _, _, qb0, qbr0 = _origin_values(abs(origin.b), origin.r0, params, origin.order)
        y0 += [qb0, origin.r0 * qbr0]
    pieces = []
    event = None
    ok, msg = True, ""

    phases = []
    if origin.r0 < 1.0:
        phases.append(("log", math.log(origin.r0), math.log(min(1.0, r_max))))
    if r_max > 1.0:
        phases.append(("lin", max(1.0, origin.r0), r_max))

    y = np.asarray(y0, dtype=float)
    for kind, t0, t1 in phases:
        if t1 <= t0:
            continue
        log_phase = kind == "log"
        fun = _log_rhs(params, with_qb) if log_phase else _lin_rhs(params, with_qb)
        sol = solve_ivp(fun, (t0, t1), y, method="DOP853", rtol=opts.rtol, atol=opts.atol,
                        events=_events(log_phase, opts, sign), dense_output=dense)
        pieces.append((kind, sol))
        if sol.status == -1:
            ok, msg = False, sol.message
            break
        if sol.status == 1:
            for idx, te in enumerate(sol.t_events):
                if te.size:
                    r_ev = math.exp(te[0]) if log_phase else float(te[0])
                    event = Event(_KINDS[idx], r_ev)
                    break
            break
        y = sol.y[:, -1].copy()
        if not np.all(np.isfinite(y)):
            ok, msg = False, "non-finite state"
            break
        # at the switch r = 1, so P = r q_r already equals q_r

    rs, ys = [], []
    for kind, sol in pieces:
        if kind == "log":
            r = np.exp(sol.t)
            yy = sol.y.copy()
            yy[1] /= r
            if with_qb:
                yy[3] /= r
        else:
            r = sol.t
            yy = sol.y
        if rs and r.size and r[0] <= rs[-1][-1]:
            r, yy = r[1:], yy[:, 1:]
        rs.append(r)
        ys.append(yy)
    r_all = np.concatenate(rs)
    y_all = np.concatenate(ys, axis=1)
    finite = np.all(np.isfinite(y_all), axis=0)
    if not finite.all():
        ok, msg = False, msg or "non-finite state"
        r_all, y_all = r_all[finite], y_all[:, finite]

    dense_fn = _make_dense(pieces, with_qb) if dense else None
    traj = Trajectory(r_all, y_all[0], y_all[1], params, [event] if event else [], ok, msg,
                      dense_fn, y_all[2:] if with_qb else None)
    return traj


def _make_dense(pieces, with_qb):
    segs = []
    for kind, sol in pieces:
        if sol.sol is None:
            continue
        if kind == "log":
            lo, hi = math.exp(sol.t[0]), math.exp(sol.t[-1])
        else:
            lo, hi = sol.t[0], sol.t[-1]
        segs.append((kind, lo, hi, sol.sol))

    def evaluate(r):
        r = np.asarray(r, dtype=float)
        nrow = 4 if with_qb else 2
        out = np.full((nrow, r.size), np.nan)
        for kind, lo, hi, fn in segs:
            m = (r >= lo * (1 - 1e-14)) & (r <= hi * (1 + 1e-14))
            if not m.any():
                continue
            if kind == "log":
                yy = fn(np.log(r[m]))
                yy[1] /= r[m]
                if with_qb:
                    yy[3] /= r[m]
            else:
                yy = fn(r[m])
            out[:, m] = yy
        return out

    return evaluate


def integrate_trajectory(origin: OriginData, r_max: float, params: Params,
                         tol: float = 1e-10, opts: Optional[ShootingOptions] = None,
                         dense: bool = False) -> Trajectory:
    """Integrate from the origin data outward until the first event or r_max.

    Events: q crosses zero, q_r crosses zero, |q| + |q_r| exceeds the escape
    bound, or the solution enters the tail trap ``|q| + |q_r| < tail_threshold``
    with ``q_r/q`` in (-1.5, -0.5).  Event radii are located by root refinement
    on the dense interpolant.  An integrator breakdown returns the partial
    trajectory with ``valid=False``.
    """
    opts = replace(opts or ShootingOptions(), rtol=tol, r0=origin.r0)
    if not r_max > origin.r0:
        raise ValueError("r_max must exceed the starting radius")
    return _run(params, origin, r_max, opts, with_qb=False, dense=dense)


def shoot(b: float, params: Params, opts: Optional[ShootingOptions] = None,
          dense: bool = False) -> Trajectory:
    """Trajectory for a signed shooting parameter (negative b uses the mirror start)."""
    opts = opts or ShootingOptions()
    origin = _signed_origin(b, params, opts)
    return _run(params, origin, opts.r_max, opts, with_qb=False, dense=dense)


@dataclass
class Classification:
    tag: str
    r_event: Optional[float]
    certificate: Optional[tuple] = None
    transversal: bool = True
    b: float = math.nan
    r_max_used: float = math.nan


def _classify_traj(traj: Trajectory, b: float, tol: float) -> Classification:
    sign = 1.0 if b > 0 else -1.0
    ev = traj.event
    if not traj.valid:
        raise IntegrationError(f"integration failed for b={b}: {traj.message}")
    if ev is None:
        return Classification(UNDECIDED, None, None, True, b)
    if ev.kind == "escaped":
        raise IntegrationError(f"trajectory for b={b} escaped at r={ev.r:.6g} before any event")
    q, qr = sign * traj.q[-1], sign * traj.qr[-1]
    r = traj.r[-1]
    if ev.kind == "q_zero":
        return Classification(SMINUS, ev.r, (float(q), float(qr)), bool(qr < -tol), b)
    if ev.kind == "qr_zero":
        _, qrr = rhs(OdeState(r, q, 0.0), traj.params)
        return Classification(SPLUS, ev.r, (float(q), float(qr)), bool(q > 0 and qrr > 0), b)
    return Classification(UNDECIDED, ev.r, (float(q), float(qr)), True, b)


def classify(b: float, params: Params, opts: Optional[ShootingOptions] = None) -> Classification:
    """Tag b as Splus, Sminus or Undecided (tail entered, an S0 candidate).

    Negative b is handled through the mirror symmetry; the tag refers to the
    sign-normalized trajectory.
    """
    opts = opts or ShootingOptions()
    traj = shoot(b, params, opts)
    c = _classify_traj(traj, b, 1e-12)
    c.r_max_used = opts.r_max
    return c


def _decide(b: float, params: Params, opts: ShootingOptions) -> str:
    """Tag used inside bisection: no tail trap, extend r_max, then fall back
    to the sign of q + q_r."""
    o = replace(opts, use_tail=False)
    for _ in range(4):
        traj = shoot(b, params, o)
        c = _classify_traj(traj, b, 0.0)
        if c.tag != UNDECIDED:
            return c.tag
        o = replace(o, r_max=2 * o.r_max)
    sign = 1.0 if b > 0 else -1.0
    return SPLUS if sign * (traj.q[-1] + traj.qr[-1]) > 0 else SMINUS


@dataclass
class BisectionResult:
    b0: float
    bracket_width: float
    iterations: int
    b_lo: float
    b_hi: float
    lower_tag: str = SPLUS
    upper_tag: str = SMINUS
    params: Optional[Params] = field(default=None, repr=False)
    opts: Optional[ShootingOptions] = field(default=None, repr=False)


def bisect_ground_state(bracket: Sequence[float], params: Params, tol_b: float = 0.0,
                        opts: Optional[ShootingOptions] = None,
                        max_iter: int = 200) -> BisectionResult:
    """Bisect the classification between an S+ and an S- endpoint.

    ``tol_b = 0`` keeps halving until the two endpoints are adjacent floats.
    ``b_lo`` is always the S+ side and ``b_hi`` the S- side; for a negative
    bracket (the mirrored problem) ``b_lo`` is the one closer to zero.
    """
    opts = opts or ShootingOptions()
    x, y = float(bracket[0]), float(bracket[1])
    if x == 0 or y == 0 or (x > 0) != (y > 0):
        raise BracketError("bracket endpoints must be nonzero and of one sign")
    tx, ty = _decide(x, params, opts), _decide(y, params, opts)
    if tx == ty:
        raise BracketError(f"both bracket endpoints classify as {tx}")
    lo, hi = (x, y) if tx == SPLUS else (y, x)
    it = 0
    while abs(hi - lo) > tol_b and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        it += 1
        if _decide(mid, params, opts) == SPLUS:
            lo = mid
        else:
            hi = mid
    log.debug("bisection finished after %d steps, width %.3g", it, abs(hi - lo))
    return BisectionResult(0.5 * (lo + hi), abs(hi - lo), it, lo, hi, SPLUS, SMINUS, params, opts)


@dataclass
class TailFit:
    c0: float
    residual: float
    ratio_error: float
    window: tuple
    model: str
    matched: bool


def tail_shape(r, params: Params, model: str = "bessel"):
    """Decaying linear solution normalized so that r^{(d-1)/2} e^r f(r) -> 1.

    Returns (f, f_r).  ``model='leading'`` is the bare law r^{-(d-1)/2} e^{-r};
    ``model='bessel'`` is the exact decaying solution of the linear equation,
    a multiple of r^{-(d-2)/2} K_{beta/2}(r).
    """
    r = np.asarray(r, dtype=float)
    d = params.d
    if model == "leading":
        f = r ** (-(d - 1) / 2.0) * np.exp(-r)
        return f, f * (-1.0 - (d - 1) / (2.0 * r))
    if model != "bessel":
        raise ValueError(f"unknown tail model {model!r}")
    nu = params.beta / 2.0
    scale = math.sqrt(2.0 / math.pi)
    k = special.kve(nu, r)  # K_nu(r) e^{r}
    kp = special.kvp(nu, r) * np.exp(r)
    f = scale * r ** (-(d - 2) / 2.0) * k * np.exp(-r)
    fr = scale * np.exp(-r) * (r ** (-(d - 2) / 2.0) * kp - (d - 2) / 2.0 * r ** (-d / 2.0) * k)
    return f, fr


def fit_tail_constant(traj: Trajectory, fit_window: tuple, model: str = "bessel",
                      npts: int = 200, tol: float = 1e-6) -> TailFit:
    """Least-squares estimate of c0 in q ~ c0 r^{-(d-1)/2} e^{-r}.

    ``residual`` is the RMS deviation of log q from the fitted law over the
    window; ``ratio_error`` is the largest deviation of q_r/q from the model
    ratio (which tends to -1).
    """
    ra, rb = fit_window
    if not (rb > ra > 0):
        raise ValueError("fit window must satisfy 0 < r_a < r_b")
    if traj.dense is not None and traj.r[0] <= ra and traj.r[-1] >= rb:
        rr = np.linspace(ra, rb, npts)
        q, qr = traj(rr)
    else:
        m = (traj.r >= ra) & (traj.r <= rb)
        rr, q, qr = traj.r[m], traj.q[m], traj.qr[m]
    if rr.size < 3:
        raise ValueError("too few samples inside the fit window")
    if np.any(q <= 0) and np.any(q >= 0) or np.any(q == 0):
        raise ValueError("q changes sign inside the fit window")
    sgn = np.sign(q[0])
    f, fr = tail_shape(rr, traj.params, model)
    logc = np.log(sgn * q) - np.log(f)
    const = float(np.mean(logc))
    resid = float(np.sqrt(np.mean((logc - const) ** 2)))
    ratio_err = float(np.max(np.abs(qr / q - fr / f)))
    return TailFit(sgn * math.exp(const), resid, ratio_err, (ra, rb), model, resid < tol)


@dataclass
class QbResult:
    traj: Trajectory
    qb: np.ndarray
    qbr: np.ndarray
    zero_count: int
    zeros: list
    r_end: float


def variational_qb(b: float, params: Params, opts: Optional[ShootingOptions] = None) -> QbResult:
    """Co-integrate q_b = ∂q/∂b, which solves L1 q_b = 0 along q(b, .).

    Zeros of q_b are counted on (r0, r_end) where r_end is the first zero of q
    (b in S-), the tail-trap entry (b near b0) or r_max.
    """
    opts = opts or ShootingOptions()
    origin = _signed_origin(b, params, opts)
    traj = _run(params, origin, opts.r_max, opts, with_qb=True, dense=True)
    if not traj.valid:
        raise IntegrationError(f"variational integration failed for b={b}: {traj.message}")
    qb, qbr = traj.extra[0], traj.extra[1]
    zeros = []
    s = np.sign(qb)
    for i in np.nonzero(s[:-1] * s[1:] < 0)[0]:
        # refine on the dense output
        lo, hi = traj.r[i], traj.r[i + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            val = traj.dense(np.array([mid]))[2, 0]
            if np.sign(val) == s[i]:
                lo = mid
            else:
                hi = mid
        zeros.append(0.5 * (lo + hi))
    return QbResult(traj, qb, qbr, len(zeros), zeros, traj.r_end)


@dataclass
class ScanEntry:
    b: float
    classification: Optional[Classification]
    error: str = ""

    @property
    def tag(self) -> str:
        return self.classification.tag if self.classification else "Failed"


def _scan_one(args):
    b, params, opts = args
    try:
        return ScanEntry(b, classify(b, params, opts))
    except (IntegrationError, ValueError) as exc:
        return ScanEntry(b, None, str(exc))


def scan_bracket(b_grid: Sequence[float], params: Params,
                 opts: Optional[ShootingOptions] = None, workers: int = 1) -> list:
    """Classify every grid point independently; failures are kept as entries."""
    b_grid = [float(b) for b in b_grid]
    if any(b <= 0 for b in b_grid) or any(y <= x for x, y in zip(b_grid, b_grid[1:])):
        raise ValueError("b_grid must be positive and strictly increasing")
    opts = opts or ShootingOptions()
    jobs = [(b, params, opts) for b in b_grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_scan_one, jobs, chunksize=8))
    return [_scan_one(j) for j in jobs]


def tag_flips(scan: Sequence[ScanEntry]) -> list:
    """Indices i where the decided tag changes between entries i and i+1."""
    tags = [e.tag for e in scan if e.tag in (SPLUS, SMINUS)]
    return [i for i in range(len(tags) - 1) if tags[i] != tags[i + 1]]


def is_monotone(scan: Sequence[ScanEntry]) -> bool:
    """No Sminus entry sits below an Splus entry."""
    seen_minus = False
    for e in scan:
        if e.tag == SMINUS:
            seen_minus = True
        elif e.tag == SPLUS and seen_minus:
            return False
    return True


def origin_self_consistency(b: float, params: Params, opts: Optional[ShootingOptions] = None,
                            r_check: float = 0.1) -> float:
    """Relative disagreement at r_check between starts at r0 and r0/2."""
    opts = replace(opts or ShootingOptions(), use_tail=False, r_max=r_check)
    vals = []
    for r0 in (opts.r0, opts.r0 / 2):
        o = replace(opts, r0=r0)
        tr = _run(params, _signed_origin(b, params, o), r_check, o, False, False)
        vals.append(np.array([tr.q[-1], tr.qr[-1]]))
    return float(np.max(np.abs(vals[0] - vals[1]) / np.abs(vals[1])))
