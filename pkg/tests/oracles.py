"""Independent reference computations used by the tests.

Nothing here imports the shooting or spectral code, so agreement is a real
cross-check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded


def relaxation_ground_state(d: int, p: float, a: float, h: float = 2.5e-3, L: float = 30.0,
                            tol: float = 1e-13, max_iter: int = 2000):
    """Ground state by Petviashvili-stabilized fixed-point relaxation.

    Works with z = r^gamma Q, which is smooth at the origin and solves
    -z'' - (k/r) z' + z = r^{-p gamma} z^{p+1} with k = 1 + beta.  Cell-centred
    uniform grid, zero flux at r = 0, z = 0 just past r = L.

    Returns (b0, mass, energy, r, z).
    """
    beta = math.sqrt((d - 2) ** 2 + 4 * a)
    g = (d - 2 - beta) / 2
    k = 1 + beta
    n = int(round(L / h))
    r = (np.arange(n) + 0.5) * h
    face = np.arange(1, n + 1) * h
    wk = r**k * h
    flux = face**k / h
    # symmetric stiffness of -(r^k z')' + r^k z
    diag = wk.copy()
    diag += flux
    diag[1:] += flux[:-1]
    off = -flux[:-1]
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    weight = r ** (-p * g)

    def stiff(z):
        out = diag * z
        out[:-1] += off * z[1:]
        out[1:] += off * z[:-1]
        return out

    z = 2.0 * np.exp(-r)
    for _ in range(max_iter):
        nl = wk * weight * z ** (p + 1)
        s = float(z @ stiff(z)) / float(z @ nl)
        new = s ** ((p + 1) / p) * solve_banded((1, 1), ab, nl)
        if np.max(np.abs(new - z)) < tol * np.max(np.abs(z)):
            z = new
            break
        z = new
    b0 = (9 * z[0] - z[1]) / 8
    S = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    zr = np.diff(z) / h
    kin = S * float(np.sum(face[:-1] ** k * h * zr**2))
    mass = S * float(np.sum(wk * z**2))
    lp = S * float(np.sum(wk * weight * z ** (p + 2)))
    return b0, mass, kin / 2 - lp / (p + 2), r, z


def brute_force_event(b: float, d: int, p: float, a: float, r0: float = 1e-7, r_max: float = 40.0):
    """First of q = 0 / q_r = 0 for the leading-order start, plain r, tight tolerances."""
    beta = math.sqrt((d - 2) ** 2 + 4 * a)
    g = (d - 2 - beta) / 2
    y0 = [b * r0 ** (-g), -g * b * r0 ** (-g - 1)]

    def f(r, y):
        q, qr = y
        return [qr, -(d - 1) / r * qr + a / r**2 * q + q - np.sign(q) * abs(q) ** (p + 1)]

    def q_zero(r, y):
        return y[0]

    def qr_zero(r, y):
        return y[1]

    q_zero.terminal = qr_zero.terminal = True
    sol = integrate.solve_ivp(f, (r0, r_max), y0, method="LSODA", rtol=1e-12, atol=1e-14,
                              events=(q_zero, qr_zero))
    hits = [(ev[0], name) for ev, name in zip(sol.t_events, ("q_zero", "qr_zero")) if len(ev)]
    return min(hits) if hits else (None, None)
