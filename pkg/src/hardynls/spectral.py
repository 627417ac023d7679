"""Linearized operators about the ground state and their spectra.

Near the origin a sector-ell solution behaves like r^m with
m(m + d - 2) = a + mu_ell.  Writing v = r^m z removes the inverse-square
term,

    (L_{a+mu} + V) v = r^m [ -r^{-k} (r^k z_r)_r + V z ],   k = 2m + d - 1,

and z is smooth at r = 0.  The z form is discretized with fluxes
r_{i+1/2}^k (z_{i+1} - z_i)/(r_{i+1} - r_i) and masses r_i^k cell_i, then
conjugated back, so every operator here acts on v with the inner product
sum_i r_i^{d-1} cell_i u_i v_i.  The matrix is symmetric tridiagonal.  At
r_min the z flux vanishes; at r_max v_r/v = -1 - (d-1)/(2 r_max).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize, sparse
from scipy.linalg import lapack
from scipy.sparse import linalg as spla

from .groundstate import GroundStateProfile, _fmt
from .grid import RadialGrid

log = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class SectorOperator:
    """W^{-1} A for -Δ_r + (a+mu)/r² + 1 - coeff Q^p in one harmonic sector."""

    ell: int
    mu: float
    coeff: float
    diag: np.ndarray
    off: np.ndarray
    weight: np.ndarray
    exponent: float
    grid: RadialGrid = field(repr=False)

    @property
    def n(self) -> int:
        return self.diag.size

    @property
    def matrix(self) -> sparse.csr_matrix:
        return sparse.diags([self.off, self.diag, self.off], [-1, 0, 1], format="csr")

    def form(self, u, v) -> float:
        """Discrete ⟨A u, v⟩ (radial, without the sphere factor)."""
        return float(np.real(np.vdot(v, self.stiffness(u))))

    def stiffness(self, v):
        v = np.asarray(v)
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def apply(self, v):
        """The operator itself, W^{-1} A v."""
        return self.stiffness(v) / self.weight

    def inner(self, u, v) -> float:
        return float(np.real(np.vdot(v, self.weight * u)))

    def norm(self, v) -> float:
        return math.sqrt(max(self.inner(v, v), 0.0))

    def interior_norm(self, v) -> float:
        """Weighted norm without the two closure rows."""
        v = np.asarray(v)[1:-1]
        return math.sqrt(float(np.sum(self.weight[1:-1] * np.abs(v) ** 2)))

    def shifted_lu(self, sigma: float) -> "TridiagonalLU":
        return TridiagonalLU(self.off, self.diag - sigma * self.weight, self.off)


class TridiagonalLU:
    """LAPACK gttrf/gttrs factorization of a tridiagonal matrix."""

    def __init__(self, lower, diag, upper):
        dl, d, du, du2, ipiv, info = lapack.dgttrf(lower, diag, upper)
        if info != 0:
            raise np.linalg.LinAlgError(f"singular tridiagonal factor (info={info})")
        self._f = (dl, d, du, du2, ipiv)

    def solve(self, b):
        x, info = lapack.dgttrs(*self._f, np.asarray(b, dtype=float))
        if info != 0:
            raise np.linalg.LinAlgError(f"gttrs failed (info={info})")
        return x


def laplacian_bands(grid: RadialGrid, d: int, potential: np.ndarray, exponent: float,
                    outer_logderiv: float):
    """Tridiagonal (diag, off, weight) for -Δ_r + (a+mu)/r² + potential.

    ``exponent`` is m with m(m+d-2) = a+mu; ``potential`` excludes the
    inverse-square term, which the conjugation absorbs exactly.
    """
    r = grid.r
    m = exponent
    k = 2 * m + d - 1
    rm = 0.5 * (r[1:] + r[:-1])
    flux = rm**k / np.diff(r)
    wz = r**k * grid.cell
    diag = wz * potential
    diag[:-1] += flux
    diag[1:] += flux
    # decay row: z_r/z = v_r/v - m/r
    diag[-1] -= r[-1] ** k * (outer_logderiv - m / r[-1])
    scale = r ** (-m)
    return diag * scale**2, -flux * scale[:-1] * scale[1:], r ** (d - 1) * grid.cell

def assemble_sector(profile: Optional[GroundStateProfile], ell: int, coeff: float,
                    grid: Optional[RadialGrid] = None, params=None,
                    constant: float = 1.0) -> SectorOperator:
    """Discretize L_{a+mu_ell} + constant - coeff Q^p.

    ``coeff = p+1`` gives L1, ``coeff = 1`` gives L2 and ``coeff = 0`` gives
    L_a + 1.  With ``profile=None`` the Q term is dropped and ``grid`` and
    ``params`` must be passed.
    """
    if ell not in (0, 1):
        raise ValueError(f"only sectors 0 and 1 are supported, got {ell}")
    params = params or profile.params
    grid = grid or profile.grid
    d, p = params.d, params.p
    mu = 0.0 if ell == 0 else float(d - 1)
    r = grid.r
    pot = np.full_like(r, constant)
    if profile is not None and coeff != 0:
        pot = pot - coeff * np.abs(profile.Q) ** p
    m = params.sector_exponent(mu)
    out = -1.0 - (d - 1) / (2.0 * r[-1])
    diag, off, w = laplacian_bands(grid, d, pot, m, out)
    return SectorOperator(ell, mu, float(coeff), diag, off, w, m, grid)


def l1(profile: GroundStateProfile, ell: int = 0) -> SectorOperator:
    return assemble_sector(profile, ell, profile.params.p + 1)


def l2(profile: GroundStateProfile, ell: int = 0) -> SectorOperator:
    return assemble_sector(profile, ell, 1.0)


def kernel_residuals(profile: GroundStateProfile) -> dict:
    """Relative residuals of L2 Q = 0 and L1 Q1 = -2Q in the weighted L² norm.

    The two end rows are left out: there the boundary closure is only first
    order and its truncation error says nothing about the interior scheme.
    """
    L1, L2 = l1(profile), l2(profile)
    Q, Q1 = profile.Q, profile.Q1

    nq = L1.interior_norm(Q)
    return {
        "L2Q": L2.interior_norm(L2.apply(Q)) / nq,
        "L1Q1_plus_2Q": L1.interior_norm(L1.apply(Q1) + 2 * Q) / nq,
    }


@dataclass
class Eigenpairs:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int


def sturm_count(op: SectorOperator, lam: float) -> int:
    """Number of eigenvalues below ``lam`` (inertia of A - lam W)."""
    a = (op.diag - lam * op.weight).tolist()
    e2 = (op.off**2).tolist()
    tiny = 1e-300
    piv = a[0] or tiny
    neg = piv < 0
    for i in range(1, len(a)):
        piv = a[i] - e2[i - 1] / piv
        if piv == 0.0:
            piv = tiny
        neg += piv < 0
    return int(neg)


def _bisect_eigenvalues(op: SectorOperator, k: int, rtol: float = 1e-9):
    pot = (op.diag - np.concatenate([[0.0], -op.off]) - np.concatenate([-op.off, [0.0]])) / op.weight
    lo = float(np.min(pot)) - 1.0
    hi = 1.0
    while sturm_count(op, hi) < k:
        hi = 2 * hi + 1
    out = []
    for j in range(k):
        a, b = lo, hi
        while b - a > rtol * max(1.0, abs(a), abs(b)):
            mid = 0.5 * (a + b)
            if sturm_count(op, mid) > j:
                b = mid
            else:
                a = mid
        out.append(0.5 * (a + b))
        lo = a
    return np.array(out)


def eig_lowest(op: SectorOperator, k: int = 3, tol: float = 1e-10, max_iter: int = 30,
               warn_above: float = 1e-5) -> Eigenpairs:
    """k lowest eigenpairs of A v = λ W v.

    Sturm-sequence bisection isolates each eigenvalue; shifted inverse
    iteration, deflated against the pairs already found, then converges the
    vector and the Rayleigh quotient gives the value.  Vectors are
    W-orthonormal.
    """
    lam0 = _bisect_eigenvalues(op, k)
    vals, found, res, iters = [], [], [], 0
    rng = np.random.default_rng(0)
    for j in range(k):
        lam = lam0[j]
        sigma = lam - 1e-7 * max(1.0, abs(lam))
        lu = op.shifted_lu(sigma)
        v = rng.standard_normal(op.n)
        r_norm = prev = math.inf
        for _ in range(max_iter):
            for u in found:
                v = v - op.inner(v, u) * u
            v = lu.solve(op.weight * v)
            for u in found:
                v = v - op.inner(v, u) * u
            v = v / op.norm(v)
            lam = op.form(v, v)
            r_norm = op.interior_norm(op.apply(v) - lam * v)
            iters += 1
            # stop at tolerance, or once round-off near r_min stalls progress
            if r_norm < tol * max(1.0, abs(lam)) or r_norm > 0.5 * prev:
                break
            prev = r_norm
        if r_norm > warn_above * max(1.0, abs(lam)):
            log.warning("eigenpair %d: residual %.3g after %d iterations", j, r_norm, max_iter)
        if np.sum(op.weight * v) < 0:
            v = -v
        vals.append(lam)
        found.append(v)
        res.append(r_norm)
    return Eigenpairs(np.array(vals), np.column_stack(found), np.array(res), iters)


def neg_count(op: SectorOperator, k: int = 4) -> int:
    pairs = eig_lowest(op, k)
    if np.all(pairs.values < 0):
        return neg_count(op, 2 * k)
    return int(np.count_nonzero(pairs.values < 0))


def coercivity_min(op: SectorOperator, constraint: Optional[np.ndarray] = None) -> float:
    """Minimum of ⟨Av,v⟩/⟨Wv,v⟩ over v with ⟨v, constraint⟩_W = 0.

    The constrained minimum is the root in (λ1, λ2) of the secular function
    g^T (A - λW)^{-1} g, where g = W * constraint.  Without a constraint the
    lowest eigenvalue is returned.
    """
    pairs = eig_lowest(op, 2)
    lam1, lam2 = pairs.values
    if constraint is None:
        return float(lam1)
    g = op.weight * np.asarray(constraint, dtype=float)
    if abs(np.dot(pairs.vectors[:, 0], g)) < 1e-14 * np.linalg.norm(g) * op.norm(pairs.vectors[:, 0]):
        return float(lam2)

    def secular(lam):
        return float(np.dot(g, op.shifted_lu(lam).solve(g)))

    span = lam2 - lam1
    lo, hi = lam1 + 1e-10 * span, lam2 - 1e-10 * span
    if secular(hi) < 0:
        return float(lam2)
    return float(optimize.brentq(secular, lo, hi, xtol=1e-14 * max(1.0, span), rtol=1e-13))


@dataclass
class Dichotomy:
    """V+ = (v1, v2) and V- = minus_sign * (v1, -v2)."""

    e0: float
    v1: np.ndarray
    v2: np.ndarray
    minus_sign: float
    normalization: float
    residual_plus: float
    residual_minus: float
    form_plus: float
    form_minus: float

    @property
    def Vplus(self):
        return self.v1, self.v2

    @property
    def Vminus(self):
        return self.minus_sign * self.v1, -self.minus_sign * self.v2


def _jl_residual(L1: SectorOperator, L2: SectorOperator, e: float, v1, v2) -> float:
    r1 = L2.apply(v2) - e * v1
    r2 = -L1.apply(v1) - e * v2
    num = math.hypot(L1.interior_norm(r1), L1.interior_norm(r2))
    return num / math.hypot(L1.interior_norm(v1), L1.interior_norm(v2))


def _near_kernel(profile: GroundStateProfile, op: SectorOperator, v1, v2) -> bool:
    # discretization splits the generalized kernel {(Q1, 0), (0, Q)} into a
    # tiny real pair; those vectors live in that span
    c1 = cosine(op, v1, profile.Q1) if op.norm(v1) > 0 else 1.0
    c2 = cosine(op, v2, profile.Q) if op.norm(v2) > 0 else 1.0
    return c1 > 0.99 and c2 > 0.99


SHIFT_LADDER = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


def dichotomy_eigenpair(profile: GroundStateProfile, shifts=SHIFT_LADDER, k: int = 6,
                        polish_iter: int = 30, tol: float = 1e-12) -> Dichotomy:
    """Real eigenvalue e0 > 0 of JL(v1, v2) = (L2 v2, -L1 v1) and V±.

    The 2N problem, symmetrically scaled by W^{1/2}, is solved by
    shift-invert Arnoldi over a ladder of real shifts, skipping the near-zero pair that the
    discretization splits off the generalized kernel, then polished by
    inverse iteration.  V± = (v1, ±v2) are scaled so that
    ⟨LV+, V-⟩ = ⟨L1 v1, v1⟩ - ⟨L2 v2, v2⟩ = 1 with the sphere factor included.
    """
    L1, L2 = l1(profile), l2(profile)
    n = L1.n
    # work with y = W^{1/2} x: the weights span tens of decades in high
    # dimension and a W-inner-product Arnoldi loses the interior modes
    root = np.sqrt(L1.weight)
    Di = sparse.diags(1.0 / root)
    M = sparse.bmat([[None, Di @ L2.matrix @ Di], [-(Di @ L1.matrix @ Di), None]], format="csc")
    eye = sparse.identity(2 * n, format="csc")
    found = None
    for s in shifts:
        lu = spla.splu(sparse.csc_matrix(M - s * eye))
        op = spla.LinearOperator((2 * n, 2 * n), matvec=lu.solve, dtype=float)
        mu, vec = spla.eigs(op, k=k, which="LM", tol=1e-12, v0=np.ones(2 * n))
        lam = s + 1.0 / mu
        for i in np.argsort(np.abs(lam - s)):
            y = np.real(vec[:, i])
            if abs(lam[i].imag) < 1e-8 * abs(lam[i]) and lam[i].real > 0 \
                    and not _near_kernel(profile, L1, y[:n] / root, y[n:] / root):
                found = (float(lam[i].real), y)
                break
        if found:
            break
    if found is None:
        raise SpectralError("no real positive eigenvalue of JL away from the kernel")
    e, y = found
    shift = e * (1 - 1e-8)
    lu = spla.splu(sparse.csc_matrix(M - shift * eye))
    for _ in range(polish_iter):
        z = lu.solve(y)
        e = shift + float(y @ y) / float(y @ z)
        y = z / np.linalg.norm(z)
        if _jl_residual(L1, L2, e, y[:n] / root, y[n:] / root) < tol:
            break
    x = np.concatenate([y[:n] / root, y[n:] / root])
    v1, v2 = x[:n].copy(), x[n:].copy()
    S = profile.params.sphere_area
    if np.sum(L1.weight * v1) < 0:
        v1, v2 = -v1, -v2
    # ⟨LV+, V-⟩ = -2 e ⟨v1, v2⟩ for V- = (v1, -v2); the overall sign of V- is free
    raw = -2.0 * e * L1.inner(v1, v2) * S
    sign = 1.0 if raw > 0 else -1.0
    c = 1.0 / math.sqrt(abs(raw))
    v1 *= c
    v2 *= c
    normalization = sign * S * (L1.form(v1, v1) - L2.form(v2, v2))
    form_p = S * (L1.form(v1, v1) + L2.form(v2, v2))
    res_p = _jl_residual(L1, L2, e, v1, v2)
    res_m = _jl_residual(L1, L2, -e, v1, -v2)
    return Dichotomy(e, v1, v2, sign, normalization, res_p, res_m, form_p, form_p)


def quadratic_identity(profile: GroundStateProfile):
    """(⟨L1 Q1, Q1⟩, (d - 4/p) mass, relative error)."""
    prm = profile.params
    L1 = l1(profile)
    lhs = prm.sphere_area * L1.form(profile.Q1, profile.Q1)
    rhs = (prm.d - 4.0 / prm.p) * profile.mass
    return lhs, rhs, abs(lhs - rhs) / abs(rhs)


def cosine(op: SectorOperator, u, v) -> float:
    return abs(op.inner(u, v)) / (op.norm(u) * op.norm(v))


@dataclass
class SpectrumReport:
    neg_count: int
    eigenvalues: dict
    kernel_residuals: dict
    e0: float
    normalization: float
    grid: dict
    coercivity: dict = field(default_factory=dict)
    quadratic_identity: dict = field(default_factory=dict)
    dichotomy: Optional[Dichotomy] = field(default=None, repr=False)
    vectors: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        out = {
            "neg_count": self.neg_count,
            "eigenvalues": self.eigenvalues,
            "kernel_residuals": self.kernel_residuals,
            "e0": self.e0,
            "normalization": self.normalization,
            "coercivity": self.coercivity,
            "quadratic_identity": self.quadratic_identity,
            "grid": self.grid,
        }
        if self.dichotomy is not None:
            dz = self.dichotomy
            out["dichotomy"] = {
                "residual_plus": dz.residual_plus,
                "residual_minus": dz.residual_minus,
                "form_plus": dz.form_plus,
                "form_minus": dz.form_minus,
                "minus_sign": dz.minus_sign,
            }
        return out

    def save(self, directory: str | Path) -> list:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = directory / "spectrum.json"
        out.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        paths = [out]
        for name, cols in self.vectors.items():
            path = directory / f"{name}.csv"
            names = list(cols)
            lines = [",".join(names)]
            for row in zip(*(cols[c] for c in names)):
                lines.append(",".join(_fmt(x) for x in row))
            path.write_text("\n".join(lines) + "\n")
            paths.append(path)
        return paths


def spectrum_report(profile: GroundStateProfile, k: int = 3) -> SpectrumReport:
    L1, L2 = l1(profile), l2(profile)
    L1b = l1(profile, ell=1)
    p1, p2, p1b = eig_lowest(L1, k), eig_lowest(L2, k), eig_lowest(L1b, k)
    constraint = assemble_sector(profile, 0, 0.0).apply(profile.Q)
    dich = dichotomy_eigenpair(profile)
    lhs, rhs, rel = quadratic_identity(profile)
    r = profile.r
    vectors = {
        "eigvecs_L1": {"r": r, **{f"v{i}": p1.vectors[:, i] for i in range(k)}},
        "eigvecs_L2": {"r": r, **{f"v{i}": p2.vectors[:, i] for i in range(k)}},
        "dichotomy": {"r": r, "v1": dich.v1, "v2": dich.v2},
    }
    return SpectrumReport(
        neg_count=int(np.count_nonzero(p1.values < 0)),
        eigenvalues={
            "L1_l0": p1.values.tolist(),
            "L2_l0": p2.values.tolist(),
            "L1_l1": p1b.values.tolist(),
        },
        kernel_residuals=kernel_residuals(profile),
        e0=dich.e0,
        normalization=dich.normalization,
        grid=profile.grid.spec(),
        coercivity={
            "L1": coercivity_min(L1, constraint),
            "L2": coercivity_min(L2, constraint),
            "L1_unconstrained": float(p1.values[0]),
            "L2_Q_cosine": cosine(L2, p2.vectors[:, 0], profile.Q),
        },
        quadratic_identity={"lhs": lhs, "rhs": rhs, "rel_err": rel},
        dichotomy=dich,
        vectors=vectors,
    )
