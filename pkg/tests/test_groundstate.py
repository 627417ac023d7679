import dataclasses
import math

import numpy as np
import pytest

from conftest import CANON, profile_for
from hardynls import groundstate as gs
from hardynls.grid import make_grid

P = CANON


def test_canonical_values(profile):
    assert profile.b0 == pytest.approx(3.8759793901492694, rel=1e-9)
    assert profile.c0 == pytest.approx(2.2354625610389114, rel=1e-6)
    assert profile.mass == pytest.approx(13.6118555825, rel=1e-8)
    assert profile.energy == pytest.approx(6.80592779, rel=1e-7)
    assert profile.C_GN == pytest.approx(0.0565536678, rel=1e-7)


def test_origin_law_near_zero(profile):
    r, Q = profile.r[:5], profile.Q[:5]
    assert np.all(np.abs(Q * r**P.gamma / profile.b0 - 1) < 1e-6)


def test_q1_near_zero(profile):
    r = profile.r[:3]
    ratio = profile.Q1[:3] * r**P.gamma / profile.b0
    assert 2 / P.p - P.gamma == pytest.approx(0.887298, abs=1e-6)
    assert np.allclose(ratio, 0.887298, atol=1e-5)


def test_tail_law_near_r_max(profile):
    r = profile.r[-50:]
    scaled = profile.Q[-50:] * r ** ((P.d - 1) / 2) * np.exp(r)
    # leading law, up to the Bessel correction ~ (beta² - 1)/(8r)
    corr = 1 + (P.beta**2 - 1) / (8 * r)
    assert np.allclose(scaled / corr, profile.c0, rtol=2e-4)


def test_profile_is_positive_and_decreasing(profile):
    assert np.all(profile.Q > 0)
    assert np.all(profile.Qr < 0)


def test_norm_homogeneity(profile):
    m1, k1, l1 = gs.field_norms(profile.grid, profile.Q, profile.Qr, P, exponent=-P.gamma)
    m2, k2, l2 = gs.field_norms(profile.grid, 2 * profile.Q, 2 * profile.Qr, P, exponent=-P.gamma)
    assert m2 == pytest.approx(4 * m1, rel=1e-14)
    assert k2 == pytest.approx(4 * k1, rel=1e-14)
    assert l2 == pytest.approx(2 ** (P.p + 2) * l1, rel=1e-14)


def test_kinetic_positive_despite_attractive_potential(profile):
    assert profile.kinetic_a > 0


def test_pohozaev_consistency(profile):
    lhs = 8 * profile.kinetic_a
    rhs = 4 * P.p * P.d / (P.p + 2) * profile.lp_norm
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_energy_definition(profile):
    assert profile.energy == pytest.approx(profile.kinetic_a / 2 - profile.lp_norm / (P.p + 2), rel=1e-14)


def test_J_of_Q_is_C_GN(profile):
    J = gs.evaluate_J(profile.grid, profile.Q, P, profile.Qr, exponent=-P.gamma)
    assert J == pytest.approx(profile.C_GN, rel=1e-12)


def test_J_invariances(profile):
    C = profile.C_GN
    J2 = gs.evaluate_J(profile.grid, 2 * profile.Q, P, 2 * profile.Qr, exponent=-P.gamma)
    assert J2 == pytest.approx(C, rel=1e-12)
    f, fr = gs.scaled_ground_state(profile, 1.0, 2.0)
    assert gs.evaluate_J(profile.grid, f, P, fr, exponent=-P.gamma) == pytest.approx(C, rel=1e-8)


def test_J_gaussian_below_C(profile):
    r = profile.r
    g = np.exp(-(r**2))
    J = gs.evaluate_J(profile.grid, g, P, -2 * r * g, exponent=0.0)
    assert 0 < J < profile.C_GN


def test_J_zero_rejected(profile):
    with pytest.raises(ValueError):
        gs.evaluate_J(profile.grid, np.zeros_like(profile.r), P)


def test_J_decreases_to_second_order(profile):
    r = profile.r
    w = np.exp(-((r - 1.5) ** 2))
    wr = -2 * (r - 1.5) * w
    C = profile.C_GN
    drops = []
    for eps in (4e-2, 2e-2, 1e-2):
        J = gs.evaluate_J(profile.grid, profile.Q + eps * w, P, profile.Qr + eps * wr, exponent=-P.gamma)
        drops.append((C - J) / eps**2)
    assert all(x > 0 for x in drops)
    # quadratic: the normalized drop settles as eps shrinks
    assert abs(drops[2] - drops[1]) < 0.6 * abs(drops[1] - drops[0])
    assert drops[2] == pytest.approx(drops[1], rel=0.05)


def test_gn_check(profile):
    out = gs.gn_check(profile, n_trials=20, seed=1)
    assert out["violations"] == 0
    assert out["max_ratio"] < 1
    assert out["family_max"] < 1e-8


def test_monotonicity_report(profile):
    rep = gs.monotonicity_report(profile)
    assert rep["all_passed"]
    assert rep["H1prime_sign_change"]["threshold_Q"] == pytest.approx(2.0)
    assert rep["H1prime_sign_change"]["count"] == 1
    assert rep["Q1_single_zero"]["passed"]


def test_monotonicity_catches_corruption(profile):
    bad = dataclasses.replace(profile, Q=np.ones_like(profile.Q), Qr=np.zeros_like(profile.Q))
    rep = gs.monotonicity_report(bad)
    assert not rep["Qr_negative"]["passed"]
    assert rep["Qr_negative"]["violations"] == profile.r.size
    assert not rep["all_passed"]


def test_save_load_round_trip(profile, tmp_path):
    csv, js = gs.save_profile(profile, tmp_path / "q")
    assert csv.exists() and js.exists()
    back = gs.load_profile(tmp_path / "q")
    for name in ("Q", "Qr", "Q1"):
        assert np.array_equal(getattr(back, name), getattr(profile, name))
    assert np.array_equal(back.r, profile.r)
    assert back.b0 == profile.b0 and back.mass == profile.mass
    assert back.params == profile.params
    # written twice, identical bytes
    gs.save_profile(back, tmp_path / "q2")
    assert (tmp_path / "q2.csv").read_bytes() == csv.read_bytes()


def test_evaluate_matches_grid(profile):
    r = profile.r[100:110]
    Q, Qr = profile.evaluate(r)
    assert np.allclose(Q, profile.Q[100:110], rtol=1e-10)
    assert np.allclose(Qr, profile.Qr[100:110], rtol=1e-8)


def test_norms_converge_at_second_order():
    vals = []
    for n in (2001, 4001, 8001):
        prof = profile_for(P, n)
        vals.append(np.array([prof.mass, prof.energy, prof.C_GN]))
    e1 = np.abs(vals[0] - vals[1])
    e2 = np.abs(vals[1] - vals[2])
    # a difference already at round-off level counts as converged
    order = np.log2(e1 / np.maximum(e2, 1e-14 * np.abs(vals[2])))
    assert np.all(order >= 1.8)


def test_grid_refinement_helper():
    g = make_grid(n=1001)
    assert g.refined().n == 2 * g.n - 1
    assert math.isclose(g.r[0], 1e-6) and math.isclose(g.r[-1], 30.0)
