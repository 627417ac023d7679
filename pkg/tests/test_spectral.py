import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import CANON
from hardynls import spectral as sp


@pytest.fixture(scope="module")
def ops(profile):
    return sp.l1(profile), sp.l2(profile)


def test_free_operator_positive(profile):
    free = sp.assemble_sector(profile, 0, 0.0)
    lam = sp.eig_lowest(free, 1).values[0]
    assert lam > 1 - 1e-6


def test_unsupported_sector_rejected(profile):
    with pytest.raises(ValueError):
        sp.assemble_sector(profile, 2, 1.0)


def test_zero_vector_maps_to_zero(ops):
    L1, _ = ops
    assert not np.any(L1.apply(np.zeros(L1.n)))


def test_kernel_residuals_default_grid(report):
    kr = report.kernel_residuals
    assert kr["L2Q"] < 1e-4
    assert kr["L1Q1_plus_2Q"] < 1e-3


def test_kernel_residuals_shrink_under_refinement(report, report_fine):
    for key in ("L2Q", "L1Q1_plus_2Q"):
        assert report_fine.kernel_residuals[key] < report.kernel_residuals[key] / 3.5


@settings(deadline=None, max_examples=25)
@given(arrays(np.float64, 64, elements=st.floats(-1, 1)), arrays(np.float64, 64, elements=st.floats(-1, 1)))
def test_form_is_symmetric(u, v):
    from conftest import profile_for

    L1 = sp.l1(profile_for(CANON))
    idx = np.linspace(0, L1.n - 1, 64).astype(int)
    U = np.zeros(L1.n)
    V = np.zeros(L1.n)
    U[idx] = u
    V[idx] = v
    a, b = L1.form(U, V), L1.form(V, U)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12 * (1 + abs(a)))


def test_sturm_count_agrees_with_eigenvalues(ops):
    L1, _ = ops
    vals = sp.eig_lowest(L1, 3).values
    assert sp.sturm_count(L1, vals[0] - 1e-6) == 0
    assert sp.sturm_count(L1, 0.0) == 1
    assert sp.sturm_count(L1, vals[2] + 1e-6) == 3


def test_eigenpairs_have_small_residual(ops):
    L1, _ = ops
    pairs = sp.eig_lowest(L1, 3)
    for i in range(3):
        v = pairs.vectors[:, i]
        r = L1.apply(v) - pairs.values[i] * v
        assert L1.interior_norm(r) < 1e-6 * L1.norm(v) * max(1.0, abs(pairs.values[i]))


def test_spectral_counts(report):
    assert report.neg_count == 1
    ev = report.eigenvalues
    assert ev["L1_l0"][0] < 0 < ev["L1_l0"][1]
    assert abs(ev["L2_l0"][0]) < 1e-4
    assert report.coercivity["L2_Q_cosine"] > 1 - 1e-6
    assert ev["L1_l1"][0] > 0


def test_coercivity(report, ops, profile):
    assert report.coercivity["L1"] > 0
    assert report.coercivity["L2"] > 0
    L1, _ = ops
    assert sp.coercivity_min(L1) < 0


def test_second_L1_eigenvalue_grid_stable(report, report_fine):
    a, b = report.eigenvalues["L1_l0"][1], report_fine.eigenvalues["L1_l0"][1]
    assert a > 0 and b > 0
    assert abs(a - b) < 1e-2 * a


def test_jl_kernel_chain(profile, ops):
    L1, L2 = ops
    Q, Q1 = profile.Q, profile.Q1
    nq = L1.interior_norm(Q)
    # JL(0, Q) = (L2 Q, 0)
    assert L1.interior_norm(L2.apply(Q)) / nq < 1e-4
    # (JL)² (Q1, 0) = JL(0, -L1 Q1) = (-L2 L1 Q1, 0) and -L1 Q1 ≈ 2Q
    assert L1.interior_norm(-L1.apply(Q1) - 2 * Q) / nq < 1e-3


def test_dichotomy(report, report_fine):
    dz = report.dichotomy
    assert dz.e0 == pytest.approx(6.40432, rel=1e-5)
    assert dz.residual_plus < 1e-6 and dz.residual_minus < 1e-6
    assert dz.normalization == pytest.approx(1.0, abs=1e-9)
    assert abs(dz.form_plus) < 1e-6
    assert abs(report_fine.e0 - dz.e0) < 1e-2 * dz.e0


def test_vminus_is_conjugate_pair(report):
    dz = report.dichotomy
    v1p, v2p = dz.Vplus
    v1m, v2m = dz.Vminus
    assert np.array_equal(v1m, dz.minus_sign * v1p)
    assert np.array_equal(v2m, -dz.minus_sign * v2p)
    # equal L² sizes, as the only extra normalization
    assert np.linalg.norm(np.r_[v1p, v2p]) == pytest.approx(np.linalg.norm(np.r_[v1m, v2m]))


def test_identity_examples(report, report_fine, profile):
    lhs, rhs, rel = sp.quadratic_identity(profile)
    assert rhs == pytest.approx(profile.mass)  # d - 4/p = 1
    assert lhs > 0
    assert rel < 1e-3
    assert report_fine.quadratic_identity["rel_err"] < rel


def test_report_json_and_save(report, tmp_path):
    data = report.to_json()
    for key in ("neg_count", "eigenvalues", "kernel_residuals", "e0", "dichotomy"):
        assert key in data
    paths = report.save(tmp_path)
    names = {p.name for p in paths}
    assert {"spectrum.json", "eigvecs_L1.csv", "eigvecs_L2.csv", "dichotomy.csv"} <= names
