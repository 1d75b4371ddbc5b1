import numpy as np
import pytest

from ietflow.errors import NonGeneric, ValidationError
from ietflow.rauzy import Iet, Permutation, expansion, rauzy_class
from ietflow.rng import make_rng, sample_simplex
from ietflow.spectrum import (
    check_symplectic,
    h2_cocycle,
    log_h2_profile,
    lyapunov_spectrum,
    oseledets_frame,
)
from ietflow.zipper import veech_forms

P21 = Permutation((2, 1))
P4321 = Permutation((4, 3, 2, 1))
P321 = Permutation((3, 2, 1))
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _iet4(seed):
    return Iet(sample_simplex(4, make_rng(seed)), P4321)


def test_golden_rotation_pair():
    iet = Iet(np.array([1.0 - GOLDEN, GOLDEN]), P21)
    rep = lyapunov_spectrum(iet, 20_000)
    assert rep.subspace_dim == 2
    np.testing.assert_allclose(rep.exponents, [1.0, -1.0], atol=0.01)


def test_top_exponent_is_one_in_teich_scale():
    rep = lyapunov_spectrum(_iet4(7), 120_000)
    assert rep.exponents[0] == pytest.approx(1.0, abs=0.02)
    assert not rep.warning


def test_exponents_pair_to_zero():
    rep = lyapunov_spectrum(_iet4(8), 120_000)
    sums = rep.exponents + rep.exponents[::-1]
    assert np.max(np.abs(sums)) < 0.02


def test_second_exponent_in_range():
    rep = lyapunov_spectrum(_iet4(9), 120_000)
    assert 0.05 < rep.exponents[1] < 0.95


def test_induction_scale_consistent():
    iet = _iet4(10)
    teich = lyapunov_spectrum(iet, 30_000, time_scale="teichmuller")
    induc = lyapunov_spectrum(iet, 30_000, time_scale="induction")
    ratio = teich.total_roof / 30_000
    np.testing.assert_allclose(induc.exponents, teich.exponents * ratio, atol=1e-9)


def test_trace_has_requested_columns():
    rep = lyapunov_spectrum(_iet4(11), 5_000, trace_points=50)
    assert rep.convergence_trace.shape[1] == 2 + rep.subspace_dim
    assert rep.convergence_trace[-1, 0] == 5_000


def test_bad_time_scale_rejected():
    with pytest.raises(ValidationError):
        lyapunov_spectrum(_iet4(12), 100, time_scale="wall-clock")


def test_nongeneric_tie_propagates():
    iet = Iet(np.array([0.5, 0.5]), P21)
    with pytest.raises(NonGeneric):
        lyapunov_spectrum(iet, 10)


def test_frame_duals_align_with_lambda():
    iet = _iet4(21)
    log = expansion(iet, 2_000)
    frame = oseledets_frame(iet, 1_500, 1_500, log=log)
    lam_dir = iet.lam / np.linalg.norm(iet.lam)
    d1 = frame.dual1 / np.linalg.norm(frame.dual1)
    assert np.arccos(min(1.0, abs(float(np.dot(d1, lam_dir))))) < 1e-6
    np.testing.assert_array_equal(frame.v1, np.ones(4))
    assert frame.biorth_residual < 1e-6
    assert frame.gap_ratio > 1.0 + 1e-3


def test_frame_v2_in_H_and_annihilates_lambda():
    iet = _iet4(22)
    frame = oseledets_frame(iet, 1_500, 1_500)
    forms = veech_forms(iet.perm)
    assert forms.in_H(frame.v2, tol=1e-8)
    assert abs(float(np.dot(frame.v2, iet.lam))) < 1e-10


def test_frame_stability_under_window_doubling():
    iet = _iet4(23)
    log = expansion(iet, 20_000)
    f1 = oseledets_frame(iet, 10_000, 2_000, log=log)
    f2 = oseledets_frame(iet, 20_000, 2_000, log=log)
    cosang = abs(float(np.dot(f1.v2, f2.v2))) / (np.linalg.norm(f1.v2) * np.linalg.norm(f2.v2))
    assert np.arccos(min(1.0, cosang)) < 1e-4


def test_h2_at_zero_is_one():
    iet = _iet4(24)
    frame = oseledets_frame(iet, 1_000, 1_000)
    assert h2_cocycle(iet, frame, 0.0) == pytest.approx(1.0, abs=0.0)


def test_h2_multiplicative_along_flow():
    iet = _iet4(25)
    log = expansion(iet, 1_500)
    frame = oseledets_frame(iet, 1_000, 1_000, log=log)
    values, log = log_h2_profile(iet, frame, [4.0, 9.0, 13.0], log=log)
    # cocycle property along one orbit: log H2(13) - log H2(4) is the growth
    # of the evolved vector over [4, 13]; consistency across a split at 9
    assert values[2] - values[0] == pytest.approx(
        (values[1] - values[0]) + (values[2] - values[1]), abs=1e-8
    )
    single = h2_cocycle(iet, frame, 9.0, log=log)
    assert np.log(single) == pytest.approx(values[1], abs=1e-8)


def test_h2_slope_matches_theta2():
    iet = _iet4(12345)
    log = expansion(iet, 4_000)
    frame = oseledets_frame(iet, 1_500, 1_500, log=log)
    svals = np.arange(400.0, 4001.0, 100.0)
    logh, log = log_h2_profile(iet, frame, svals, log=log)
    slope = np.polyfit(svals, logh, 1)[0]
    rep = lyapunov_spectrum(iet, 200_000)
    assert slope == pytest.approx(rep.exponents[1], abs=0.03)


def test_check_symplectic_residuals():
    rng = make_rng(31)
    from ietflow.rauzy import _make_move

    for p in rauzy_class(P4321):
        forms = veech_forms(p)
        for kind in ("a", "b"):
            mv = _make_move(kind, p)
            for _ in range(25):
                v1 = forms.project_H(rng.normal(size=4))
                v2 = forms.project_H(rng.normal(size=4))
                assert check_symplectic(p, mv, v1, v2) < 1e-9
                assert check_symplectic(p, mv, v1, v1) < 1e-12


def test_form_kernel_independence_m3():
    # the bilinear form is defined modulo N(pi): kernel shifts do not move it
    forms = veech_forms(P321)
    rng = make_rng(32)
    v1 = forms.project_H(rng.normal(size=3))
    v2 = forms.project_H(rng.normal(size=3))
    kernel = forms.N_basis[:, 0]
    assert forms.form(v1 + 2.5 * kernel, v2) == pytest.approx(forms.form(v1, v2), abs=1e-10)
    assert forms.form(v1, v2 + 1.5 * kernel) == pytest.approx(forms.form(v1, v2), abs=1e-10)
    # and the symplectic identity holds on H(pi) for the m = 3 class too
    from ietflow.rauzy import _make_move

    mv = _make_move("a", P321)
    assert check_symplectic(P321, mv, v1, v2) < 1e-9
