import numpy as np
import pytest

from ietflow.errors import Singular, ValidationError
from ietflow.rauzy import Iet, Permutation, apply_matrix_transpose, iet_apply, rauzy_class
from ietflow.rng import make_rng
from ietflow.zipper import (
    SurfacePoint,
    ZipperedRectangle,
    area,
    heights,
    rect_of,
    sample_zr,
    teich_flow,
    validate_cone,
    veech_forms,
    vertical_flow,
    zr_induction,
)

P21 = Permutation((2, 1))
P4321 = Permutation((4, 3, 2, 1))
P321 = Permutation((3, 2, 1))


def test_cone_examples():
    assert validate_cone(P21, [-0.5, 0.5])
    assert validate_cone(P21, [0.0, 0.0])
    assert not validate_cone(P21, [0.5, -0.5])


def test_heights_examples():
    h, a = heights(P21, [-0.5, 0.5])
    np.testing.assert_allclose(h, [0.5, 0.5])
    np.testing.assert_allclose(a, [0.5, 0.0])
    h0, _ = heights(P21, [0.0, 0.0])
    np.testing.assert_allclose(h0, [0.0, 0.0])
    h2, _ = heights(P21, [-0.2, 0.7])
    np.testing.assert_allclose(h2, [0.7, 0.2])


def test_heights_cone_violation():
    with pytest.raises(ValidationError):
        heights(P21, [0.5, -0.5])


def test_area_examples():
    zr = ZipperedRectangle(np.array([0.4, 0.6]), P21, np.array([-0.5, 0.5]))
    assert area(zr) == pytest.approx(0.5, abs=1e-15)
    assert zr.area == pytest.approx(0.5, abs=1e-15)


def test_teich_flow_identity_and_scaling():
    zr = ZipperedRectangle(np.array([0.4, 0.6]), P21, np.array([-0.5, 0.5]))
    same = teich_flow(zr, 0.0)
    np.testing.assert_allclose(same.lam, zr.lam)
    np.testing.assert_allclose(same.delta, zr.delta)
    scaled = teich_flow(zr, np.log(2.0))
    np.testing.assert_allclose(scaled.lam, [0.8, 1.2], atol=1e-15)
    np.testing.assert_allclose(scaled.delta, [-0.25, 0.25], atol=1e-15)
    assert scaled.area == pytest.approx(zr.area, abs=1e-12)


def test_teich_flow_composition():
    rng = make_rng(42)
    zr = sample_zr(P4321, rng)
    one = teich_flow(teich_flow(zr, 0.3), 0.9)
    two = teich_flow(zr, 1.2)
    np.testing.assert_allclose(one.lam, two.lam, atol=1e-12)
    np.testing.assert_allclose(one.delta, two.delta, atol=1e-12)


def test_zr_induction_example():
    zr = ZipperedRectangle(np.array([0.4, 0.6]), P21, np.array([-0.5, 0.5]))
    nxt = zr_induction(zr)
    assert nxt.perm == P21  # b fixes (2, 1)
    np.testing.assert_allclose(nxt.lam, [0.4, 0.2], atol=1e-15)
    np.testing.assert_allclose(nxt.delta, [-0.5, 1.0], atol=1e-15)
    assert nxt.area == pytest.approx(0.5, abs=1e-13)
    assert validate_cone(nxt.perm, nxt.delta)


def test_zr_induction_area_invariance_random():
    rng = make_rng(1)
    for _ in range(200):
        zr = sample_zr(P4321, rng)
        nxt = zr_induction(zr)
        assert nxt.area == pytest.approx(zr.area, abs=1e-12)
        assert validate_cone(nxt.perm, nxt.delta, tol=1e-10)


def test_induction_commutes_with_teich_flow():
    rng = make_rng(2)
    for _ in range(50):
        zr = sample_zr(P4321, rng)
        t = float(rng.uniform(-0.5, 0.5))
        one = teich_flow(zr_induction(zr), t)
        two = zr_induction(teich_flow(zr, t))
        assert one.perm == two.perm
        np.testing.assert_allclose(one.lam, two.lam, atol=1e-12)
        np.testing.assert_allclose(one.delta, two.delta, atol=1e-12)


def test_veech_forms_m2():
    forms = veech_forms(P21)
    np.testing.assert_array_equal(forms.L, [[0, 1], [-1, 0]])
    assert forms.rank == 2
    assert forms.genus == 1
    assert forms.N_basis.shape == (2, 0)


def test_veech_forms_m4():
    forms = veech_forms(P4321)
    expected = np.triu(np.ones((4, 4), dtype=int), k=1) - np.tril(np.ones((4, 4), dtype=int), k=-1)
    np.testing.assert_array_equal(forms.L, expected)
    assert forms.rank == 4
    assert forms.genus == 2
    assert forms.N_basis.shape == (4, 0)


def test_veech_forms_m3_rank_oracle():
    sympy = pytest.importorskip("sympy")
    forms = veech_forms(P321)
    exact_rank = sympy.Matrix(forms.L.tolist()).rank()
    assert forms.rank == exact_rank == 2
    assert forms.genus == 1
    # kernel is spanned by (1, -1, 1)
    v = np.array([1.0, -1.0, 1.0])
    np.testing.assert_allclose(forms.L @ v, 0.0, atol=1e-12)
    assert forms.N_basis.shape == (3, 1)


def test_genus_constant_on_class():
    genera = {veech_forms(p).genus for p in rauzy_class(P4321)}
    assert genera == {2}


def test_symplectic_preservation_per_move():
    rng = make_rng(3)
    for p in rauzy_class(P4321):
        forms = veech_forms(p)
        for kind in ("a", "b"):
            from ietflow.rauzy import rauzy_move

            forms_next = veech_forms(rauzy_move(p, kind))
            for _ in range(20):
                v1 = forms.project_H(rng.normal(size=4))
                v2 = forms.project_H(rng.normal(size=4))
                lhs = forms_next.form(
                    apply_matrix_transpose(kind, p, v1), apply_matrix_transpose(kind, p, v2)
                )
                rhs = forms.form(v1, v2)
                assert abs(lhs - rhs) < 1e-9
                assert abs(forms.form(v1, v1)) < 1e-10  # antisymmetry on the diagonal


def test_form_ignores_kernel_component():
    forms = veech_forms(P321)
    rng = make_rng(4)
    v1 = forms.project_H(rng.normal(size=3))
    v2 = forms.project_H(rng.normal(size=3))
    kernel = forms.N_basis[:, 0]
    assert forms.form(v1, v2 + 3.7 * kernel) == pytest.approx(forms.form(v1, v2), abs=1e-10)


def test_vertical_flow_no_crossing():
    zr = ZipperedRectangle(np.array([0.4, 0.6]), P21, np.array([-0.5, 0.5]))
    p = SurfacePoint(0.1, 0.2)
    out = vertical_flow(zr, p, 0.1)
    assert out.base == pytest.approx(0.1)
    assert out.fiber == pytest.approx(0.3)


def test_vertical_flow_one_crossing_is_iet():
    rng = make_rng(5)
    zr = sample_zr(P4321, rng)
    iet = Iet(zr.lam / zr.lam.sum(), zr.perm)
    for _ in range(50):
        base = float(rng.random() * zr.lam.sum())
        r = rect_of(zr, base)
        out = vertical_flow(zr, SurfacePoint(base, 0.0), float(zr.heights[r - 1]))
        expected = iet_apply(iet, base / zr.lam.sum()) * zr.lam.sum()
        assert out.fiber == pytest.approx(0.0, abs=1e-12)
        assert out.base == pytest.approx(expected, abs=1e-12)


def test_vertical_flow_time_additivity():
    rng = make_rng(6)
    zr = sample_zr(P4321, rng)
    p = SurfacePoint(float(rng.random() * zr.lam.sum()), 0.0)
    collected = []
    total = 200.0
    out = vertical_flow(zr, p, total, collect=collected)
    # crossings happen at cumulative height sums
    heights_seen = np.diff([0.0] + [row[0] for row in collected])
    assert np.all(heights_seen > 0)
    assert len(collected) > 100
    # elapsed time at the last crossing plus the final fiber equals total
    assert collected[-1][0] + out.fiber == pytest.approx(total, abs=1e-10)


def test_sample_zr_contract():
    rng = make_rng(7)
    zr = sample_zr(P4321, rng)
    assert validate_cone(zr.perm, zr.delta)
    assert zr.area == pytest.approx(1.0, abs=1e-12)
    assert zr.lam.sum() == pytest.approx(1.0, abs=1e-12)
    zr2 = sample_zr(P4321, make_rng(7))
    np.testing.assert_array_equal(zr.lam, zr2.lam)
    np.testing.assert_array_equal(zr.delta, zr2.delta)


def test_zr_json_roundtrip():
    rng = make_rng(8)
    zr = sample_zr(P4321, rng)
    zr2 = ZipperedRectangle.from_json(zr.to_json())
    np.testing.assert_allclose(zr2.lam, zr.lam, atol=1e-15)
    np.testing.assert_allclose(zr2.delta, zr.delta, atol=1e-15)
    assert zr2.perm == zr.perm
