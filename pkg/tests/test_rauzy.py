import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ietflow import rauzy
from ietflow.errors import NonGeneric, ValidationError
from ietflow.rauzy import (
    Iet,
    Permutation,
    check_irreducible,
    expansion,
    iet_apply,
    iet_apply_inverse,
    induction_step,
    rauzy_class,
    rauzy_matrix,
    rauzy_move,
    window_product,
)
from ietflow.rng import make_rng, sample_simplex

P21 = Permutation((2, 1))
P4321 = Permutation((4, 3, 2, 1))
P321 = Permutation((3, 2, 1))

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0  # 0.618...


def test_irreducibility_examples():
    assert check_irreducible(P21)
    assert not check_irreducible(Permutation((1, 2, 3)))
    assert check_irreducible(P4321)
    # (2, 1, 3) fixes the prefix {1, 2}
    assert not check_irreducible(Permutation((2, 1, 3)))


def test_malformed_permutation_rejected():
    with pytest.raises(ValidationError):
        Permutation((1, 1, 2))
    with pytest.raises(ValidationError):
        Permutation((0, 1))


def test_rauzy_moves_on_two_symbols_fix_the_permutation():
    assert rauzy_move(P21, "a") == P21
    assert rauzy_move(P21, "b") == P21


def test_rauzy_move_case_formulas_m4():
    # direct evaluation of the three-case definitions
    assert rauzy_move(P4321, "a") == Permutation((4, 1, 3, 2))
    assert rauzy_move(P4321, "b") == Permutation((2, 4, 3, 1))


def test_rauzy_matrices_m2():
    assert np.array_equal(rauzy_matrix("a", P21), [[1, 1], [0, 1]])
    assert np.array_equal(rauzy_matrix("b", P21), [[1, 0], [1, 1]])


def test_rauzy_matrix_b_is_identity_plus_unit():
    expected = np.eye(4, dtype=int)
    expected[3, 0] = 1  # E + E^{4, pi^-1 4} with pi^-1 4 = 1
    assert np.array_equal(rauzy_matrix("b", P4321), expected)


def _brute_force_class(perm):
    # independent closure computation used as the enumeration oracle
    seen = {perm.images}
    frontier = [perm]
    while frontier:
        nxt = []
        for p in frontier:
            for kind in ("a", "b"):
                q = rauzy_move(p, kind)
                if q.images not in seen:
                    seen.add(q.images)
                    nxt.append(q)
        frontier = nxt
    return seen


def test_rauzy_class_sizes():
    assert [p.images for p in rauzy_class(P21)] == [(2, 1)]
    cls = rauzy_class(P4321)
    assert len(cls) == 7
    assert {p.images for p in cls} == _brute_force_class(P4321)
    cls3 = rauzy_class(P321)
    assert {p.images for p in cls3} == {(3, 2, 1), (3, 1, 2), (2, 3, 1)}


def test_rauzy_class_closed_and_contains_seed():
    cls = rauzy_class(P4321)
    members = {p.images for p in cls}
    assert P4321.images in members
    for p in cls:
        for kind in ("a", "b"):
            assert rauzy_move(p, kind).images in members


def test_matrices_unimodular_over_class():
    for p in rauzy_class(P4321):
        for kind in ("a", "b"):
            A = rauzy_matrix(kind, p)
            assert abs(round(np.linalg.det(A))) == 1
            assert A.min() >= 0


def test_apply_matrix_inverse_matches_solve():
    rng = make_rng(7)
    for p in rauzy_class(P4321):
        for kind in ("a", "b"):
            A = rauzy_matrix(kind, p)
            v = rng.random(4)
            np.testing.assert_allclose(
                rauzy.apply_matrix_inverse(kind, p, v), np.linalg.solve(A, v), atol=1e-12
            )
            np.testing.assert_allclose(rauzy.apply_matrix_transpose(kind, p, v), A.T @ v, atol=1e-12)


def test_iet_apply_rotation():
    iet = Iet(np.array([0.4, 0.6]), P21)
    assert iet_apply(iet, 0.1) == pytest.approx(0.7, abs=1e-15)
    assert iet_apply(iet, 0.5) == pytest.approx(0.1, abs=1e-15)


def test_iet_apply_left_endpoint_half_open():
    iet = Iet(np.array([0.4, 0.6]), P21)
    # x = beta_2 exactly belongs to I_2
    assert iet_apply(iet, 0.4) == pytest.approx(0.0, abs=1e-15)


def test_iet_apply_domain_error():
    iet = Iet(np.array([0.4, 0.6]), P21)
    with pytest.raises(ValidationError):
        iet_apply(iet, 1.0)
    with pytest.raises(ValidationError):
        iet_apply(iet, -0.1)


def test_iet_inverse_roundtrip():
    rng = make_rng(3)
    iet = Iet(sample_simplex(4, rng), P4321)
    xs = rng.random(100)
    np.testing.assert_allclose(iet_apply_inverse(iet, iet_apply(iet, xs)), xs, atol=1e-14)


def test_induction_step_kind_b():
    iet = Iet(np.array([0.4, 0.6]), P21)
    nxt, move, roof = induction_step(iet)
    assert move.kind == "b"
    np.testing.assert_allclose(nxt.lam, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
    assert roof == pytest.approx(-np.log(0.6), abs=1e-12)


def test_induction_step_kind_a():
    iet = Iet(np.array([0.6, 0.4]), P21)
    _, move, _ = induction_step(iet)
    assert move.kind == "a"


def test_induction_tie_rejected():
    iet = Iet(np.array([0.5, 0.5]), P21)
    with pytest.raises(NonGeneric):
        induction_step(iet)


def test_expansion_empty():
    iet = Iet(np.array([0.4, 0.6]), P21)
    log = expansion(iet, 0)
    assert log.n_steps == 0
    assert log.perm_at(0) == P21
    np.testing.assert_array_equal(log.lambdas[0], iet.lam)


def test_golden_expansion_periodic():
    lam = np.array([1.0 - GOLDEN, GOLDEN])
    log = expansion(Iet(lam, P21), 4)
    assert [mv.kind for mv in log.moves] == ["b", "a", "b", "a"]
    np.testing.assert_allclose(log.lambdas[1], [GOLDEN, 1.0 - GOLDEN], atol=1e-12)
    np.testing.assert_allclose(log.lambdas[2], lam, atol=1e-12)


def test_renormalization_identity():
    # exp(-roof) == |A^-1 lambda| at every step
    rng = make_rng(11)
    log = expansion(Iet(sample_simplex(4, rng), P4321), 200)
    for k, move in enumerate(log.moves):
        lam = log.lambdas[k]
        reduced = rauzy.apply_matrix_inverse(move.kind, move.perm_before, lam)
        assert np.exp(-log.roof_values[k]) == pytest.approx(reduced.sum(), abs=1e-12)


def test_expansion_visits_whole_class():
    rng = make_rng(2024)
    log = expansion(Iet(sample_simplex(4, rng), P4321), 10_000)
    visited = {log.perm_at(k).images for k in range(log.n_steps + 1)}
    assert visited == {p.images for p in rauzy_class(P4321)}


def test_expansion_extend_matches_full_run():
    rng = make_rng(5)
    base = Iet(sample_simplex(4, rng), P4321)
    full = expansion(base, 60)
    glued = expansion(base, 25).extend(35)
    assert [mv.kind for mv in glued.moves] == [mv.kind for mv in full.moves]
    np.testing.assert_allclose(glued.lambdas[60], full.lambdas[60], atol=1e-12)
    np.testing.assert_allclose(glued.log_scales, full.log_scales, atol=1e-9)


def test_expansion_json_roundtrip():
    rng = make_rng(6)
    base = Iet(sample_simplex(4, rng), P4321)
    log = expansion(base, 40)
    log2 = rauzy.ExpansionLog.from_json(log.to_json())
    assert [mv.kind for mv in log2.moves] == [mv.kind for mv in log.moves]
    np.testing.assert_array_equal(log2.lambdas[40], log.lambdas[40])


def test_window_product_exact_ints():
    rng = make_rng(8)
    log = expansion(Iet(sample_simplex(4, rng), P4321), 600)
    prod = window_product(log, 0, 600)
    assert prod.dtype == object
    # column sums are the exact tower heights; they must be huge yet exact
    heights = prod.sum(axis=0)
    assert all(isinstance(h, int) for h in heights.tolist())
    assert max(heights.tolist()) > 2**63  # would overflow int64


def test_measure_preservation_grid():
    # image of a uniform grid restricted to any I_i is that grid translated;
    # the image interval lengths are exactly the permuted lengths
    rng = make_rng(9)
    iet = Iet(sample_simplex(4, rng), P4321)
    n = 100_000
    xs = (np.arange(n) + 0.5) / n
    ys = iet_apply(iet, xs)
    edges = np.cumsum(iet.lam)
    idx = np.minimum(np.searchsorted(edges, xs, side="right"), iet.m - 1)
    for i in range(iet.m):
        sel = idx == i
        shifts = ys[sel] - xs[sel]
        assert np.ptp(shifts) < 1e-15  # one rigid translation per piece
    inv = iet.perm.inverse_tuple()
    img_lengths = [iet.lam[inv[i] - 1] for i in range(iet.m)]
    np.testing.assert_allclose(np.diff(np.concatenate(([0.0], np.cumsum(img_lengths)))), img_lengths)
    # sorted image multiset still has mean gap 1/n and covers [0, 1)
    ys_sorted = np.sort(ys)
    assert abs(np.mean(np.diff(ys_sorted)) - 1.0 / n) < 1e-9
    assert np.sum(np.abs(np.diff(ys_sorted) - 1.0 / n) > 1e-12) <= 2 * iet.m


def test_unique_ergodicity_proxy():
    rng = make_rng(13)
    iet = Iet(sample_simplex(4, rng), P4321)
    mp = rauzy.IetMap(iet.lam, iet.perm)
    n = 1_000_000
    x = float(rng.random())
    hits = 0
    xs = np.full(1, x)
    # iterate in one vector to reuse the cached map
    count = 0
    for _ in range(n):
        xs = mp.apply(xs)
        count += 1
        if xs[0] < 0.3:
            hits += 1
    assert abs(hits / n - 0.3) < 2e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_property_induction_preserves_simplex(seed):
    rng = make_rng(seed)
    lam = sample_simplex(4, rng)
    try:
        log = expansion(Iet(lam, P4321), 50)
    except NonGeneric:
        return
    for k in range(51):
        assert log.lambdas[k].min() > 0
        assert abs(log.lambdas[k].sum() - 1.0) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_property_move_preserves_irreducibility(seed):
    rng = make_rng(seed)
    perms = rauzy_class(P4321) + rauzy_class(P321)
    p = perms[int(rng.integers(len(perms)))]
    kind = "a" if rng.random() < 0.5 else "b"
    assert check_irreducible(rauzy_move(p, kind))
