import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lurnorm.errors import SeparationError, UnsupportedKind, ValidationError
from lurnorm.families import sigma_sorted
from lurnorm.instance import random_discrete_instance
from lurnorm.norm_engine import (CONTRACTION, NormModel, NormParams, build_model, enumerate_B,
                                 evaluate, norm, phi, separators, solve, weight_c)
from lurnorm.space_core import EMPTY, PointSet, RealFunction
from oracles import naive_norm, naive_omega_sq

P = PointSet.of
LEVELS = range(1, 5)


def families_of(inst, level=1):
    return [[frozenset(M.finite) for M in fam.members] for fam in inst.covering(level).families]


def test_weights():
    assert weight_c((0,)) == 0.5
    assert weight_c((0, 1)) == 0.125
    assert sum(weight_c(s) for s in sigma_sorted(4)) <= 1.0


def test_params_validation():
    with pytest.raises(ValidationError):
        NormParams(l_max=0).validate()
    with pytest.raises(ValidationError):
        NormParams(weights=lambda s: 1.0).validate()
    with pytest.raises(ValidationError, match="no weight"):
        NormParams(weights={(0,): 0.5}).validate()


def test_phi_examples(gallery):
    k2 = gallery("k2")
    f = k2.function("f1")
    K = k2.space.universe
    assert phi(k2.space, f, K, [P("a")], [P("b")]) == 0.5
    assert phi(k2.space, f, K, [P("b")], [P("a")]) == 0.0
    assert phi(k2.space, RealFunction({"a": 2, "b": 2}), K, [P("a")], [P("b")]) == 0.0
    with pytest.raises(ValidationError):
        phi(k2.space, f, P("a"), [P("a")], [P("b")])


def test_pair_enumeration(gallery):
    k2 = gallery("k2")
    cov = k2.covering(1)
    pairs = enumerate_B(cov, k2.space.universe, 1, 1, (0,), (0,))
    assert [(pf.M, pf.N) for pf in pairs] == [((P("a"),), (P("b"),)), ((P("b"),), (P("a"),))]
    assert enumerate_B(cov, k2.space.universe, 2, 1, (0,), (0,)) == []
    k1 = gallery("k1")
    assert enumerate_B(k1.covering(1), k1.space.universe, 1, 1, (0,), (0,)) == []


def test_discrete_separators(gallery):
    k3 = gallery("k3").space
    sep = separators(k3, [P("a")], [P("b")])
    assert (sep.X, sep.Y) == (P("a", "c"), P("b", "c"))
    assert separators(k3, [P("a")], [P("b")]) is sep
    swapped = separators(k3, [P("b")], [P("a")])
    assert (swapped.X, swapped.Y) == (sep.Y, sep.X)


def test_separation_failure_is_explicit():
    from lurnorm.space_core import build_finite_space
    # {a} and {b} are closed, but every open set around either contains w
    space = build_finite_space({"w": ["w"], "a": ["a", "w"], "b": ["b", "w"]})
    with pytest.raises(SeparationError, match="separation failure"):
        separators(space, [P("a")], [P("b")])


def test_one_point_closed_form(gallery):
    k1 = gallery("k1")
    s = solve(k1.function("one"), k1.space, k1.coverings(LEVELS))
    for l in LEVELS:
        assert s.omega(k1.space.universe, l) == pytest.approx(6 ** -0.5, abs=1e-12)
    zero = solve(k1.function("zero"), k1.space, k1.coverings(LEVELS))
    assert zero.value == 0.0 and zero.omega(k1.space.universe, 1) == 0.0


def test_one_point_norm_brackets_full_sum(gallery):
    k1 = gallery("k1")
    params = NormParams(l_max=12)
    value, bound = norm(k1.function("one"), k1.space, k1.coverings(range(1, 13)), params)
    assert abs(value - 12 ** -0.5) <= bound <= 1e-3


def test_psi_hand_value(gallery):
    k2 = gallery("k2")
    s = solve(k2.function("f1"), k2.space, k2.coverings(LEVELS))
    K = k2.space.universe
    assert s.psi(K, 1, [P("a")], [P("b")]) ** 2 == pytest.approx(1 / 18, abs=1e-10)
    assert evaluate(s, ("omega", EMPTY, 1)) == 0.0
    assert evaluate(s, ("omega", P("b"), 2)) == pytest.approx(6 ** -0.5, abs=1e-10)


def test_malformed_queries_rejected(gallery):
    k2 = gallery("k2")
    s = solve(k2.function("f1"), k2.space, k2.coverings(LEVELS))
    for q in [("omega",), ("nope", EMPTY, 1), "omega", ("omega", "a", 1)]:
        with pytest.raises(ValidationError):
            evaluate(s, q)


def test_symbolic_spaces_are_unsupported(gallery):
    w = gallery("omega8")
    with pytest.raises(UnsupportedKind):
        NormModel(w.space, w.coverings(LEVELS))


@pytest.mark.parametrize("name", ["k2", "k3"])
def test_tables_match_reference_solver(gallery, name):
    inst = gallery(name)
    fams = families_of(inst)
    model = build_model(inst.space, inst.coverings(LEVELS), NormParams(fp_tol=1e-13))
    for fname, f in inst.functions.items():
        ref = naive_omega_sq(inst.space.points, fams, f.values)
        sol = model.solve_batch(f.as_array(inst.space)[None])
        for (level, L), k in model.node_index.items():
            assert sol.omega2[0, k] == pytest.approx(ref[frozenset(L.finite)], abs=1e-9), \
                (fname, level, inst.space.fmt(L))


def test_random_instances_match_reference_solver():
    rng = np.random.default_rng(7)
    for _ in range(6):
        inst = random_discrete_instance(rng, n_points=int(rng.integers(2, 5)))
        fams = families_of(inst)
        for f in inst.functions.values():
            value, _ = norm(f, inst.space, inst.coverings(LEVELS), NormParams(fp_tol=1e-13))
            assert value == pytest.approx(naive_norm(inst.space.points, fams, f.values),
                                          abs=1e-9)


def test_truncation_bound_covers_a_finer_solve(gallery):
    k3 = gallery("k3")
    coarse = NormParams(l_max=3, mn_max=1, p_max=4)
    fine = NormParams(l_max=14, mn_max=3, p_max=40, fp_tol=1e-13)
    for f in k3.functions.values():
        v0, b0 = norm(f, k3.space, k3.coverings(range(1, 4)), coarse)
        v1, b1 = norm(f, k3.space, k3.coverings(range(1, 15)), fine)
        assert v0 <= v1 + 1e-9
        assert v1 - v0 <= b0 + 1e-9
        assert b1 < b0


def test_contraction_and_fixed_point(gallery):
    k3 = gallery("k3")
    model = build_model(k3.space, k3.coverings(LEVELS))
    F = np.random.default_rng(3).uniform(-1, 1, size=(20, 3))
    sol = model.solve_batch(F)
    h = sol.history
    ratios = h[1:] / np.where(h[:-1] > 0, h[:-1], 1)
    assert (ratios <= CONTRACTION + 1e-9).all()
    # one more step barely moves the tables
    om2, _ = model.step(sol.omega2, sol.psi2, sol.phi2, sol.sup ** 2,
                        model._node_stats(F)[1] ** 2)
    assert np.abs(om2 - sol.omega2).max() <= model.params.fp_tol


def test_both_initializations_agree(gallery):
    k2 = gallery("k2")
    model = build_model(k2.space, k2.coverings(LEVELS))
    F = np.array([[0.0, 1.0], [0.3, -0.7]])
    a, b = model.solve_batch(F, "zero"), model.solve_batch(F, "sup")
    assert np.abs(a.omega2 - b.omega2).max() <= 4 * model.params.fp_tol
    with pytest.raises(ValidationError):
        model.solve_batch(F, "ones")


def test_model_without_the_whole_space_has_no_norm(gallery):
    k2 = gallery("k2")
    model = NormModel(k2.space, k2.coverings(LEVELS), include_universe=False,
                      roots={1: [P("a")]})
    sol = model.solve_batch(np.array([[1.0, 0.0]]))
    assert sol.omega2[0, model.node_index[(1, P("a"))]] == pytest.approx(1 / 6, abs=1e-9)
    with pytest.raises(ValidationError):
        sol.norms()


def test_unreachable_set_computed_on_demand(gallery):
    k3 = gallery("k3")
    s = solve(k3.function("f3"), k3.space, k3.coverings(LEVELS))
    L = P("a", "b")
    direct = NormModel(k3.space, k3.coverings([2]), levels=[2], roots={2: [L]})
    want = direct.solve_batch(k3.function("f3").as_array(k3.space)[None])
    assert s.omega(L, 2) ** 2 == pytest.approx(want.omega2[0, direct.node_index[(2, L)]])


vectors = st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=40, deadline=None)
@given(vectors, vectors, st.floats(-4, 4))
def test_norm_is_a_seminorm_on_k3(gallery, u, v, lam):
    k3 = gallery("k3")
    model = build_model(k3.space, k3.coverings(LEVELS))
    F = np.array([u, v, 0.5 * (np.array(u) + np.array(v)), lam * np.array(u), -np.array(u)])
    vals, _ = model.norm_batch(F)
    tol = 1e-6
    assert vals[2] <= 0.5 * (vals[0] + vals[1]) + tol
    assert vals[3] == pytest.approx(abs(lam) * vals[0], abs=tol)
    assert vals[4] == pytest.approx(vals[0], abs=tol)
    sup = np.abs(u).max()
    assert vals[0] ** 2 <= 0.5 * sup ** 2 + tol
    assert vals[0] ** 2 >= (0.5 - 2.0 ** -5) * sup ** 2 / 6 - tol


def test_theta_swaps_with_sign(gallery):
    k3 = gallery("k3")
    f = k3.function("f3")
    cov = k3.coverings(LEVELS)
    s, t = solve(f, k3.space, cov), solve(-f, k3.space, cov)
    K = k3.space.universe
    for i, j in [((0,), (0,)), ((0,), (1,)), ((1,), (0,))]:
        for m, n in [(1, 1), (2, 1), (1, 2)]:
            assert t.theta(K, 1, i, j, m, n) == pytest.approx(s.theta(K, 1, j, i, n, m),
                                                              abs=1e-9)
    assert math.isfinite(s.theta_p(K, 1, (0,), (1,), 1, 1, 3))
