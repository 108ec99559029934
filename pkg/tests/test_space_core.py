import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lurnorm.errors import MetricError, TopologyError, ValidationError
from lurnorm.space_core import (EMPTY, INF, PointSet, RealFunction, build_finite_space,
                                build_sequence_space, check_function,
                                finite_space_from_open_sets)
from oracles import preorder_closure


def sierpinski():
    return build_finite_space({"x": ["x"], "y": ["x", "y"]}, [[0, 1], [1, 0]])


def test_one_point_space():
    k1 = build_finite_space({"a": ["a"]}, [])
    assert k1.is_discrete and k1.is_hausdorff
    assert k1.diameter(k1.universe) == 0.0
    assert k1.diameter(EMPTY) == 0.0


def test_sierpinski_is_valid_but_not_hausdorff():
    s = sierpinski()
    assert not s.is_hausdorff
    assert s.closure(PointSet.of("x")) == PointSet.of("x", "y")
    assert s.closure(PointSet.of("y")) == PointSet.of("y")
    assert s.is_open(PointSet.of("x")) and not s.is_open(PointSet.of("y"))
    assert s.open_hull(PointSet.of("y")) == s.universe


def test_point_outside_own_neighbourhood_is_rejected():
    with pytest.raises(TopologyError) as err:
        build_finite_space({"x": ["y"], "y": ["y"]})
    assert err.value.axiom == "reflexivity"
    assert "x" in err.value.witness


def test_intransitive_neighbourhoods_rejected():
    with pytest.raises(TopologyError, match="transitivity"):
        build_finite_space({"x": ["x", "y"], "y": ["y", "z"], "z": ["z"]})


@pytest.mark.parametrize("metric, message", [
    ([[0, 1], [2, 0]], "metric symmetry (a,b)"),
    ([[0, -1], [-1, 0]], "metric positivity (a,b)"),
    ([[1, 1], [1, 0]], "metric identity (a,a)"),
])
def test_metric_axioms(metric, message):
    with pytest.raises(MetricError) as err:
        build_finite_space({"a": ["a"], "b": ["b"]}, metric)
    assert message in str(err.value)


def test_triangle_inequality_checked():
    with pytest.raises(MetricError, match="triangle"):
        build_finite_space({"a": ["a"], "b": ["b"], "c": ["c"]},
                           [[0, 1, 5], [1, 0, 1], [5, 1, 0]])


def test_open_sets_constructor_matches_neighbourhoods():
    s = finite_space_from_open_sets(["x", "y"], [["x"]], [[0, 1], [1, 0]])
    assert s.min_nbhd == sierpinski().min_nbhd
    with pytest.raises(ValidationError):
        finite_space_from_open_sets(["x", "y", "z"], [["x", "y"], ["y", "z"]])


def test_sequence_space_layout():
    w = build_sequence_space(8, "dyadic")
    assert w.points == tuple(str(k) for k in range(8)) + (INF,)
    assert w.universe == PointSet(frozenset(w.points), frozenset({0}))
    with pytest.raises(ValidationError):
        build_sequence_space(0)


def test_sequence_closures_add_the_limit():
    w = build_sequence_space(8, "dyadic")
    tail = PointSet(tail={0})
    assert w.closure(tail) == tail | PointSet.of(INF)
    assert w.closure(PointSet.of("3")) == PointSet.of("3")
    assert w.is_open(PointSet.of("5"))
    assert not w.is_open(PointSet.of(INF))
    assert w.is_open(tail | PointSet.of(INF))


def test_sequence_metric_rules():
    w = build_sequence_space(8, "dyadic")
    assert w.distance("0", INF) == 1.0
    assert w.distance("3", "5") == pytest.approx(2 ** -3 - 2 ** -5)
    assert w.diameter(PointSet(frozenset({INF}), frozenset({0}))) == pytest.approx(2 ** -8)
    h = build_sequence_space(4, "harmonic")
    assert h.distance("1", INF) == pytest.approx(0.5)


def test_period_splits_the_tail():
    w = build_sequence_space(4, "dyadic", period=2)
    evens, odds = PointSet(tail={0}), PointSet(tail={1})
    assert w.closure(evens) == evens | PointSet.of(INF)
    assert not evens.meets(odds)
    assert w.all_residues == frozenset({0, 1})


def test_format_and_parse_round_trip():
    w = build_sequence_space(8, "dyadic")
    s = PointSet(frozenset({"2", INF}), frozenset({0}))
    assert w.parse(w.fmt(s)) == s
    assert w.fmt(EMPTY) == "{}"
    with pytest.raises(ValidationError):
        w.parse("{9}")
    two = build_sequence_space(4, "dyadic", period=2)
    odd = PointSet(tail={1})
    assert two.fmt(odd) == "{tail%2=1}" and two.parse("{tail%2=1}") == odd
    for bad in ("{tail%3=1}", "{tail%x=1}", "{tail%2=}"):
        with pytest.raises(ValidationError):
            two.parse(bad)


def test_functions_must_be_continuous():
    s = sierpinski()
    check_function(s, RealFunction({"x": 1.0, "y": 1.0}))
    with pytest.raises(ValidationError):
        check_function(s, RealFunction({"x": 1.0, "y": 0.0}))


def test_sequence_functions_need_a_tail_value():
    w = build_sequence_space(2, "dyadic")
    with pytest.raises(ValidationError, match="tail"):
        check_function(w, RealFunction({"0": 0, "1": 1}))
    f = RealFunction({"0": 0, "1": 1}, tail_value=0.5)
    check_function(w, f)
    assert f.at(INF) == 0.5
    assert f.osc_on(w.universe) == 1.0


def test_function_arithmetic():
    f = RealFunction({"a": 1.0, "b": -2.0})
    g = RealFunction({"a": 0.5, "b": 0.5})
    assert (f + g).values == {"a": 1.5, "b": -1.5}
    assert (-f).values == {"a": -1.0, "b": 2.0}
    assert (2 * f - g).values == {"a": 1.5, "b": -4.5}


# -- property tests -----------------------------------------------------------


@st.composite
def preorders(draw):
    n = draw(st.integers(1, 5))
    pts = [f"p{k}" for k in range(n)]
    rel = {(a, a) for a in pts}
    for a in pts:
        for b in pts:
            if draw(st.booleans()) and draw(st.booleans()):
                rel.add((a, b))
    changed = True
    while changed:  # transitive closure
        changed = False
        for (a, b) in list(rel):
            for (c, d) in list(rel):
                if b == c and (a, d) not in rel:
                    rel.add((a, d))
                    changed = True
    return {a: [b for b in pts if (a, b) in rel] for a in pts}


def subsets(draw, pts):
    return PointSet(frozenset(p for p in pts if draw(st.booleans())))


@settings(max_examples=60, deadline=None)
@given(data=st.data(), nbhd=preorders())
def test_closure_satisfies_kuratowski_axioms(data, nbhd):
    space = build_finite_space(nbhd)
    pts = space.points
    a = subsets(data.draw, pts)
    b = subsets(data.draw, pts)
    cl = space.closure
    assert cl(EMPTY) == EMPTY
    assert a <= cl(a)
    assert cl(cl(a)) == cl(a)
    assert cl(a | b) == cl(a) | cl(b)
    u = {p: frozenset(q) for p, q in nbhd.items()}
    assert cl(a).finite == preorder_closure(u, a.finite)
    assert space.is_open(space.open_hull(a)) and a <= space.open_hull(a)


tail_sets = st.builds(lambda f, t: PointSet(frozenset(f), frozenset(t)),
                      st.sets(st.sampled_from(["0", "1", "2", INF])), st.sets(st.integers(0, 2)))


@given(tail_sets, tail_sets, tail_sets)
def test_pointset_algebra(a, b, c):
    assert a | (b & c) == (a | b) & (a | c)
    assert a - (b | c) == (a - b) & (a - c)
    assert (a & b) <= a <= (a | b)
    assert a.meets(b) == (not (a & b).is_empty)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_random_l1_metrics_validate(coords):
    n = len(coords)
    x = np.array(coords)
    dist = np.abs(x[:, None] - x[None, :]) + 1e-3 * (1 - np.eye(n))
    space = build_finite_space({f"p{k}": [f"p{k}"] for k in range(n)}, dist)
    assert math.isclose(space.diameter(space.universe), float(dist.max()))
