import numpy as np
import pytest

from lurnorm.errors import (CoverageError, InstanceFormatError, MetricError, UnsupportedKind,
                            ValidationError)
from lurnorm.instance import (GALLERY, load_instance, parse_instance, random_discrete_instance,
                              resolve_instance)
from lurnorm.space_core import INF, PointSet

HEAD = "name: t\nkind: finite\n"


def parse_error(text):
    with pytest.raises(ValidationError) as err:
        parse_instance(text).coverings([0, 1])
    return err.value


@pytest.mark.parametrize("name", GALLERY)
def test_gallery_instances_load(gallery, name):
    inst = gallery(name)
    assert inst.functions
    for level in range(0, 5):
        assert inst.covering(level).n_families >= 1


def test_gallery_names_resolve_and_paths_win(tmp_path, monkeypatch):
    assert resolve_instance("k2").name == "K2"
    (tmp_path / "k2").write_text("name: local\nkind: finite\npoints: [z]\n")
    monkeypatch.chdir(tmp_path)
    assert resolve_instance("k2").name == "local"


def test_unknown_field_names_line():
    err = parse_error(HEAD + "points: [a]\ncolour: red\n")
    assert isinstance(err, InstanceFormatError)
    assert str(err) == "line 4: unknown field 'colour' in instance"


def test_unknown_nested_field():
    err = parse_error(HEAD + "points: [a]\nfunctions:\n  g:\n    value: {a: 1}\n")
    assert "line 6" in str(err) and "value" in str(err)


def test_yaml_syntax_error_has_a_line():
    err = parse_error(HEAD + "points: [a\n")
    assert str(err).startswith("line ") and "YAML" in str(err)


def test_duplicate_keys_rejected():
    assert "duplicate key 'kind'" in str(parse_error(HEAD + "kind: finite\npoints: [a]\n"))


def test_asymmetric_metric():
    err = parse_error(HEAD + "points: [a, b]\nmetric:\n  matrix: [[0, 1], [2, 0]]\n")
    assert isinstance(err, MetricError)
    assert "metric symmetry (a,b)" in str(err)


def test_covering_missing_a_point():
    err = parse_error(HEAD + "points: [a, b, c]\ncovering:\n  default:\n"
                      "    - members: [[a], [b]]\n")
    assert isinstance(err, CoverageError) and "uncovered: c" in str(err)


def test_default_covering_of_a_discrete_space():
    inst = parse_instance(HEAD + "points: [a, b]\n")
    assert inst.covering(3).families[0].members == (PointSet.of("a"), PointSet.of("b"))


def test_non_discrete_space_needs_a_covering():
    text = HEAD + ("points: [x, y]\ntopology:\n  min_nbhd:\n"
                 "    x: [x]\n    y: [x, y]\n")
    inst = parse_instance(text)
    with pytest.raises(ValidationError, match="no covering"):
        inst.covering(1)


def test_open_set_topology(gallery):
    text = HEAD + "points: [x, y]\ntopology:\n  open_sets: [[x]]\n"
    assert parse_instance(text).space.min_nbhd == gallery("sierpinski").space.min_nbhd


def test_functions_are_checked():
    assert "unknown point z" in str(parse_error(
        HEAD + "points: [a]\nfunctions:\n  g:\n    values: {a: 1, z: 2}\n"))
    assert "undefined" in str(parse_error(
        HEAD + "points: [a, b]\nfunctions:\n  g:\n    values: {a: 1}\n"))


def test_symbolic_family_only_on_sequences():
    err = parse_error(HEAD + "points: [a]\ncovering:\n  default:\n"
                      "    - symbolic: all-singletons\n")
    assert "sequence" in str(err)


def test_sequence_instance_sets_and_tails(gallery):
    w = gallery("omega8")
    assert w.space.cutoff == 8
    assert w.covering(0).families[1].members == (w.space.universe,)
    assert w.covering(3).families[1].members == (PointSet(frozenset({INF}), frozenset({0})),)
    assert w.function("decay").tail_value == 0.0
    # the small tail witness stops working past the cutoff
    with pytest.raises(ValidationError, match="diameter"):
        w.covering(9)


def test_unknown_function_lists_known_ones(gallery):
    with pytest.raises(ValidationError, match="known: one, zero"):
        gallery("k1").function("two")


def test_load_from_file(tmp_path):
    path = tmp_path / "x.yaml"
    path.write_text(HEAD + "points: [a]\nfunctions:\n  g:\n    values: {a: 2}\n")
    assert load_instance(path).function("g").at("a") == 2.0
    with pytest.raises(ValidationError):
        load_instance(tmp_path / "missing.yaml")


def test_random_instances_are_valid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        inst = random_discrete_instance(rng)
        assert 2 <= len(inst.space.points) <= 6
        cov = inst.covering(4)
        members = [m for fam in cov.families for m in fam.members]
        assert all(len(m.finite) == 1 for m in members)
        assert len(members) == len(inst.space.points)


def test_sequence_norm_is_unsupported(gallery):
    from lurnorm.norm_engine import norm
    w = gallery("omega8")
    with pytest.raises(UnsupportedKind):
        norm(w.function("bump3"), w.space, w.coverings(range(1, 5)))
