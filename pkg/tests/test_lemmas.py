import numpy as np
import pytest
from hypothesis import given, strategies as st

from lurnorm.errors import UnsupportedKind, ValidationError
from lurnorm.instance import GALLERY, random_discrete_instance
from lurnorm.lemmas import Tally, discrepancy_threshold, probe_sets, run_suites


@pytest.mark.parametrize("name", GALLERY)
def test_gallery_passes_every_suite(gallery, name):
    tally = run_suites(gallery(name))
    assert tally.ok, [c.line() for c in tally.checks.values() if not c.ok]


def test_random_instances_pass():
    rng = np.random.default_rng(2024)
    for _ in range(3):
        tally = run_suites(random_discrete_instance(rng), seed=1)
        assert tally.ok, tally.lines()


def test_sequence_suites_skip_what_needs_a_finite_space(gallery):
    tally = run_suites(gallery("omega8"), suites=("3", "7"))
    assert tally.checks["minimal_index.unique"].count > 0
    assert tally.checks["decomposition.finite"].skipped > 0


def test_unknown_suite_rejected(gallery):
    with pytest.raises(ValidationError, match="unknown suite"):
        run_suites(gallery("k1"), suites=("4",))


def test_tally_keeps_the_first_witness():
    t = Tally()
    t.record("x", True)
    t.record("x", False, "first")
    t.record("x", False, "second")
    assert not t.ok
    assert t.lines() == ["x=fail cases=3 witness=first"]


def test_guard_turns_errors_into_failures_or_skips():
    t = Tally()

    def unsupported():
        raise UnsupportedKind("no")

    def invalid():
        raise ValidationError("bad")

    t.guard("a", unsupported)
    t.guard("b", invalid, context="case 1")
    assert t.checks["a"].ok and t.checks["a"].skipped == 1
    assert t.lines()[1] == "b=fail cases=1 witness=case 1 bad"


def test_probe_sets_are_closed(gallery):
    s = gallery("sierpinski").space
    sets = probe_sets(s)
    assert all(s.is_closed(c) for c in sets)
    assert len(sets) == 2  # {y} and {x, y}


@given(st.floats(0, 3), st.floats(0, 1), st.floats(0.01, 1))
def test_leaf_threshold_is_sound_on_a_point(sup, osc, eps):
    d = discrepancy_threshold(sup, osc, eps)
    if osc >= eps:
        assert d == 0.0
    else:
        assert d > 0
        # on a single point the discrepancy is (x - y)^2 / 24, which is sharp
        assert d <= eps ** 2 / 24


def test_leaf_threshold_shrinks_with_oscillation():
    vals = [discrepancy_threshold(1.0, osc, 0.5) for osc in (0.0, 0.1, 0.3, 0.49)]
    assert vals == sorted(vals, reverse=True)
