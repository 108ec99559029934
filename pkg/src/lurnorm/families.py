"""Isolated families, their derived families, and the order on index sequences.

An index sequence is a strictly increasing tuple of naturals.  Sequences are
compared by the order that is lexicographic once every sequence is padded on
the right by an infinite run of ``+inf``; longer extensions therefore come
*before* their prefixes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConsistencyError, CoverageError, IsolationError, TruncationExhausted, \
    ValidationError
from .space_core import EMPTY, SEQUENCE, PointSet, TopSpace, union_all

ALL_SINGLETONS = "all-singletons-of-isolated-points"

BEFORE, EQUAL, AFTER = -1, 0, 1


@dataclass(frozen=True)
class IsolatedFamily:
    """Explicit members, optionally plus every singleton ``{n}`` of the tail block.

    The symbolic marker is only meaningful on omega+1, where tail points are
    isolated and cannot be named one by one.
    """

    members: tuple = ()
    symbolic_marker: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if self.symbolic_marker not in (None, ALL_SINGLETONS):
            raise ValidationError(f"unknown family marker {self.symbolic_marker!r}")

    @property
    def tail_singletons(self) -> bool:
        return self.symbolic_marker == ALL_SINGLETONS

    def union(self, space: TopSpace) -> PointSet:
        u = union_all(self.members)
        if self.tail_singletons:
            u = u | PointSet(tail=space.all_residues)
        return u

    def is_empty(self) -> bool:
        return not self.members and not self.tail_singletons

    def __len__(self) -> int:
        if self.tail_singletons:
            raise TypeError("symbolic family has infinitely many members")
        return len(self.members)


def singletons_family(space: TopSpace, exclude: Iterable = ()) -> IsolatedFamily:
    """Every singleton of an isolated point of omega+1, minus the excluded ones.

    Explicit singletons are materialized; the tail ones stay symbolic.
    """
    if space.kind != SEQUENCE:
        raise ValidationError("the all-singletons marker needs omega+1")
    exclude = {str(p) for p in exclude}
    members = tuple(PointSet.of(p) for p in space.points if p != "inf" and p not in exclude)
    return IsolatedFamily(members, ALL_SINGLETONS)


def _others_union(space, family, k=None) -> PointSet:
    rest = [m for j, m in enumerate(family.members) if j != k]
    u = union_all(rest)
    if family.tail_singletons:
        u = u | PointSet(tail=space.all_residues)
    return u


def check_isolated(space: TopSpace, family: IsolatedFamily):
    """Return ``(True, None)`` or ``(False, (member, point))`` with ``point`` in
    ``member`` and in the closure of the union of the other members."""
    for k, member in enumerate(family.members):
        bad = member & space.closure(_others_union(space, family, k))
        if bad:
            if bad.finite:
                point = space.sorted_points(bad)[0]
            else:
                point = str(space.tail_point(min(bad.tail)))
            return False, (member, point)
    if family.tail_singletons:
        # {n} meets the closure of the rest only if an explicit member holds n.
        clash = union_all(family.members).tail
        if clash:
            n = str(space.tail_point(min(clash)))
            return False, (f"{{{n}}}", n)
    return True, None


def regularize(space: TopSpace, family: IsolatedFamily) -> IsolatedFamily:
    ok, witness = check_isolated(space, family)
    if not ok:
        raise IsolationError(f"family is not isolated: {witness[1]} in member "
                             f"{_label(space, witness[0])} and in closure of the others",
                             axiom="isolation", witness=witness)
    members = tuple(space.closure(m) - space.closure(_others_union(space, family, k))
                    for k, m in enumerate(family.members))
    return IsolatedFamily(members, family.symbolic_marker)


def _label(space, member):
    return member if isinstance(member, str) else space.fmt(member)


def _j_by_neighbourhoods(space: TopSpace, family: IsolatedFamily) -> PointSet:
    if space.kind == SEQUENCE:
        # only inf is non-isolated; its neighbourhoods are the tail sets
        near = sum(1 for m in family.members if m.tail or "inf" in m)
        if family.tail_singletons:
            near = math.inf
        return PointSet.of("inf") if near >= 2 else EMPTY
    pts = []
    for t in space.points:
        hits = sum(1 for m in family.members if space.min_nbhd[t] & m.finite)
        if hits >= 2:
            pts.append(t)
    return PointSet(frozenset(pts))


def boundary_J(space: TopSpace, family: IsolatedFamily) -> PointSet:
    """The points every neighbourhood of which meets two members, computed two ways."""
    i_set = family.union(space)
    by_closure = space.closure(i_set) - i_set
    by_nbhd = _j_by_neighbourhoods(space, family)
    if by_closure != by_nbhd:
        raise ConsistencyError(
            f"J disagrees: cl(I)\\I = {space.fmt(by_closure)} but neighbourhood rule "
            f"gives {space.fmt(by_nbhd)}")
    return by_closure


@dataclass(frozen=True)
class DerivedEntry:
    family: IsolatedFamily
    I: PointSet
    J: PointSet

    @property
    def closure_I(self) -> PointSet:
        return self.I | self.J


@dataclass(eq=False)
class LevelCovering:
    space: TopSpace
    level: int
    families: tuple
    witnesses: tuple
    _memo: dict = field(default_factory=dict, repr=False)

    @property
    def n_families(self) -> int:
        return len(self.families)

    def sigma(self, n: int | None = None) -> list:
        """Strictly increasing sequences over ``range(n)`` sorted by ``prec``."""
        return sigma_sorted(self.n_families if n is None else n)

    def derive(self, seq, *, allow_non_sigma: bool = False) -> DerivedEntry:
        return derive(self, seq, allow_non_sigma=allow_non_sigma)


def build_covering(space: TopSpace, level: int, families: Sequence[IsolatedFamily],
                   witnesses: Sequence | None = None) -> LevelCovering:
    """Regularize each family and check the cover and diameter witnesses.

    ``witnesses[i][k]`` is a set of diameter at most ``2**-level`` whose closure
    contains member ``k`` of family ``i``; ``None`` means the member itself.
    """
    regular, wits = [], []
    for i, fam in enumerate(families):
        ok, witness = check_isolated(space, fam)
        if not ok:
            raise IsolationError(f"family {i} is not isolated: {witness[1]} in "
                                 f"{_label(space, witness[0])}", axiom="isolation",
                                 witness=witness)
        reg = regularize(space, fam)
        given = list(witnesses[i]) if witnesses is not None and i < len(witnesses) and \
            witnesses[i] is not None else [None] * len(fam.members)
        if len(given) != len(fam.members):
            raise ValidationError(f"family {i}: {len(given)} witnesses for "
                                  f"{len(fam.members)} members")
        fam_wits = []
        for k, (orig, new) in enumerate(zip(fam.members, reg.members)):
            w = orig if given[k] is None else given[k]
            diam = space.diameter(w)
            if diam > 2.0 ** -level:
                raise CoverageError(
                    f"witness {space.fmt(w)} for family {i} member {k} has diameter "
                    f"{diam!r} > 2^-{level}", axiom="witness diameter", witness=(i, k))
            if not new <= space.closure(w):
                raise CoverageError(
                    f"member {space.fmt(new)} of family {i} not inside closure of its "
                    f"witness {space.fmt(w)}", axiom="witness closure", witness=(i, k))
            fam_wits.append(w)
        regular.append(reg)
        wits.append(tuple(fam_wits))
    covered = union_all(f.union(space) for f in regular)
    missing = space.universe - covered
    if missing:
        if missing.finite:
            point = space.sorted_points(missing)[0]
        else:
            point = str(space.tail_point(min(missing.tail)))
        raise CoverageError(f"uncovered: {point}", axiom="cover", witness=(point,))
    return LevelCovering(space, level, tuple(regular), tuple(wits))


def derive(covering: LevelCovering, seq, *, allow_non_sigma: bool = False) -> DerivedEntry:
    """Derived family, its union ``I`` and ``J = cl(I) \\ I``, memoized per covering."""
    seq = tuple(int(i) for i in seq)
    if not seq:
        raise ValidationError("index sequence must be nonempty")
    if not allow_non_sigma:
        check_sigma(seq)
    hit = covering._memo.get(seq)
    if hit is not None:
        return hit
    space = covering.space
    last = seq[-1]
    base = covering.families[last] if last < covering.n_families else IsolatedFamily()
    if len(seq) == 1:
        fam = base
    else:
        parent = derive(covering, seq[:-1], allow_non_sigma=allow_non_sigma)
        if parent.J.tail:
            raise ConsistencyError("J acquired tail points; closure bug")
        members = tuple(m & parent.J for m in base.members)
        fam = IsolatedFamily(tuple(m for m in members if m))
    i_set = fam.union(space)
    entry = DerivedEntry(fam, i_set, space.closure(i_set) - i_set)
    covering._memo[seq] = entry
    return entry


def check_sigma(seq: Sequence[int]) -> None:
    if not seq or any(i < 0 for i in seq) or any(a >= b for a, b in zip(seq, seq[1:])):
        raise ValidationError(f"{tuple(seq)} is not a strictly increasing sequence of naturals")


def prec(i_seq: Sequence[int], j_seq: Sequence[int]) -> int:
    """Compare two index sequences; returns BEFORE, EQUAL or AFTER."""
    check_sigma(i_seq)
    check_sigma(j_seq)
    i_seq, j_seq = tuple(i_seq), tuple(j_seq)
    if i_seq == j_seq:
        return EQUAL
    for a, b in zip(i_seq, j_seq):
        if a != b:
            return BEFORE if a < b else AFTER
    # one is a proper extension of the other; the longer one comes first
    return BEFORE if len(i_seq) > len(j_seq) else AFTER


def padded_key(seq: Sequence[int]) -> tuple:
    return tuple(seq) + (math.inf,)


def sigma_sorted(n: int) -> list:
    seqs = [c for r in range(1, n + 1) for c in itertools.combinations(range(n), r)]
    return sorted(seqs, key=padded_key)


def union_closures_before(covering: LevelCovering, j_seq: Sequence[int]):
    """Union of ``cl I(i)`` over ``i`` preceding ``j_seq``.

    Returns ``(union, A1, A2)``.  The union is computed as ``A1 | J(j)``; the
    alternative ``A1 | A2`` and a brute-force sweep over the truncated index
    set must agree with it.
    """
    j_seq = tuple(j_seq)
    check_sigma(j_seq)
    key = ("before", j_seq)
    if key in covering._memo:
        return covering._memo[key]
    n = max(covering.n_families, j_seq[-1] + 1)
    a1 = EMPTY
    prev = -1
    for r, jr in enumerate(j_seq):
        for i in range(prev + 1, jr):
            a1 = a1 | derive(covering, j_seq[:r] + (i,)).closure_I
        prev = jr
    a2 = EMPTY
    rest = range(j_seq[-1] + 1, n)
    for k in range(1, len(rest) + 1):
        for ext in itertools.combinations(rest, k):
            a2 = a2 | derive(covering, j_seq + ext).closure_I
    union = a1 | derive(covering, j_seq).J
    brute = union_all(derive(covering, s).closure_I for s in sigma_sorted(n)
                      if prec(s, j_seq) == BEFORE)
    if not (union == a1 | a2 == brute):
        space = covering.space
        raise ConsistencyError(
            f"preceding-closure identity failed at {j_seq}: A1|J={space.fmt(union)}, "
            f"A1|A2={space.fmt(a1 | a2)}, brute force={space.fmt(brute)}")
    covering._memo[key] = (union, a1, a2)
    return union, a1, a2


def _family_minus(space, fam: IsolatedFamily, chosen) -> PointSet:
    chosen = set(chosen)
    rest = [m for m in fam.members if m not in chosen]
    u = union_all(rest)
    if fam.tail_singletons:
        u = u | PointSet(tail=space.all_residues)
    return u


def open_G(covering: LevelCovering, j_seq: Sequence[int], chosen: Iterable[PointSet]) -> PointSet:
    """``K`` minus the preceding closures and the closure of the unchosen members."""
    space = covering.space
    chosen = list(chosen)
    entry = derive(covering, j_seq)
    if not chosen or any(m not in entry.family.members for m in chosen):
        raise ValidationError(f"chosen members must form a nonempty subset of the family "
                              f"at {tuple(j_seq)}")
    before, _, _ = union_closures_before(covering, j_seq)
    g = space.universe - (before | space.closure(_family_minus(space, entry.family, chosen)))
    if not space.is_open(g):
        raise ConsistencyError(f"G({tuple(j_seq)}, ...) = {space.fmt(g)} is not open")
    return g


def minimal_index(covering: LevelCovering, h: PointSet):
    """First index sequence whose closed union meets ``h``, with the members meeting ``h``."""
    space = covering.space
    if h.is_empty or not space.is_closed(h):
        raise ValidationError(f"H must be nonempty and closed, got {space.fmt(h)}")
    for seq in covering.sigma():
        entry = derive(covering, seq)
        if h.meets(entry.closure_I):
            break
    else:
        raise TruncationExhausted(f"no index sequence meets {space.fmt(h)}")
    if entry.family.tail_singletons and h.tail:
        raise ConsistencyError(f"H={space.fmt(h)} meets infinitely many members at {seq}")
    chosen = tuple(m for m in entry.family.members if m.meets(h))
    if not (h & entry.closure_I) <= entry.I:
        raise ConsistencyError(f"H meets J{seq}")
    if not h <= open_G(covering, seq, chosen):
        raise ConsistencyError(f"H not inside G{seq}")
    return seq, chosen
