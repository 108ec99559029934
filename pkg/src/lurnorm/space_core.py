"""Compact spaces as exact closure spaces carrying a metric.

Two kinds are supported:

* ``finite``: a finite topological space given by the minimal open
  neighbourhood of each point (equivalently, a preorder).
* ``sequence``: the convergent sequence omega+1.  Points ``0 .. C-1`` are
  explicit, every ``n >= C`` lives in an atomic *tail block*, and ``inf`` is
  the limit point.  The tail may be split into residue classes modulo a fixed
  ``period`` so that sets such as the even numbers stay representable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import MetricError, TopologyError, ValidationError

FINITE = "finite"
SEQUENCE = "sequence"
INF = "inf"
TAIL = "tail"
METRIC_RULES = ("dyadic", "harmonic")


@dataclass(frozen=True)
class PointSet:
    """A subset of a space: explicit points plus (possibly) tail residues.

    ``tail`` holds residues ``r`` standing for ``{n >= C : n % period == r}``.
    On finite spaces it is always empty.
    """

    finite: frozenset = frozenset()
    tail: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "finite", frozenset(str(p) for p in self.finite))
        object.__setattr__(self, "tail", frozenset(int(r) for r in self.tail))

    @classmethod
    def of(cls, *points, tail: Iterable[int] = ()) -> "PointSet":
        return cls(frozenset(points), frozenset(tail))

    @property
    def tail_flag(self) -> bool:
        return bool(self.tail)

    @property
    def is_empty(self) -> bool:
        return not self.finite and not self.tail

    def __bool__(self) -> bool:
        return not self.is_empty

    def __or__(self, other: "PointSet") -> "PointSet":
        return PointSet(self.finite | other.finite, self.tail | other.tail)

    def __and__(self, other: "PointSet") -> "PointSet":
        return PointSet(self.finite & other.finite, self.tail & other.tail)

    def __sub__(self, other: "PointSet") -> "PointSet":
        return PointSet(self.finite - other.finite, self.tail - other.tail)

    def __le__(self, other: "PointSet") -> bool:
        return self.finite <= other.finite and self.tail <= other.tail

    def __ge__(self, other: "PointSet") -> bool:
        return other <= self

    def __contains__(self, point) -> bool:
        return str(point) in self.finite

    def meets(self, other: "PointSet") -> bool:
        return bool(self.finite & other.finite) or bool(self.tail & other.tail)


EMPTY = PointSet()


def union_all(sets: Iterable[PointSet]) -> PointSet:
    out = EMPTY
    for s in sets:
        out = out | s
    return out


@dataclass(frozen=True, eq=False)
class TopSpace:
    kind: str
    points: tuple
    min_nbhd: Mapping[str, frozenset] | None = None
    dist: np.ndarray | None = None
    cutoff: int = 0
    period: int = 1
    rule: str | None = None
    name: str = ""
    _index: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index.update({p: k for k, p in enumerate(self.points)})

    # -- basic sets -------------------------------------------------------

    @property
    def universe(self) -> PointSet:
        return PointSet(frozenset(self.points), self.all_residues)

    @property
    def all_residues(self) -> frozenset:
        if self.kind == SEQUENCE:
            return frozenset(range(self.period))
        return frozenset()

    @property
    def is_hausdorff(self) -> bool:
        """Finite spaces are Hausdorff iff discrete; omega+1 always is."""
        if self.kind == SEQUENCE:
            return True
        return all(len(self.min_nbhd[p]) == 1 for p in self.points)

    is_discrete = is_hausdorff

    def index(self, point) -> int:
        return self._index[str(point)]

    def __len__(self) -> int:
        return len(self.points)

    def complement(self, s: PointSet) -> PointSet:
        return self.universe - s

    def check_set(self, s: PointSet) -> None:
        bad = [p for p in s.finite if p not in self._index]
        if bad:
            raise ValidationError(f"unknown point {sorted(bad)[0]!r}", witness=bad)
        if s.tail and not s.tail <= self.all_residues:
            raise ValidationError(f"tail residues {sorted(s.tail)} outside this space")

    def tail_point(self, residue: int) -> int:
        """Smallest tail integer carrying the given residue."""
        n = self.cutoff
        while n % self.period != residue:
            n += 1
        return n

    # -- topology ---------------------------------------------------------

    def closure(self, s: PointSet) -> PointSet:
        if self.kind == SEQUENCE:
            return s | PointSet.of(INF) if s.tail else s
        key = ("cl", s)
        hit = self._cache.get(key)
        if hit is None:
            hit = PointSet(frozenset(p for p in self.points if self.min_nbhd[p] & s.finite))
            self._cache[key] = hit
        return hit

    def is_closed(self, s: PointSet) -> bool:
        return self.closure(s) == s

    def is_open(self, s: PointSet) -> bool:
        if self.kind == SEQUENCE:
            return INF not in s or s.tail == self.all_residues
        return all(self.min_nbhd[p] <= s.finite for p in s.finite)

    def open_hull(self, s: PointSet) -> PointSet:
        """Smallest open set containing ``s``."""
        if self.kind == SEQUENCE:
            return s | PointSet(tail=self.all_residues) if INF in s else s
        return PointSet(frozenset().union(*(self.min_nbhd[p] for p in s.finite)))

    def closed_sets(self) -> Iterator[PointSet]:
        """All closed subsets (finite kind only), in a deterministic order."""
        if self.kind != FINITE:
            raise ValidationError("closed-set enumeration needs a finite space")
        for r in range(len(self.points) + 1):
            for combo in itertools.combinations(self.points, r):
                s = PointSet(frozenset(combo))
                if self.is_closed(s):
                    yield s

    # -- metric -----------------------------------------------------------

    def _seq_value(self, point) -> float:
        if str(point) == INF:
            return 0.0
        n = int(point)
        return 2.0 ** -n if self.rule == "dyadic" else 1.0 / (n + 1)

    def distance(self, x, y) -> float:
        if self.kind == SEQUENCE:
            return abs(self._seq_value(x) - self._seq_value(y))
        return float(self.dist[self.index(x), self.index(y)])

    def diameter(self, s: PointSet) -> float:
        if s.is_empty:
            return 0.0
        if self.kind == SEQUENCE:
            highs = [self._seq_value(p) for p in s.finite]
            lows = list(highs)
            for r in s.tail:
                highs.append(self._seq_value(self.tail_point(r)))
                lows.append(0.0)
            return max(highs) - min(lows)
        idx = [self.index(p) for p in s.finite]
        return float(self.dist[np.ix_(idx, idx)].max())

    # -- text form --------------------------------------------------------

    def sorted_points(self, s: PointSet) -> list:
        return sorted(s.finite, key=self.index)

    def fmt(self, s: PointSet) -> str:
        parts = self.sorted_points(s)
        if s.tail:
            if self.period == 1:
                parts.insert(len(parts) - (INF in s.finite), TAIL)
            else:
                parts += [f"{TAIL}%{self.period}={r}" for r in sorted(s.tail)]
        return "{" + ",".join(parts) + "}"

    def parse(self, text) -> PointSet:
        """Inverse of :meth:`fmt`; also accepts a list of tokens."""
        if isinstance(text, str):
            body = text.strip()
            if body.startswith("{") and body.endswith("}"):
                body = body[1:-1]
            tokens = [t.strip() for t in body.split(",") if t.strip()]
        else:
            tokens = [str(t) for t in text]
        finite, tail = set(), set()
        for tok in tokens:
            if tok == TAIL:
                if self.kind != SEQUENCE:
                    raise ValidationError("tail token used on a finite space")
                tail |= self.all_residues
            elif tok.startswith(TAIL + "%"):
                mod, _, res = tok[len(TAIL) + 1:].partition("=")
                if (self.kind != SEQUENCE or not mod.isdigit() or not res.isdigit()
                        or int(mod) != self.period):
                    raise ValidationError(f"bad tail token {tok!r}")
                tail.add(int(res) % self.period)
            else:
                finite.add(tok)
        s = PointSet(frozenset(finite), frozenset(tail))
        self.check_set(s)
        return s


def build_finite_space(min_nbhd: Mapping, metric=None, *, name: str = "") -> TopSpace:
    """Validate a minimal-neighbourhood table and a metric matrix.

    ``metric`` is a square matrix ordered like ``min_nbhd``'s keys, or
    ``None`` for the 0/1 metric.
    """
    points = tuple(str(p) for p in min_nbhd)
    known = set(points)
    nbhd = {}
    for p, u in min_nbhd.items():
        u = frozenset(str(q) for q in u)
        stray = u - known
        if stray:
            raise TopologyError(f"unknown point {sorted(stray)[0]!r} in neighbourhood of {p}",
                                axiom="points", witness=(str(p), sorted(stray)[0]))
        nbhd[str(p)] = u
    for p in points:
        if p not in nbhd[p]:
            raise TopologyError(f"reflexivity: {p} not in its own minimal neighbourhood",
                                axiom="reflexivity", witness=(p,))
    for p in points:
        for q in nbhd[p]:
            if not nbhd[q] <= nbhd[p]:
                r = sorted(nbhd[q] - nbhd[p])[0]
                raise TopologyError(
                    f"transitivity: {q} in U({p}) but {r} in U({q}) \\ U({p})",
                    axiom="transitivity", witness=(p, q, r))

    n = len(points)
    if metric is None or (n <= 1 and len(metric) == 0):
        dist = np.ones((n, n)) - np.eye(n)
    else:
        dist = np.asarray(metric, dtype=float)
        if dist.shape != (n, n):
            raise MetricError(f"metric must be {n}x{n}, got {dist.shape}", axiom="shape")
    _check_metric(points, dist)
    return TopSpace(FINITE, points, nbhd, dist, name=name)


def finite_space_from_open_sets(points: Sequence, open_sets: Iterable, metric=None,
                                *, name: str = "") -> TopSpace:
    """Build a finite space from a list of open sets (empty set and whole space implied)."""
    points = [str(p) for p in points]
    universe = frozenset(points)
    opens = {frozenset(), universe} | {frozenset(str(p) for p in u) for u in open_sets}
    for u in opens:
        if not u <= universe:
            raise TopologyError(f"open set mentions unknown point {sorted(u - universe)[0]!r}",
                                axiom="points")
    for u, v in itertools.combinations(opens, 2):
        if u | v not in opens:
            raise TopologyError("open sets not closed under union", axiom="union",
                                witness=(sorted(u), sorted(v)))
        if u & v not in opens:
            raise TopologyError("open sets not closed under intersection",
                                axiom="intersection", witness=(sorted(u), sorted(v)))
    nbhd = {p: frozenset.intersection(*(u for u in opens if p in u)) for p in points}
    return build_finite_space(nbhd, metric, name=name)


def _check_metric(points, dist: np.ndarray, tol: float = 1e-12) -> None:
    n = len(points)
    for a in range(n):
        if dist[a, a] != 0:
            raise MetricError(f"metric identity ({points[a]},{points[a]})",
                              axiom="identity", witness=(points[a],))
        for b in range(a + 1, n):
            if dist[a, b] != dist[b, a]:
                raise MetricError(f"metric symmetry ({points[a]},{points[b]})",
                                  axiom="symmetry", witness=(points[a], points[b]))
            if not dist[a, b] > 0:
                raise MetricError(f"metric positivity ({points[a]},{points[b]})",
                                  axiom="positivity", witness=(points[a], points[b]))
    for a, b, c in itertools.permutations(range(n), 3):
        if dist[a, c] > dist[a, b] + dist[b, c] + tol:
            raise MetricError(f"metric triangle ({points[a]},{points[b]},{points[c]})",
                              axiom="triangle", witness=(points[a], points[b], points[c]))


def build_sequence_space(cutoff: int, metric_rule: str = "dyadic", *, period: int = 1,
                         name: str = "") -> TopSpace:
    """The space omega+1 with explicit points below ``cutoff``."""
    if not isinstance(cutoff, int) or cutoff < 1:
        raise ValidationError(f"cutoff must be a positive integer, got {cutoff!r}",
                              axiom="cutoff")
    if metric_rule not in METRIC_RULES:
        raise ValidationError(f"unknown metric rule {metric_rule!r}", axiom="metric rule")
    if period < 1:
        raise ValidationError("period must be >= 1", axiom="period")
    points = tuple(str(k) for k in range(cutoff)) + (INF,)
    return TopSpace(SEQUENCE, points, cutoff=cutoff, period=period, rule=metric_rule,
                    name=name)


def closure(space: TopSpace, s: PointSet) -> PointSet:
    return space.closure(s)


def d_diameter(space: TopSpace, s: PointSet) -> float:
    return space.diameter(s)


@dataclass(frozen=True, eq=False)
class RealFunction:
    """A continuous function.  On omega+1 it is constant on the tail and at ``inf``."""

    values: Mapping[str, float]
    tail_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", {str(k): float(v) for k, v in self.values.items()})
        if self.tail_value is not None:
            object.__setattr__(self, "tail_value", float(self.tail_value))

    @classmethod
    def from_array(cls, space: TopSpace, arr) -> "RealFunction":
        return cls(dict(zip(space.points, np.asarray(arr, dtype=float).tolist())))

    def as_array(self, space: TopSpace) -> np.ndarray:
        return np.array([self.at(p) for p in space.points])

    def at(self, point) -> float:
        point = str(point)
        if point == INF and self.tail_value is not None:
            return self.tail_value
        return self.values[point]

    def on(self, s: PointSet) -> list:
        vals = [self.at(p) for p in s.finite]
        if s.tail:
            vals.append(self.tail_value)
        return vals

    def max_on(self, s: PointSet) -> float:
        return max(self.on(s))

    def min_on(self, s: PointSet) -> float:
        return min(self.on(s))

    def sup_on(self, s: PointSet) -> float:
        return max((abs(v) for v in self.on(s)), default=0.0)

    def osc_on(self, s: PointSet) -> float:
        vals = self.on(s)
        return max(vals) - min(vals) if vals else 0.0

    def _combine(self, other, op) -> "RealFunction":
        if isinstance(other, RealFunction):
            vals = {k: op(v, other.values[k]) for k, v in self.values.items()}
            tail = None if self.tail_value is None else op(self.tail_value, other.tail_value)
        else:
            vals = {k: op(v, other) for k, v in self.values.items()}
            tail = None if self.tail_value is None else op(self.tail_value, other)
        return RealFunction(vals, tail)

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, scalar):
        return self._combine(float(scalar), lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __eq__(self, other):
        return (isinstance(other, RealFunction) and self.values == other.values
                and self.tail_value == other.tail_value)

    __hash__ = None


def check_function(space: TopSpace, f: RealFunction) -> None:
    """Reject functions that are undefined somewhere or not continuous."""
    if space.kind == SEQUENCE:
        if f.tail_value is None or not math.isfinite(f.tail_value):
            raise ValidationError("function on omega+1 needs a finite tail value",
                                  axiom="continuity")
        needed = [p for p in space.points if p != INF]
        if INF in f.values and f.values[INF] != f.tail_value:
            raise ValidationError("value at inf must equal the tail value", axiom="continuity",
                                  witness=(INF,))
    else:
        needed = list(space.points)
    missing = [p for p in needed if p not in f.values]
    if missing:
        raise ValidationError(f"function undefined at {missing[0]}", axiom="domain",
                              witness=(missing[0],))
    for p in needed:
        if not math.isfinite(f.values[p]):
            raise ValidationError(f"non-finite value at {p}", axiom="domain", witness=(p,))
    if space.kind == FINITE:
        for p in space.points:
            for q in space.min_nbhd[p]:
                if f.values[q] != f.values[p]:
                    raise ValidationError(
                        f"continuity: {q} in U({p}) but f({q}) != f({p})",
                        axiom="continuity", witness=(p, q))
