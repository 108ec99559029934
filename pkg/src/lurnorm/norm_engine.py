"""The renorming of C(K) on finite discrete spaces.

The norm is assembled from a mutually recursive system of tables:

* ``Omega(f, L, l)`` for closed ``L`` and level ``l``;
* ``Psi(f, L, l, M, N)`` for separated pairs ``(M, N)`` of finite subfamilies;
* ``Theta`` / ``Theta_p``, obtained from ``Psi`` and the elementary gap
  functional ``phi``.

``Omega`` and ``Psi`` feed each other, so the system is solved by synchronous
(Jacobi) iteration of the map ``(Omega, Psi) -> (Omega~, Psi~)`` which is a
2/3-contraction in the sup-metric on squared values.  Every sum that has to be
cut off is accompanied by a majorant of the discarded part, so the reported
norm comes with a rigorous error bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonConvergence, SeparationError, UnsupportedKind, ValidationError
from .families import LevelCovering, derive, sigma_sorted
from .space_core import FINITE, PointSet, RealFunction, TopSpace, union_all

CONTRACTION = 2.0 / 3.0


def weight_c(seq: Sequence[int]) -> float:
    """Default weight ``2 ** -(2**i0 + ... + 2**ik)``; these sum to 1 over all sequences."""
    return math.ldexp(1.0, -sum(2 ** int(i) for i in seq))


@dataclass
class NormParams:
    l_max: int = 4
    i_max: int = 4
    mn_max: int = 2
    p_max: int = 8
    fp_tol: float = 1e-10
    strict_tol: float = 1e-9
    weights: Callable | Mapping | None = None
    max_iter: int = 10_000

    def weight(self, seq) -> float:
        seq = tuple(seq)
        if self.weights is None:
            return weight_c(seq)
        if callable(self.weights):
            return float(self.weights(seq))
        return float(self.weights[seq])

    def validate(self) -> "NormParams":
        for name in ("l_max", "i_max", "mn_max", "p_max", "max_iter"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.fp_tol > 0:
            raise ValidationError("fp_tol must be positive")
        seqs = sigma_sorted(self.i_max)
        try:
            ws = [self.weight(s) for s in seqs]
        except KeyError as exc:
            raise ValidationError(f"no weight given for index sequence {exc.args[0]}") from None
        if any(not w > 0 for w in ws):
            raise ValidationError("weights must be positive")
        if sum(ws) > 1 + 1e-12:
            raise ValidationError(f"weights sum to {sum(ws)!r} > 1")
        return self


@dataclass(frozen=True)
class PairFamily:
    M: tuple
    N: tuple
    m: int
    n: int
    i: tuple
    j: tuple


@dataclass(frozen=True)
class SeparatorPair:
    X: PointSet
    Y: PointSet


def phi(space: TopSpace, f: RealFunction, L: PointSet, Ms, Ns) -> float:
    for member in list(Ms) + list(Ns):
        if not member.meets(L):
            raise ValidationError(f"member {space.fmt(member)} misses L={space.fmt(L)}")
    top = sum(f.max_on(L & space.closure(N)) for N in Ns) / len(Ns)
    bottom = sum(f.min_on(L & space.closure(M)) for M in Ms) / len(Ms)
    return 0.5 * max(top - bottom, 0.0)


def _candidates(covering: LevelCovering, seq, L: PointSet) -> list:
    fam = derive(covering, seq).family
    if fam.tail_singletons and L.tail:
        raise UnsupportedKind("pair enumeration over infinitely many members")
    return [M for M in fam.members if M.meets(L)]


def enumerate_B(covering: LevelCovering, L: PointSet, m: int, n: int, i_seq, j_seq) -> list:
    """All pairs of an ``m``-subfamily and an ``n``-subfamily with disjoint closed unions."""
    i_seq, j_seq = tuple(i_seq), tuple(j_seq)
    return _pairs(covering.space, _candidates(covering, i_seq, L), _candidates(covering, j_seq, L),
                  m, n, i_seq, j_seq)


def _pairs(space: TopSpace, cand_m, cand_n, m, n, i_seq, j_seq) -> list:
    if m > len(cand_m) or n > len(cand_n):
        return []
    n_side = [(c, space.closure(union_all(c))) for c in itertools.combinations(cand_n, n)]
    out = []
    for mc in itertools.combinations(cand_m, m):
        cl_m = space.closure(union_all(mc))
        for nc, cl_n in n_side:
            if not cl_m.meets(cl_n):
                out.append(PairFamily(mc, nc, m, n, i_seq, j_seq))
    return out


def separators(space: TopSpace, Ms, Ns) -> SeparatorPair:
    """The fixed closed pair ``(X, Y)`` attached to a separated ``(M, N)``.

    ``X`` is the complement of the smallest open set around the ``N`` side and
    ``Y`` that of the ``M`` side; swapping the arguments swaps the result.
    """
    Ms, Ns = tuple(Ms), tuple(Ns)
    key = ("sep", Ms, Ns)
    hit = space._cache.get(key)
    if hit is not None:
        return hit
    um, un = union_all(Ms), union_all(Ns)
    if space.closure(um).meets(space.closure(un)):
        raise ValidationError("separators need disjoint closures")
    v, w = space.open_hull(un), space.open_hull(um)
    if v.meets(w):
        raise SeparationError(f"separation failure: open hulls {space.fmt(w)} and "
                              f"{space.fmt(v)} meet")
    pair = SeparatorPair(space.complement(v), space.complement(w))
    space._cache[key] = pair
    return pair


class NormModel:
    """Everything about the fixed-point system that does not depend on ``f``.

    Nodes are ``(level, L)`` entries of the Omega table reachable from the
    roots: ``K`` at each level unless ``include_universe`` is false, plus any
    requested extra sets.  Norms need the ``K`` roots.
    """

    def __init__(self, space: TopSpace, coverings: Mapping[int, LevelCovering],
                 params: NormParams | None = None, *, levels: Sequence[int] | None = None,
                 roots: Mapping[int, Sequence[PointSet]] | None = None,
                 include_universe: bool = True):
        if space.kind != FINITE or not space.is_discrete:
            raise UnsupportedKind("unsupported kind: the norm engine needs a finite "
                                  "discrete space")
        self.space = space
        self.params = (params or NormParams()).validate()
        self.levels = tuple(levels if levels is not None else range(1, self.params.l_max + 1))
        missing = [l for l in self.levels if l not in coverings]
        if missing:
            raise ValidationError(f"no covering for level {missing[0]}")
        self.coverings = {l: coverings[l] for l in self.levels}
        roots = roots or {}

        self.nodes: list = []          # (level, L)
        self.node_index: dict = {}
        self.types: list = []          # (node, i, j, m, n, weight)
        self.type_index: dict = {}
        self.pairs: list = []          # PairFamily
        self.pair_children: list = []  # (x node, y node)
        self.type_start: list = []
        self.node_types: list = []     # (first type, end type) per node
        self.tail_coef: dict = {}
        for l in self.levels:
            base = [space.universe] if include_universe else []
            self._compile_level(l, base + list(roots.get(l, ())))
        self._vectorize()

    # -- compilation ------------------------------------------------------

    def _add_node(self, level, L, queue):
        key = (level, L)
        if key not in self.node_index:
            self.node_index[key] = len(self.nodes)
            self.nodes.append(key)
            queue.append(key)
        return self.node_index[key]

    def _retained(self, covering):
        p = self.params
        seqs = sigma_sorted(min(p.i_max, covering.n_families))
        return [(s, p.weight(s)) for s in seqs]

    def _compile_level(self, level, roots):
        p, space = self.params, self.space
        covering = self.coverings[level]
        retained = [(s, c) for s, c in self._retained(covering)
                    if not derive(covering, s).family.is_empty()]
        queue: list = []
        for r in roots:
            self._add_node(level, r, queue)
        head = 0
        while head < len(queue):
            _, L = queue[head]
            head += 1
            node = self.node_index[(level, L)]
            first = len(self.types)
            cands = {s: _candidates(covering, s, L) if L else [] for s, _ in retained}
            for (i_seq, ci), (j_seq, cj) in itertools.product(retained, repeat=2):
                for m, n in itertools.product(range(1, p.mn_max + 1), repeat=2):
                    pairs = _pairs(space, cands[i_seq], cands[j_seq], m, n, i_seq, j_seq)
                    if not pairs:
                        continue
                    t = len(self.types)
                    self.types.append((node, i_seq, j_seq, m, n, ci * cj * 2.0 ** (-m - n)))
                    self.type_index[(node, i_seq, j_seq, m, n)] = t
                    self.type_start.append(len(self.pairs))
                    for pf in pairs:
                        sep = separators(space, pf.M, pf.N)
                        x = self._add_node(level, L & sep.X, queue)
                        y = self._add_node(level, L & sep.Y, queue)
                        self.pairs.append(pf)
                        self.pair_children.append((x, y))
            while len(self.node_types) <= node:
                self.node_types.append(None)
            self.node_types[node] = (first, len(self.types))
        self.tail_coef[level] = self._tail_coefficient(covering, retained)

    def _tail_coefficient(self, covering, retained) -> float:
        """Majorant ``c`` with ``6 * |discarded part of 6 Omega^2| <= c * ||f||^2``.

        Pair sets only shrink as ``L`` shrinks, so counting at ``K`` bounds
        every node, reachable or not.
        """
        p, K = self.params, self.space.universe
        coef = 0.0
        if covering.n_families > p.i_max:
            total = sum(p.weight(s) for s in sigma_sorted(p.i_max))
            coef += 1.0 - total ** 2
        sizes = {s: len(_candidates(covering, s, K)) for s, _ in retained}
        for (i_seq, ci), (j_seq, cj) in itertools.product(retained, repeat=2):
            for m in range(1, sizes[i_seq] + 1):
                for n in range(1, sizes[j_seq] + 1):
                    w = ci * cj * 2.0 ** (-m - n)
                    if m > p.mn_max or n > p.mn_max:
                        coef += w
                    elif enumerate_B(covering, K, m, n, i_seq, j_seq):
                        coef += w * 2.0 ** -p.p_max
        return coef

    def _vectorize(self):
        space = self.space
        npts = len(space.points)
        self.node_mask = np.zeros((len(self.nodes), npts), dtype=bool)
        for k, (_, L) in enumerate(self.nodes):
            for q in L.finite:
                self.node_mask[k, space.index(q)] = True
        cells: dict = {}

        def cell(s):
            if s not in cells:
                cells[s] = len(cells)
            return cells[s]

        rows_n, rows_m = [], []
        for t, start in enumerate(self.type_start):
            node = self.types[t][0]
            L = self.nodes[node][1]
            end = self.type_start[t + 1] if t + 1 < len(self.type_start) else len(self.pairs)
            for pf in self.pairs[start:end]:
                rows_n.append([cell(L & space.closure(N)) for N in pf.N])
                rows_m.append([cell(L & space.closure(M)) for M in pf.M])
        self.cell_mask = np.zeros((len(cells), npts), dtype=bool)
        for s, c in cells.items():
            for q in s.finite:
                self.cell_mask[c, space.index(q)] = True
        npairs = len(self.pairs)
        self.avg_n = np.zeros((npairs, len(cells)))
        self.avg_m = np.zeros((npairs, len(cells)))
        for r, (rn, rm) in enumerate(zip(rows_n, rows_m)):
            for c in rn:
                self.avg_n[r, c] += 1.0 / len(rn)
            for c in rm:
                self.avg_m[r, c] += 1.0 / len(rm)
        self.px = np.array([x for x, _ in self.pair_children], dtype=int)
        self.py = np.array([y for _, y in self.pair_children], dtype=int)
        self.t_start = np.array(self.type_start, dtype=int)
        counts = np.diff(np.append(self.t_start, npairs))
        self.pair_node = np.repeat(np.array([t[0] for t in self.types], dtype=int), counts)
        self.t_weight = np.array([t[5] for t in self.types])
        self.n_tfirst = np.array([a for a, _ in self.node_types], dtype=int)
        self.n_tend = np.array([b for _, b in self.node_types], dtype=int)
        p = np.arange(1, self.params.p_max + 1, dtype=float)
        self.inv_p = 1.0 / p
        self.w_p = 2.0 ** -p
        self.root_nodes = {l: self.node_index[(l, space.universe)] for l in self.levels
                           if (l, space.universe) in self.node_index}

    # -- evaluation -------------------------------------------------------

    def _phi2(self, F: np.ndarray) -> np.ndarray:
        if not self.pairs:
            return np.zeros((F.shape[0], 0))
        big = np.where(self.cell_mask[None], F[:, None, :], -np.inf).max(axis=2)
        small = np.where(self.cell_mask[None], F[:, None, :], np.inf).min(axis=2)
        ph = 0.5 * np.maximum(big @ self.avg_n.T - small @ self.avg_m.T, 0.0)
        return ph ** 2

    def _node_stats(self, F: np.ndarray):
        masked_hi = np.where(self.node_mask[None], F[:, None, :], -np.inf)
        masked_lo = np.where(self.node_mask[None], F[:, None, :], np.inf)
        hi, lo = masked_hi.max(axis=2), masked_lo.min(axis=2)
        empty = ~self.node_mask.any(axis=1)
        sup = np.maximum(np.abs(hi), np.abs(lo))
        osc = hi - lo
        sup[:, empty] = 0.0
        osc[:, empty] = 0.0
        return sup, osc

    def theta_sq(self, phi2: np.ndarray, ps2: np.ndarray, per_p: bool = False):
        """Squared Theta per type (and per ``p`` if asked) from Phi^2 and Psi^2."""
        if not self.types:
            shape = (phi2.shape[0], self.params.p_max, 0)
            return np.zeros(shape) if per_p else np.zeros(shape[::2])
        t = 0.5 * (phi2[:, None, :] + ps2[:, None, :] * self.inv_p[None, :, None])
        thp2 = np.maximum.reduceat(t, self.t_start, axis=2)
        if per_p:
            return thp2
        return np.einsum("bpt,p->bt", thp2, self.w_p)

    def step(self, om2, ps2, phi2, sup2, osc2):
        """One application of the contraction."""
        new_ps2 = (om2[:, self.px] + om2[:, self.py]) / 3.0
        th2 = self.theta_sq(phi2, ps2) * self.t_weight
        cs = np.concatenate([np.zeros((th2.shape[0], 1)), np.cumsum(th2, axis=1)], axis=1)
        s = cs[:, self.n_tend] - cs[:, self.n_tfirst]
        new_om2 = (sup2 + osc2 + s) / 6.0
        return new_om2, new_ps2

    def solve_batch(self, F, init: str = "zero") -> "BatchSolution":
        F = np.atleast_2d(np.asarray(F, dtype=float))
        sup, osc = self._node_stats(F)
        sup2, osc2 = sup ** 2, osc ** 2
        phi2 = self._phi2(F)
        if init == "zero":
            om2 = np.zeros_like(sup2)
            ps2 = np.zeros((F.shape[0], len(self.pairs)))
        elif init == "sup":
            om2 = sup2.copy()
            ps2 = sup2[:, self.pair_node]
        else:
            raise ValidationError(f"unknown initialization {init!r}")
        history = []
        tol = self.params.fp_tol
        for _ in range(self.params.max_iter):
            new_om2, new_ps2 = self.step(om2, ps2, phi2, sup2, osc2)
            res = np.abs(new_om2 - om2).max(axis=1)
            if ps2.shape[1]:
                res = np.maximum(res, np.abs(new_ps2 - ps2).max(axis=1))
            om2, ps2 = new_om2, new_ps2
            history.append(res)
            if np.all(res <= tol):
                break
        else:
            raise NonConvergence(f"no convergence after {self.params.max_iter} iterations; "
                                 f"residual {float(history[-1].max())!r}")
        return BatchSolution(self, F, om2, ps2, phi2, sup, np.array(history))

    def norm_batch(self, F):
        """Truncated norms and certified error bounds for each row of ``F``."""
        return self.solve_batch(F).norms()


@dataclass
class BatchSolution:
    model: NormModel
    F: np.ndarray
    omega2: np.ndarray
    psi2: np.ndarray
    phi2: np.ndarray
    sup: np.ndarray
    history: np.ndarray

    @property
    def iterations(self) -> int:
        return self.history.shape[0]

    @property
    def residual(self) -> np.ndarray:
        return self.history[-1]

    def truncation_bound(self) -> np.ndarray:
        """Bound on (full norm)^2 - (truncated fixed-point norm)^2, which is >= 0."""
        m = self.model
        fmax2 = np.abs(self.F).max(axis=1) ** 2 if self.F.shape[1] else np.zeros(len(self.F))
        total = np.zeros(len(self.F))
        for l in m.levels:
            delta = m.tail_coef[l] * fmax2 / 6.0
            total += 2.0 ** (-l - 1) * delta / (1.0 - CONTRACTION)
        total += 2.0 ** (-max(m.levels) - 1) * fmax2
        return total

    def norms(self):
        m = self.model
        if len(m.root_nodes) != len(m.levels):
            raise ValidationError("model was compiled without the whole space as a root")
        sq = sum(2.0 ** (-l - 1) * self.omega2[:, m.root_nodes[l]] for l in m.levels)
        value = np.sqrt(sq)
        fp = self.residual * CONTRACTION / (1.0 - CONTRACTION) * 0.5
        upper = np.sqrt(sq + fp + self.truncation_bound()) - value
        lower = value - np.sqrt(np.maximum(sq - fp, 0.0))
        return value, np.maximum(upper, lower)

    def session(self, k: int = 0, f: RealFunction | None = None) -> "SolveSession":
        m = self.model
        if f is None:
            f = RealFunction.from_array(m.space, self.F[k])
        value, bound = self.norms()
        return SolveSession(
            f=f, params=m.params, model=m,
            omega2=self.omega2[k].copy(), psi2=self.psi2[k].copy(), phi2=self.phi2[k].copy(),
            residual=float(self.residual[k]), iterations=self.iterations,
            history=self.history[:, k].copy(),
            truncation_bound=float(self.truncation_bound()[k]),
            value=float(value[k]), error_bound=float(bound[k]))


@dataclass
class SolveSession:
    f: RealFunction
    params: NormParams
    model: NormModel
    omega2: np.ndarray
    psi2: np.ndarray
    phi2: np.ndarray
    residual: float
    iterations: int
    history: np.ndarray
    truncation_bound: float
    value: float
    error_bound: float
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def space(self):
        return self.model.space

    @property
    def residual_ratios(self) -> np.ndarray:
        h = self.history
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(h[:-1] > 0, h[1:] / h[:-1], 0.0)

    def omega_table(self) -> dict:
        return {key: math.sqrt(max(self.omega2[k], 0.0))
                for key, k in self.model.node_index.items()}

    def omega(self, L: PointSet, level: int) -> float:
        if L.is_empty:
            return 0.0
        k = self.model.node_index.get((level, L))
        if k is not None:
            return math.sqrt(self.omega2[k])
        hit = self._extra.get((level, L))
        if hit is None:
            if level not in self.model.coverings:
                raise ValidationError(f"no covering for level {level}")
            extra = NormModel(self.space, self.model.coverings, self.params, levels=[level],
                              roots={level: [L]})
            sol = extra.solve_batch(self.f.as_array(self.space)[None])
            hit = math.sqrt(sol.omega2[0, extra.node_index[(level, L)]])
            self._extra[(level, L)] = hit
        return hit

    def psi(self, L: PointSet, level: int, Ms, Ns) -> float:
        sep = separators(self.space, Ms, Ns)
        return math.sqrt((self.omega(L & sep.X, level) ** 2
                          + self.omega(L & sep.Y, level) ** 2) / 3.0)

    def theta_p_pair(self, L, level, Ms, Ns, p) -> float:
        ph = phi(self.space, self.f, L, Ms, Ns)
        return math.sqrt(0.5 * (ph ** 2 + self.psi(L, level, Ms, Ns) ** 2 / p))

    def theta_p(self, L, level, i_seq, j_seq, m, n, p) -> float:
        pairs = enumerate_B(self.model.coverings[level], L, m, n, i_seq, j_seq)
        return max((self.theta_p_pair(L, level, pf.M, pf.N, p) for pf in pairs), default=0.0)

    def theta(self, L, level, i_seq, j_seq, m, n) -> float:
        pairs = enumerate_B(self.model.coverings[level], L, m, n, i_seq, j_seq)
        if not pairs:
            return 0.0
        terms = [(phi(self.space, self.f, L, pf.M, pf.N) ** 2,
                  self.psi(L, level, pf.M, pf.N) ** 2) for pf in pairs]
        total = 0.0
        for p in range(1, self.params.p_max + 1):
            total += 2.0 ** -p * max(0.5 * (a + b / p) for a, b in terms)
        return math.sqrt(total)


def build_model(space, coverings, params=None) -> NormModel:
    key = ("model", id(coverings), _params_key(params or NormParams()))
    hit = space._cache.get(key)
    if hit is None or hit[0] is not coverings:
        hit = (coverings, NormModel(space, coverings, params))
        space._cache[key] = hit
    return hit[1]


def _params_key(p: NormParams):
    w = p.weights if p.weights is None or callable(p.weights) else tuple(sorted(p.weights.items()))
    return (p.l_max, p.i_max, p.mn_max, p.p_max, p.fp_tol, p.max_iter, w if not callable(w) else id(w))


def solve(f: RealFunction, space: TopSpace, coverings: Mapping[int, LevelCovering],
          params: NormParams | None = None, *, init: str = "zero") -> SolveSession:
    model = build_model(space, coverings, params)
    return model.solve_batch(f.as_array(space)[None], init=init).session(0, f)


def evaluate(session: SolveSession, query) -> float:
    """Evaluate ``("omega", L, l)``, ``("theta", L, l, i, j, m, n)``,
    ``("theta_p", L, l, i, j, m, n, p)``, ``("theta_p_pair", L, l, M, N, p)`` or
    ``("psi", L, l, M, N)``."""
    handlers = {"omega": (session.omega, 2), "psi": (session.psi, 4),
                "theta": (session.theta, 6), "theta_p": (session.theta_p, 7),
                "theta_p_pair": (session.theta_p_pair, 5)}
    if not isinstance(query, tuple) or not query or query[0] not in handlers:
        raise ValidationError(f"malformed query {query!r}")
    fn, arity = handlers[query[0]]
    if len(query) - 1 != arity or not isinstance(query[1], PointSet):
        raise ValidationError(f"malformed query {query!r}")
    return fn(*query[1:])


def norm(f: RealFunction, space: TopSpace, coverings, params: NormParams | None = None):
    """``(value, error_bound)``; the untruncated norm lies within ``error_bound``."""
    s = solve(f, space, coverings, params)
    return s.value, s.error_bound
