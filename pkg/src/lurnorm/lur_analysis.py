"""Good choices, strong attainment, the decomposition tree and the modulus probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConsistencyError, ValidationError
from .families import LevelCovering, derive, minimal_index, open_G, sigma_sorted
from .norm_engine import NormModel, NormParams, enumerate_B, phi, separators
from .space_core import INF, SEQUENCE, PointSet, RealFunction, TopSpace, union_all

# -- level choice ---------------------------------------------------------


def _offending_min_distance(space: TopSpace, f: RealFunction, eps: float) -> float:
    """Smallest distance between two points whose values differ by more than eps/3."""
    bound = eps / 3.0
    best = math.inf
    pts = list(space.points)
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            if abs(f.at(pts[a]) - f.at(pts[b])) > bound:
                best = min(best, space.distance(pts[a], pts[b]))
    if space.kind == SEQUENCE:
        first_tail = str(space.cutoff)
        for p in pts:
            if p != INF and abs(f.at(p) - f.tail_value) > bound:
                # the nearest tail point is the first one
                best = min(best, space.distance(p, first_tail))
    return best


def uc_level(space: TopSpace, f: RealFunction, eps: float) -> int:
    """Least ``l >= 1`` with ``d(t,u) <= 2**-l  =>  |f(t)-f(u)| <= eps/3``."""
    if not eps > 0:
        raise ValidationError("eps must be positive")
    dmin = _offending_min_distance(space, f, eps)
    level = 1
    while 2.0 ** -level >= dmin:
        level += 1
    return level


def oscillation_check(space: TopSpace, f: RealFunction, covering: LevelCovering, eps: float):
    """Check that ``f`` oscillates by at most eps/3 on the closure of every member.

    Returns ``(True, None)`` or ``(False, (family, member, spread))``.
    """
    for i, fam in enumerate(covering.families):
        for member in fam.members:
            spread = f.osc_on(space.closure(member))
            if spread > eps / 3.0 + 1e-12:
                return False, (i, member, spread)
    return True, None


# -- good choices ---------------------------------------------------------


@dataclass(frozen=True)
class GoodChoiceStats:
    A: float
    a: float
    alpha: float
    beta: float
    b: float
    B: float
    degenerate_alpha: bool = False
    degenerate_beta: bool = False

    def check_order(self) -> None:
        if not (self.A <= self.a and self.A <= self.alpha and self.b <= self.B
                and self.beta <= self.B):
            raise ConsistencyError(f"good-choice statistics out of order: {self}")

    @property
    def slack(self) -> float:
        return (self.B - self.b) + (self.a - self.A)


@dataclass(frozen=True)
class GoodChoice:
    i: tuple
    M: tuple
    j: tuple
    N: tuple
    stats: GoodChoiceStats
    is_good: bool

    @property
    def m(self) -> int:
        return len(self.M)

    @property
    def n(self) -> int:
        return len(self.N)

    @property
    def type(self) -> tuple:
        return (self.m, self.n, self.i, self.j)


def good_choice_stats(space: TopSpace, f: RealFunction, L: PointSet, covering: LevelCovering,
                      i_seq, j_seq, Ms, Ns, strict_tol: float = 1e-9) -> GoodChoice:
    """Statistics of a candidate pair and whether it is a good choice on ``L``.

    When ``L`` lies inside the open set attached to one side, the corresponding
    min (max) is over the empty set and is taken as +inf (-inf).
    """
    Ms, Ns = tuple(Ms), tuple(Ns)
    for member in Ms + Ns:
        if not member.meets(L):
            raise ValidationError(f"member {space.fmt(member)} misses L")
    if space.closure(union_all(Ms)).meets(space.closure(union_all(Ns))):
        raise ValidationError("pair does not have disjoint closures")
    A, B = f.min_on(L), f.max_on(L)
    a = max(f.min_on(L & space.closure(M)) for M in Ms)
    b = min(f.max_on(L & space.closure(N)) for N in Ns)
    rest_m = L - open_G(covering, i_seq, Ms)
    rest_n = L - open_G(covering, j_seq, Ns)
    alpha = f.min_on(rest_m) if rest_m else math.inf
    beta = f.max_on(rest_n) if rest_n else -math.inf
    stats = GoodChoiceStats(A, a, alpha, beta, b, B, not rest_m, not rest_n)
    stats.check_order()
    rhs = stats.slack + strict_tol
    good = (B - beta) / len(Ns) > rhs and (alpha - A) / len(Ms) > rhs
    return GoodChoice(tuple(i_seq), Ms, tuple(j_seq), Ns, stats, good)


def level_set(space: TopSpace, f: RealFunction, L: PointSet, lo: float, hi: float) -> PointSet:
    pts = frozenset(p for p in L.finite if lo <= f.at(p) <= hi)
    tail = L.tail if L.tail and lo <= f.tail_value <= hi else frozenset()
    return PointSet(pts, tail)


def find_good_choice(space: TopSpace, f: RealFunction, L: PointSet, covering: LevelCovering,
                     eps: float, strict_tol: float = 1e-9) -> GoodChoice | None:
    """Build a good choice from the argmax and argmin sets of ``f`` on ``L``.

    Ties are resolved with a band of width ``strict_tol`` around each extremum.
    Returns ``None`` when the oscillation on ``L`` is below ``eps``.
    """
    if L.is_empty or f.osc_on(L) < eps:
        return None
    A, B = f.min_on(L), f.max_on(L)
    h_max = space.closure(level_set(space, f, L, B - strict_tol, math.inf)) & L
    h_min = space.closure(level_set(space, f, L, -math.inf, A + strict_tol)) & L
    j_seq, Ns = minimal_index(covering, h_max)
    i_seq, Ms = minimal_index(covering, h_min)
    if space.closure(union_all(Ms)).meets(space.closure(union_all(Ns))):
        raise ConsistencyError(
            "instance invalid: members near the max and min of f have meeting closures; "
            "the covering violates the diameter condition at this level")
    gc = good_choice_stats(space, f, L, covering, i_seq, j_seq, Ms, Ns, strict_tol)
    if not gc.is_good:
        raise ConsistencyError(f"constructed pair is not a good choice: {gc.stats}")
    return gc


def rival_bounds(stats: GoodChoiceStats, m: int, n: int):
    """``(lower bound on phi at the good pair, upper bounds for rivals differing in M, in N)``."""
    lower = 0.5 * (stats.b - stats.a)
    upper_m = 0.5 * (stats.B - stats.A - (stats.alpha - stats.A) / m)
    upper_n = 0.5 * (stats.B - stats.A - (stats.B - stats.beta) / n)
    return lower, upper_m, upper_n


def check_strong_attainment(space: TopSpace, f: RealFunction, L: PointSet,
                            covering: LevelCovering, gc: GoodChoice) -> float:
    """Gap between phi at the good pair and the best rival of the same type."""
    best = phi(space, f, L, gc.M, gc.N)
    rivals = [phi(space, f, L, pf.M, pf.N)
              for pf in enumerate_B(covering, L, gc.m, gc.n, gc.i, gc.j)
              if (pf.M, pf.N) != (gc.M, gc.N)]
    gap = best - max(rivals) if rivals else math.inf
    if not gap > 0:
        raise ConsistencyError(f"supremum of phi not strongly attained (gap {gap!r})")
    return gap


# -- Deville-type selection ------------------------------------------------


@dataclass
class DevilleReport:
    selected: list
    theta_disc: list
    psi_disc_selected: list
    psi_disc_strong: list
    strong_index: int | None
    gap: float
    p: int
    verdict: str


def _disc(fn, x, y) -> float:
    return 0.5 * fn(x) ** 2 + 0.5 * fn(y) ** 2 - fn(0.5 * (x + y)) ** 2


def deville_harness(phis: Sequence[Callable], psis: Sequence[Callable], x, xs,
                    *, p_max: int = 16, gap_tol: float = 1e-12,
                    vanish_tol: float = 1e-6) -> DevilleReport:
    """Select, for each ``x_r``, the index maximizing ``theta_{i,p}`` at the midpoint.

    ``p`` is the least power of two (at most ``p_max``) for which the strongly
    attained index also wins the ``theta_{i,p}`` comparison at ``x``.  Each
    selected index obeys the certified bound
    ``disc(psi_i) <= 2 p 2**p disc(theta)``, which is checked for every ``r``.
    """
    if len(phis) != len(psis) or not phis:
        raise ValidationError("phi and psi lists must be nonempty and of equal length")
    pts = [x] + list(xs)
    for y in pts:
        vals = [g(y) for g in list(phis) + list(psis)]
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValidationError("functions must be finite and non-negative on the inputs")

    def theta_ip(k, p, y):
        return math.sqrt(0.5 * (phis[k](y) ** 2 + psis[k](y) ** 2 / p))

    def theta(y):
        return math.sqrt(sum(2.0 ** -q * max(theta_ip(k, q, y) ** 2 for k in range(len(phis)))
                             for q in range(1, p_max + 1)))

    at_x = [g(x) for g in phis]
    order = sorted(range(len(at_x)), key=lambda k: -at_x[k])
    top = order[0]
    gap = at_x[top] - (at_x[order[1]] if len(order) > 1 else -math.inf)
    strong = gap > gap_tol
    p = p_max
    if strong:
        spread = max(g(x) for g in psis) ** 2
        runner = at_x[order[1]] ** 2 if len(order) > 1 else 0.0
        p = 1
        while p < p_max and p * (at_x[top] ** 2 - runner) <= 2 * spread:
            p *= 2
        p = min(p, p_max)

    selected, d_theta, d_sel, d_strong = [], [], [], []
    factor = 2 * p * 2.0 ** p
    for y in xs:
        mid = 0.5 * (x + y)
        k = max(range(len(phis)), key=lambda k: (theta_ip(k, p, mid), -k))
        dt = _disc(theta, x, y)
        ds = _disc(psis[k], x, y)
        if ds > factor * dt + 1e-9 * (1 + factor * abs(dt)):
            raise ConsistencyError(f"selection bound violated at r={len(selected)}")
        selected.append(k)
        d_theta.append(dt)
        d_sel.append(ds)
        d_strong.append(_disc(psis[top], x, y) if strong else math.nan)

    if not strong:
        verdict = "no strong attainment"
    elif not xs or d_theta[-1] > vanish_tol:
        verdict = "theta discrepancy does not vanish"
    else:
        tail = max(1, len(xs) // 4)
        if any(k != top for k in selected[-tail:]):
            raise ConsistencyError("selected indices do not settle on the strong index")
        if d_strong[-1] > factor * d_theta[-1] + 1e-9:
            raise ConsistencyError("psi discrepancy at the strong index does not vanish")
        verdict = "consistent"
    return DevilleReport(selected, d_theta, d_sel, d_strong, top if strong else None, gap, p,
                         verdict)


# -- decomposition tree ----------------------------------------------------


@dataclass
class TreeNode:
    L: PointSet
    s: int
    rule: int = 0
    children: list = field(default_factory=list)
    choice: GoodChoice | None = None


@dataclass
class DecompositionTree:
    space: TopSpace
    eps: float
    level: int
    schedule: list
    nodes: list
    leaves: list
    depth_cap: int

    @property
    def depth(self) -> int:
        return max(n.s for n in self.nodes)


def _covering_at(covering_at, level) -> LevelCovering:
    return covering_at(level) if callable(covering_at) else covering_at[level]


def schedule(covering: LevelCovering) -> list:
    """Diagonal enumeration of the quadruples ``(m, n, i, j)`` that can carry a pair.

    Quadruples whose families are empty, or smaller than ``m`` or ``n``, never
    admit a pair and are left out.
    """
    seqs = [s for s in sigma_sorted(covering.n_families)
            if derive(covering, s).family.members]
    rank = {s: k for k, s in enumerate(seqs)}
    size = {s: len(derive(covering, s).family.members) for s in seqs}
    quads = [(m, n, i, j) for i in seqs for j in seqs
             for m in range(1, size[i] + 1) for n in range(1, size[j] + 1)]
    quads.sort(key=lambda q: (q[0] + q[1] + rank[q[2]] + rank[q[3]], q[0], q[1],
                              rank[q[2]], rank[q[3]]))
    return quads


def build_decomposition(space: TopSpace, f: RealFunction, eps: float, covering_at,
                        params: NormParams | None = None) -> DecompositionTree:
    """Split ``K`` along good choices until every piece has oscillation below ``eps``."""
    params = params or NormParams()
    level = uc_level(space, f, eps)
    covering = _covering_at(covering_at, level)
    quads = schedule(covering)
    n_atoms = len(space.points) + len(space.all_residues) + 1
    cap = n_atoms * max(len(quads), 1) + 1

    choice_memo: dict = {}

    def good_of_type(L, quad):
        key = (L, quad)
        if key not in choice_memo:
            m, n, i_seq, j_seq = quad
            found = None
            for pf in enumerate_B(covering, L, m, n, i_seq, j_seq):
                gc = good_choice_stats(space, f, L, covering, i_seq, j_seq, pf.M, pf.N,
                                       params.strict_tol)
                if gc.is_good:
                    found = gc
                    break
            choice_memo[key] = found
        return choice_memo[key]

    nodes: list = []
    index: dict = {}

    def node_for(L, s):
        if s > cap:
            raise ConsistencyError(f"decomposition exceeded depth cap {cap}")
        key = (L, s)
        if key not in index:
            index[key] = len(nodes)
            nodes.append(TreeNode(L, s))
            stack.append(index[key])
        return index[key]

    stack: list = []
    node_for(space.universe, 0)
    while stack:
        node = nodes[stack.pop()]
        if node.L.is_empty or f.osc_on(node.L) < eps:
            node.rule = 1
            continue
        gc = good_of_type(node.L, quads[node.s % len(quads)]) if quads else None
        if gc is not None:
            sep = separators(space, gc.M, gc.N)
            node.rule, node.choice = 2, gc
            node.children = [node_for(node.L & sep.X, node.s + 1),
                             node_for(node.L & sep.Y, node.s + 1)]
        else:
            node.rule = 3
            node.children = [node_for(node.L, node.s + 1)]

    leaves = []
    for nd in nodes:
        if nd.rule == 1 and nd.L not in leaves:
            leaves.append(nd.L)
    tree = DecompositionTree(space, eps, level, quads, nodes, leaves, cap)
    _check_tree(tree, f)
    return tree


def _check_tree(tree: DecompositionTree, f: RealFunction) -> None:
    space = tree.space
    covered = union_all(tree.leaves)
    if covered != space.universe:
        raise ConsistencyError(f"leaves miss {space.fmt(space.universe - covered)}")
    for L in tree.leaves:
        if L and not f.osc_on(L) < tree.eps:
            raise ConsistencyError(f"leaf {space.fmt(L)} oscillates too much")
    for s in range(tree.depth + 1):
        layer = union_all(n.L for n in tree.nodes if n.s == s)
        if covered | layer != space.universe:
            raise ConsistencyError(f"cover invariant fails at s={s}")


# -- modulus probe ----------------------------------------------------------


def norm_sq(model: NormModel, F) -> np.ndarray:
    """Truncated squared norm of each row of ``F``."""
    sol = model.solve_batch(F)
    return sum(2.0 ** (-l - 1) * sol.omega2[:, model.root_nodes[l]] for l in model.levels)


def discrepancy(model: NormModel, f: np.ndarray, G: np.ndarray, f_sq: float | None = None):
    """``0.5|f|^2 + 0.5|g|^2 - |(f+g)/2|^2`` for each row ``g`` of ``G``."""
    G = np.atleast_2d(G)
    if f_sq is None:
        f_sq = float(norm_sq(model, f[None])[0])
    both = norm_sq(model, np.vstack([G, 0.5 * (f[None] + G)]))
    return 0.5 * f_sq + 0.5 * both[:len(G)] - both[len(G):]


@dataclass
class ModulusReport:
    eps: float
    delta_estimate: float
    witness: list
    budget: int
    evaluations: int
    seed: int
    trace: list
    label: str = "evidence"

    def lines(self) -> list:
        out = [f"label={self.label}", f"eps={self.eps!r}",
               f"delta_estimate={self.delta_estimate!r}", f"budget={self.budget}",
               f"evaluations={self.evaluations}", f"seed={self.seed}",
               "witness=" + ",".join(repr(float(v)) for v in self.witness)]
        out += [f"trace.{k}={phase}:{n}:{best!r}" for k, (phase, n, best) in
                enumerate(self.trace)]
        return out


def _project(H: np.ndarray, eps: float) -> np.ndarray:
    """Push each offset out to sup-norm at least ``eps``."""
    size = np.abs(H).max(axis=1)
    scale = np.where(size < eps, eps / np.where(size > 0, size, 1.0), 1.0)
    H = H * scale[:, None]
    zero = size == 0
    if zero.any():
        H[zero, 0] = eps
    return H


def lur_probe(model: NormModel, f, eps: float, budget: int = 10_000, seed: int = 0,
              *, chunk: int = 2048, starts: int = 4) -> ModulusReport:
    """Search for the smallest discrepancy over ``g`` with ``|f - g|_inf >= eps``.

    Random restarts followed by coordinate descent.  The minimum found is an
    upper bound for the true modulus at ``f``; it is evidence, not a proof.
    """
    if budget < 1:
        raise ValidationError("probe budget must be positive")
    if not eps > 0:
        raise ValidationError("eps must be positive")
    f = f.as_array(model.space) if isinstance(f, RealFunction) else np.asarray(f, float)
    dim = f.size
    rng = np.random.default_rng(seed)
    f_sq = float(norm_sq(model, f[None])[0])
    used = 0
    trace = []

    fixed = [eps * s * e for e in np.eye(dim) for s in (1.0, -1.0)]
    if np.abs(f).max() > 0:
        fixed += [eps * s * f / np.abs(f).max() for s in (1.0, -1.0)]
    fixed = np.array(fixed[:budget])
    n_rand = max(0, budget // 2 - len(fixed))
    u = rng.uniform(-1.0, 1.0, size=(n_rand, dim))
    u /= np.maximum(np.abs(u).max(axis=1, keepdims=True), 1e-300)
    radius = eps * (1.0 + rng.exponential(0.25, size=n_rand))
    H = _project(np.vstack([fixed, u * radius[:, None]]), eps)
    vals = np.concatenate([discrepancy(model, f, f[None] + H[k:k + chunk], f_sq)
                           for k in range(0, len(H), chunk)])
    used += len(H)
    trace.append(("random", used, float(vals.min())))

    order = np.argsort(vals, kind="stable")[:starts]
    cur_h = [H[k].copy() for k in order]
    cur_v = [float(vals[k]) for k in order]
    steps = [eps / 2.0] * len(cur_h)
    active = list(range(len(cur_h)))
    while active and used + 2 * dim <= budget:
        for k in list(active):
            if used + 2 * dim > budget:
                break
            moves = np.vstack([cur_h[k] + s * steps[k] * e for e in np.eye(dim)
                               for s in (1.0, -1.0)])
            moves = _project(moves, eps)
            v = discrepancy(model, f, f[None] + moves, f_sq)
            used += len(moves)
            best = int(np.argmin(v))
            if v[best] < cur_v[k]:
                cur_h[k], cur_v[k] = moves[best], float(v[best])
            else:
                steps[k] /= 2.0
                if steps[k] < 1e-9 * eps:
                    active.remove(k)
        if min(cur_v) < trace[-1][2]:
            trace.append(("descent", used, min(cur_v)))
    trace.append(("done", used, min(cur_v)))
    best = int(np.argmin(cur_v))
    return ModulusReport(eps, cur_v[best], (f + cur_h[best]).tolist(), budget, used, seed,
                         trace)


@dataclass
class FollowupReport:
    threshold: float
    samples: int
    found: int
    violations: int
    max_distance: float


def followup_search(model: NormModel, f, eps: float, delta: float, samples: int = 4000,
                    seed: int = 1) -> FollowupReport:
    """Look for ``g`` with discrepancy at most ``delta/2``; all of them should lie within ``eps``."""
    f = f.as_array(model.space) if isinstance(f, RealFunction) else np.asarray(f, float)
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(samples, f.size))
    u /= np.maximum(np.abs(u).max(axis=1, keepdims=True), 1e-300)
    radius = 2.0 * eps * 2.0 ** -rng.integers(0, 12, size=samples) * rng.uniform(size=samples)
    H = u * radius[:, None]
    vals = discrepancy(model, f, f[None] + H)
    hit = vals <= delta / 2.0
    dist = np.abs(H).max(axis=1)
    return FollowupReport(delta / 2.0, samples, int(hit.sum()),
                          int((hit & (dist >= eps)).sum()),
                          float(dist[hit].max()) if hit.any() else 0.0)
