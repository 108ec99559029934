"""Executable checks of the structural statements behind the construction.

Each check accumulates a pass/fail verdict with the first failing witness.
Suites are grouped as

* ``3``: index order, derived families, preceding closures, minimal indices;
* ``5``: existence of good choices, strong attainment, limits along chains;
* ``6``: discrepancy transfer from Omega to Psi at a good pair;
* ``7``: finite decomposition and small sup distance on small-discrepancy leaves.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import LurError, UnsupportedKind, ValidationError
from .families import BEFORE, EQUAL, LevelCovering, check_isolated, derive, \
    minimal_index, open_G, padded_key, prec, sigma_sorted, union_closures_before
from .instance import Instance
from .lur_analysis import build_decomposition, check_strong_attainment, find_good_choice, \
    good_choice_stats, rival_bounds, uc_level
from .norm_engine import NormModel, NormParams, enumerate_B, phi
from .space_core import FINITE, INF, PointSet, RealFunction, TopSpace

SUITES = ("3", "5", "6", "7")
SUITE_TOPICS = {"3": "families and index order", "5": "good choices",
                "6": "discrepancy transfer", "7": "decomposition"}


@dataclass
class Check:
    name: str
    ok: bool = True
    count: int = 0
    skipped: int = 0
    witness: str = ""

    def line(self) -> str:
        out = f"{self.name}={'pass' if self.ok else 'fail'} cases={self.count}"
        if self.skipped:
            out += f" skipped={self.skipped}"
        if not self.ok:
            out += f" witness={self.witness}"
        return out


class Tally:
    def __init__(self):
        self.checks: dict = {}

    def _get(self, name) -> Check:
        return self.checks.setdefault(name, Check(name))

    def record(self, name: str, ok: bool, witness: str = "") -> bool:
        c = self._get(name)
        c.count += 1
        if not ok and c.ok:
            c.ok, c.witness = False, witness
        return ok

    def skip(self, name: str) -> None:
        self._get(name).skipped += 1

    def guard(self, name: str, fn, *args, context: str = ""):
        """Run ``fn``; a library error counts as a failure of ``name``."""
        try:
            return fn(*args)
        except UnsupportedKind:
            self.skip(name)
        except LurError as exc:
            self.record(name, False, f"{context} {exc}".strip())
        return None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks.values())

    def merge(self, other: "Tally") -> None:
        for c in other.checks.values():
            mine = self._get(c.name)
            mine.count += c.count
            mine.skipped += c.skipped
            if not c.ok and mine.ok:
                mine.ok, mine.witness = False, c.witness

    def lines(self) -> list:
        return [self.checks[k].line() for k in sorted(self.checks)]


# -- candidate closed sets ----------------------------------------------------


def probe_sets(space: TopSpace, limit: int = 4096) -> list:
    """Nonempty closed sets to quantify over: all of them on small finite spaces."""
    if space.kind == FINITE:
        if 2 ** len(space.points) <= limit:
            return [s for s in space.closed_sets() if s]
        rng = np.random.default_rng(len(space.points))
        out = {space.universe}
        for _ in range(limit):
            pick = [p for p in space.points if rng.random() < 0.5] or [space.points[0]]
            out.add(space.closure(PointSet(frozenset(pick))))
        return sorted(out, key=lambda s: (len(s.finite), space.fmt(s)))
    explicit = [p for p in space.points if p != INF]
    tail_all = PointSet(tail=space.all_residues)
    sets = [PointSet.of(INF), space.universe, tail_all | PointSet.of(INF)]
    sets += [PointSet.of(p) for p in explicit]
    sets += [PointSet.of(p, INF) for p in explicit]
    sets += [PointSet(tail=frozenset({r})) | PointSet.of(INF) for r in sorted(space.all_residues)]
    sets.append(PointSet(frozenset(explicit[: len(explicit) // 2])))
    return [s for s in sets if s]


# -- suite 3 --------------------------------------------------------------------


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def check_order(n: int, tally: Tally) -> None:
    seqs = sigma_sorted(n)
    for a in seqs:
        for b in seqs:
            r = prec(a, b)
            tally.record("order.total", r == -prec(b, a) and (r == EQUAL) == (a == b),
                         f"{a} vs {b}")
            pk = _sign((padded_key(a) > padded_key(b)) - (padded_key(a) < padded_key(b)))
            tally.record("order.padding", pk == r, f"{a} vs {b}")
    if len(seqs) <= 31:
        for a, b, c in itertools.product(seqs, repeat=3):
            if prec(a, b) == BEFORE and prec(b, c) == BEFORE:
                tally.record("order.transitive", prec(a, c) == BEFORE, f"{a},{b},{c}")


def check_derived(covering: LevelCovering, tally: Tally) -> None:
    space, n = covering.space, covering.n_families
    for seq in sigma_sorted(n):
        e = derive(covering, seq)
        for l in range(len(seq) - 1):
            mid = derive(covering, seq[:l + 1]).J
            tail = derive(covering, (seq[l],)).J
            tally.record("derived.nesting", e.I <= mid <= tail,
                         f"{seq} at l={l}: I={space.fmt(e.I)}")
        if e.family.members:
            ok, wit = check_isolated(space, e.family)
            disjoint = all(not a.meets(b) for a, b in
                           itertools.combinations(e.family.members, 2))
            tally.record("derived.isolated", ok and disjoint, f"{seq}")
    for k in (2, 3):
        for seq in itertools.product(range(n), repeat=k):
            if len(set(seq)) < k:
                e = derive(covering, seq, allow_non_sigma=True)
                tally.record("derived.repeated_index_empty", e.I.is_empty, f"{seq}: I={space.fmt(e.I)}")


def check_preceding(covering: LevelCovering, tally: Tally) -> None:
    space = covering.space
    for seq in sigma_sorted(covering.n_families):
        res = tally.guard("preceding.identity", union_closures_before, covering, seq,
                          context=f"{seq}:")
        if res is not None:
            tally.record("preceding.identity", space.is_closed(res[0]),
                         f"{seq}: union {space.fmt(res[0])} not closed")


def _subfamilies(members, limit=10):
    if len(members) > limit:
        return None
    return [c for r in range(1, len(members) + 1) for c in itertools.combinations(members, r)]


def check_minimal_index(covering: LevelCovering, tally: Tally, sets=None) -> None:
    space = covering.space
    seqs = sigma_sorted(covering.n_families)
    for h in sets if sets is not None else probe_sets(space):
        res = tally.guard("minimal_index.post", minimal_index, covering, h,
                          context=f"H={space.fmt(h)}:")
        if res is None:
            continue
        seq, chosen = res
        meets = [s for s in seqs if h.meets(derive(covering, s).closure_I)]
        brute = min(meets, key=functools.cmp_to_key(prec)) if meets else None
        tally.record("minimal_index.least", brute == seq,
                     f"H={space.fmt(h)}: got {seq}, brute force {brute}")
        tally.record("minimal_index.post", bool(chosen) and all(m.meets(h) for m in chosen),
                     f"H={space.fmt(h)}")
        fam = derive(covering, seq).family
        subs = _subfamilies(fam.members)
        if subs is None:
            tally.skip("minimal_index.unique")
            continue
        valid = [set(c) for c in subs
                 if all(m.meets(h) for m in c) and h <= open_G(covering, seq, c)]
        tally.record("minimal_index.unique", valid == [set(chosen)],
                     f"H={space.fmt(h)}: {len(valid)} admissible subfamilies")


def suite3(instance: Instance, levels=(0, 1), tally: Tally | None = None) -> Tally:
    tally = tally or Tally()
    for level in levels:
        cov = tally.guard("covering.valid", instance.covering, level, context=f"level {level}:")
        if cov is None:
            continue
        tally.record("covering.valid", True)
        check_order(max(cov.n_families, 1), tally)
        check_derived(cov, tally)
        check_preceding(cov, tally)
        check_minimal_index(cov, tally)
    return tally


# -- suite 5 ----------------------------------------------------------------------


def _decreasing_chain(space: TopSpace, L: PointSet, rng) -> list:
    """Closed sets shrinking from ``K`` to ``L`` one point at a time."""
    extra = [p for p in space.points if p not in L]
    order = list(rng.permutation(len(extra)))
    chain, current = [], list(extra)
    chain.append(space.universe)
    for k in order:
        current.remove(extra[k])
        s = space.closure(L | PointSet(frozenset(current)))
        if s != chain[-1]:
            chain.append(s)
    if chain[-1] != L:
        chain.append(L)
    return chain


def check_good_choices(space, f, covering, eps, tally: Tally, params: NormParams, rng,
                       sets=None) -> None:
    for L in sets if sets is not None else probe_sets(space):
        osc = f.osc_on(L)
        tag = f"L={space.fmt(L)}"
        if osc < eps:
            tally.record("good_choice.none_below_eps",
                         find_good_choice(space, f, L, covering, eps) is None, tag)
            continue
        gc = tally.guard("good_choice.exists", find_good_choice, space, f, L, covering, eps,
                         params.strict_tol, context=tag + ":")
        if gc is None:
            continue
        tally.record("good_choice.exists", gc.is_good, tag)
        tally.record("stats.order", gc.stats.A <= gc.stats.a and gc.stats.b <= gc.stats.B, tag)
        gap = tally.guard("attainment.gap", check_strong_attainment, space, f, L, covering, gc,
                          context=tag + ":")
        if gap is None:
            continue
        tally.record("attainment.gap", gap > 0, f"{tag}: gap {gap!r}")
        lower, up_m, up_n = rival_bounds(gc.stats, gc.m, gc.n)
        tol = 1e-12
        tally.record("attainment.bounds", phi(space, f, L, gc.M, gc.N) >= lower - tol, tag)
        for pf in enumerate_B(covering, L, gc.m, gc.n, gc.i, gc.j):
            if (pf.M, pf.N) == (gc.M, gc.N):
                continue
            val = phi(space, f, L, pf.M, pf.N)
            bound = min(up_m if set(pf.M) != set(gc.M) else math.inf,
                        up_n if set(pf.N) != set(gc.N) else math.inf)
            tally.record("attainment.bounds", val <= bound + tol,
                         f"{tag}: rival phi {val!r} > {bound!r}")
            if tally.guard("stats.order", good_choice_stats, space, f, L, covering, pf.i, pf.j,
                           pf.M, pf.N, params.strict_tol, context=tag + ":") is not None:
                tally.record("stats.order", True)
        if space.kind == FINITE:
            chain = _decreasing_chain(space, L, rng)
            settle = chain.index(L)
            ok = all(good_choice_stats(space, f, Ls, covering, gc.i, gc.j, gc.M, gc.N,
                                       params.strict_tol).is_good
                     for Ls in chain[settle:])
            tally.record("good_choice.stable_on_chains", ok, f"{tag}: chain of {len(chain)}")


def suite5(instance: Instance, params: NormParams, eps_values=(0.5, 0.1), seed=0,
           tally: Tally | None = None) -> Tally:
    tally = tally or Tally()
    rng = np.random.default_rng(seed)
    space = instance.space
    for name in sorted(instance.functions):
        f = instance.functions[name]
        for eps in eps_values:
            level = uc_level(space, f, eps)
            cov = tally.guard("covering.valid", instance.covering, level,
                              context=f"level {level}:")
            if cov is None:
                continue
            tally.record("covering.valid", True)
            check_good_choices(space, f, cov, eps, tally, params, rng)
    return tally


# -- suite 6 ----------------------------------------------------------------------


def _disc(sq: np.ndarray, n: int) -> np.ndarray:
    """``sq`` holds ``[f, g_1..g_n, mid_1..mid_n]``."""
    return 0.5 * sq[0] + 0.5 * sq[1:n + 1] - sq[n + 1:]


def check_transfer(space, f: RealFunction, covering: LevelCovering, level: int,
                   params: NormParams, tally: Tally, rng, eps: float) -> None:
    """Omega discrepancy controls Psi discrepancy at the pair picked at the midpoint."""
    K = space.universe
    gc = find_good_choice(space, f, K, covering, eps, params.strict_tol)
    if gc is None:
        tally.skip("transfer.bound")
        return
    fine = NormParams(params.l_max, params.i_max, params.mn_max, params.p_max, 1e-14,
                      params.strict_tol, params.weights, params.max_iter)
    model = NormModel(space, {level: covering}, fine, levels=[level])
    key = (model.node_index[(level, K)], gc.i, gc.j, gc.m, gc.n)
    if key not in model.type_index:
        tally.skip("transfer.bound")
        return
    t = model.type_index[key]
    weight = model.types[t][5]
    start = model.type_start[t]
    end = model.type_start[t + 1] if t + 1 < len(model.type_start) else len(model.pairs)
    pairs = model.pairs[start:end]
    good = next(k for k, pf in enumerate(pairs) if (pf.M, pf.N) == (gc.M, gc.N))

    f0 = f.as_array(space)
    h = rng.uniform(-1.0, 1.0, size=f0.size)
    ts = 2.0 ** -np.arange(2, 14)
    G = f0[None] + ts[:, None] * h[None]
    F = np.vstack([f0[None], G, 0.5 * (f0[None] + G)])
    sol = model.solve_batch(F)
    om2 = sol.omega2[:, model.node_index[(level, K)]]
    d_om = _disc(om2, len(ts))
    kids = [model.pair_children[start + k] for k in range(len(pairs))]
    ps2 = np.stack([(sol.omega2[:, x] + sol.omega2[:, y]) / 3.0 for x, y in kids], axis=1)
    ph2 = np.stack([[phi(space, RealFunction.from_array(space, row), K, pf.M, pf.N) ** 2
                     for pf in pairs] for row in F])
    slack = 1e-9
    # the smallest p at which the good pair beats every rival at f itself
    rivals = [ph2[0, k] for k in range(len(pairs)) if k != good]
    p_sel = None
    spread = 2.0 * ps2[0].max()
    margin = ph2[0, good] - max(rivals, default=0.0)
    for p in range(1, params.p_max + 1):
        if p * margin > spread:
            p_sel = p
            break
    d_ps = _disc(ps2, len(ts))
    for p in range(1, params.p_max + 1):
        factor = 12.0 * p * 2.0 ** p / weight
        chosen = np.argmax(ph2[len(ts) + 1:] + ps2[len(ts) + 1:] / p, axis=1)
        for r, k in enumerate(chosen):
            ok = d_ps[r, k] <= factor * d_om[r] + slack * (1 + factor)
            tally.record("transfer.bound", ok,
                         f"p={p} r={r}: disc psi {d_ps[r, k]!r} > {factor!r}*{d_om[r]!r}")
        if p == p_sel:
            tail = chosen[len(chosen) // 2:]
            tally.record("transfer.selection", bool((tail == good).all()),
                         f"p={p}: selected {chosen.tolist()} good {good}")
            tally.record("transfer.vanishing",
                         d_ps[-1, good] <= max(1e-3 * d_ps[0, good], 1e-9),
                         f"disc psi {d_ps[0, good]!r} -> {d_ps[-1, good]!r}")
    if p_sel is None:
        tally.skip("transfer.selection")


def suite6(instance: Instance, params: NormParams, eps_values=(0.5, 0.1), seed=0,
           tally: Tally | None = None) -> Tally:
    tally = tally or Tally()
    space = instance.space
    if space.kind != FINITE or not space.is_discrete:
        tally.skip("transfer.bound")
        return tally
    rng = np.random.default_rng(seed)
    for name in sorted(instance.functions):
        f = instance.functions[name]
        for eps in eps_values:
            level = uc_level(space, f, eps)
            cov = instance.covering(level)
            tally.guard("transfer.bound", check_transfer, space, f, cov, level, params, tally,
                        rng, eps, context=f"{name} eps={eps}:")
    return tally


# -- suite 7 ----------------------------------------------------------------------


def discrepancy_threshold(sup: float, osc: float, eps: float) -> float:
    """Largest ``D`` such that an Omega(., L, l) discrepancy at most ``D`` forces
    ``|(f - g) on L| < eps``, given ``|f on L| = sup`` and ``osc(f on L) = osc < eps``.

    With ``s = 6 D`` both the squared sup and squared oscillation have
    discrepancy at most ``s``; this bounds ``|g on L|``, ``|(f+g)/2 on L|`` and
    ``osc(g on L)`` well enough for the elementary argument to apply.
    """
    if not osc < eps:
        return 0.0
    eta = (eps - osc) / 4.0

    def fine(s):
        r = 2.0 * math.sqrt(s)
        if not r < eta:
            return False
        if sup <= eta:
            return True
        b_low = max(sup - r, 0.0)
        return 0.5 * sup ** 2 + 0.5 * b_low ** 2 - s > (sup - eta) ** 2

    lo, hi = 0.0, eta ** 2
    if not fine(lo):
        return 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if fine(mid) else (lo, mid)
    return lo / 6.0


def check_leaves(space, f: RealFunction, tree, covering, params: NormParams, tally: Tally,
                 rng, samples: int = 300) -> None:
    level = tree.level
    fine = NormParams(params.l_max, params.i_max, params.mn_max, params.p_max, 1e-14,
                      params.strict_tol, params.weights, params.max_iter)
    leaves = [L for L in tree.leaves if L]
    model = NormModel(space, {level: covering}, fine, levels=[level], roots={level: leaves},
                      include_universe=False)
    f0 = f.as_array(space)
    u = rng.uniform(-1.0, 1.0, size=(samples, f0.size))
    u /= np.abs(u).max(axis=1, keepdims=True)
    radius = tree.eps * 2.0 ** -rng.integers(0, 16, size=samples) * rng.uniform(0.5, 2.0, samples)
    G = f0[None] + u * radius[:, None]
    F = np.vstack([f0[None], G, 0.5 * (f0[None] + G)])
    sol = model.solve_batch(F)
    for L in leaves:
        idx = [space.index(p) for p in space.sorted_points(L)]
        d = _disc(sol.omega2[:, model.node_index[(level, L)]], samples)
        cut = discrepancy_threshold(float(np.abs(f0[idx]).max()), f.osc_on(L), tree.eps)
        inside = d + 1e-11 <= cut
        dist = np.abs(G[:, idx] - f0[idx]).max(axis=1)
        bad = inside & ~(dist < tree.eps)
        tally.record("leaf.sup_distance", not bad.any(),
                     f"L={space.fmt(L)}: {int(bad.sum())} samples with small discrepancy "
                     f"but distance >= eps")
        tally.record("leaf.nonvacuous", bool(inside.any()) or cut == 0.0,
                     f"L={space.fmt(L)}: no sample under threshold {cut!r}")


def suite7(instance: Instance, params: NormParams, eps_values=(0.5, 0.1), seed=0,
           tally: Tally | None = None) -> Tally:
    tally = tally or Tally()
    space = instance.space
    rng = np.random.default_rng(seed)
    for name in sorted(instance.functions):
        f = instance.functions[name]
        for eps in eps_values:
            tree = tally.guard("decomposition.finite", build_decomposition, space, f, eps,
                               instance.covering, params, context=f"{name} eps={eps}:")
            if tree is None:
                continue
            covered = all(f.osc_on(L) < eps for L in tree.leaves)
            tally.record("decomposition.finite", covered, f"{name} eps={eps}")
            if space.kind == FINITE and space.is_discrete:
                tally.guard("leaf.sup_distance", check_leaves, space, f, tree,
                            instance.covering(tree.level), params, tally, rng,
                            context=f"{name} eps={eps}:")
            else:
                tally.skip("leaf.sup_distance")
    return tally


# -- driver ----------------------------------------------------------------------


def run_suites(instance: Instance, suites=SUITES, params: NormParams | None = None,
               eps_values=(0.5, 0.1), seed: int = 0, levels=(0, 1)) -> Tally:
    params = params or NormParams()
    tally = Tally()
    for s in suites:
        if s not in SUITES:
            raise ValidationError(f"unknown suite {s!r}; choose from {', '.join(SUITES)}")
        if s == "3":
            suite3(instance, levels, tally)
        elif s == "5":
            suite5(instance, params, eps_values, seed, tally)
        elif s == "6":
            suite6(instance, params, eps_values, seed, tally)
        else:
            suite7(instance, params, eps_values, seed, tally)
    return tally
