"""Command line front end.  Reports are blocks of ``key=value`` lines.

Exit codes: 0 success, 1 validation failure, 2 unsupported instance kind,
3 internal consistency failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConsistencyError, LurError, ValidationError
from .families import derive, minimal_index, open_G, union_closures_before
from .instance import GALLERY, Instance, random_discrete_instance, resolve_instance
from .lemmas import SUITE_TOPICS, SUITES, Tally, run_suites
from .lur_analysis import build_decomposition, followup_search, lur_probe
from .norm_engine import NormParams, build_model, separators
from .space_core import FINITE

EXIT_OK, EXIT_INVALID, EXIT_UNSUPPORTED, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"usage: {message}")


class Report:
    def __init__(self, machine: bool):
        self.machine = machine
        self.rows: list = []

    def add(self, key: str, value) -> None:
        self.rows.append((key, _fmt(value)))

    def render(self) -> str:
        if self.machine:
            return "".join(f"{k}={v}\n" for k, v in self.rows)
        width = max((len(k) for k, _ in self.rows), default=0)
        return "".join(f"{k.ljust(width)}  {v}\n" for k, v in self.rows)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, tuple):
        return "(" + ",".join(str(v) for v in value) + ")"
    return str(value)


def _seq(seq) -> str:
    return "[" + ",".join(str(i) for i in seq) + "]"


def _family(space, fam) -> str:
    parts = [space.fmt(m) for m in fam.members]
    if fam.tail_singletons:
        parts.append("{n}:n in tail")
    return "{" + ",".join(parts) + "}"


# -- parameters -----------------------------------------------------------------


def _load_weights(path: str):
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read weights file {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("weights file must map index sequences to weights")
    out = {}
    for key, w in raw.items():
        try:
            seq = tuple(int(t) for t in str(key).replace("(", "").replace(")", "").split(",")
                        if t.strip())
            out[seq] = float(w)
        except ValueError:
            raise ValidationError(f"bad weights entry {key!r}: {w!r}") from None
    return out


def params_from(args) -> NormParams:
    weights = None
    if args.weights == "file":
        if not args.weights_file:
            raise ValidationError("--weights file needs --weights-file")
        weights = _load_weights(args.weights_file)
    elif args.weights_file:
        raise ValidationError("--weights-file only applies with --weights file")
    return NormParams(l_max=args.lmax, i_max=args.imax, mn_max=args.mnmax, p_max=args.pmax,
                      fp_tol=args.fptol, weights=weights).validate()


def _function(inst: Instance, args):
    if not args.f:
        raise ValidationError("--f NAME is required")
    return inst.function(args.f)


def _levels(params: NormParams):
    return range(1, params.l_max + 1)


# -- commands -----------------------------------------------------------------------


def cmd_validate(inst: Instance, args, rep: Report) -> int:
    space = inst.space
    rep.add("instance", inst.name)
    rep.add("kind", space.kind)
    rep.add("points", len(space.points))
    rep.add("topology", "pass")
    rep.add("metric", "pass")
    rep.add("hausdorff", space.is_hausdorff)
    levels = sorted(set(args.level or []) | set(inst.level_coverings) |
                    (set(range(0, args.lmax + 1)) if inst.default_covering else set()))
    status = EXIT_OK
    for l in levels:
        try:
            cov = inst.covering(l)
            rep.add(f"covering.level{l}", "pass")
            rep.add(f"covering.level{l}.families", cov.n_families)
        except ValidationError as exc:
            rep.add(f"covering.level{l}", f"fail {exc}")
            status = EXIT_INVALID
    for name in sorted(inst.functions):
        rep.add(f"function.{name}", "pass")
    rep.add("valid", status == EXIT_OK)
    return status


def cmd_derive(inst: Instance, args, rep: Report) -> int:
    space = inst.space
    level = args.level[0] if args.level else 0
    cov = inst.covering(level)
    rep.add("level", level)
    rep.add("families", cov.n_families)
    for seq in cov.sigma():
        e = derive(cov, seq)
        if e.family.is_empty() and not args.all:
            continue
        key = f"derived.l{level}{_seq(seq)}"
        rep.add(f"{key}.family", _family(space, e.family))
        rep.add(f"{key}.I", space.fmt(e.I))
        rep.add(f"{key}.J", space.fmt(e.J))
        union, a1, a2 = union_closures_before(cov, seq)
        rep.add(f"{key}.before", space.fmt(union))
    if args.H:
        h = space.parse(args.H)
        seq, chosen = minimal_index(cov, h)
        rep.add("minimal.H", space.fmt(h))
        rep.add("minimal.index", _seq(seq))
        rep.add("minimal.M", "{" + ",".join(space.fmt(m) for m in chosen) + "}")
        rep.add("minimal.G", space.fmt(open_G(cov, seq, chosen)))
    return EXIT_OK


def cmd_norm(inst: Instance, args, rep: Report) -> int:
    params = params_from(args)
    f = _function(inst, args)
    model = build_model(inst.space, inst.coverings(_levels(params)), params)
    sol = model.solve_batch(f.as_array(inst.space)[None], init=args.init)
    value, bound = sol.norms()
    rep.add("instance", inst.name)
    rep.add("f", args.f)
    rep.add("value", value[0])
    rep.add("error_bound", bound[0])
    rep.add("truncation_bound", sol.truncation_bound()[0])
    rep.add("residual", sol.residual[0])
    rep.add("iterations", sol.iterations)
    rep.add("sup_norm", float(np.abs(sol.F[0]).max()))
    return EXIT_OK


def cmd_tables(inst: Instance, args, rep: Report) -> int:
    space = inst.space
    params = params_from(args)
    levels = args.level or ([0] if space.kind != FINITE else list(_levels(params)))
    for l in levels:
        cov = inst.covering(l)
        for seq in cov.sigma():
            e = derive(cov, seq)
            if not e.family.is_empty():
                rep.add(f"derived.l{l}{_seq(seq)}", _family(space, e.family))
    if not args.f:
        return EXIT_OK
    f = _function(inst, args)
    model = build_model(space, inst.coverings(_levels(params)), params)
    sol = model.solve_batch(f.as_array(space)[None])
    value, bound = sol.norms()
    rep.add("norm.value", value[0])
    rep.add("norm.error_bound", bound[0])
    rows = sorted(model.node_index.items(), key=lambda kv: (kv[0][0], len(kv[0][1].finite),
                                                            space.fmt(kv[0][1])))
    for (l, L), k in rows:
        rep.add(f"omega.l{l}.{space.fmt(L)}", float(np.sqrt(sol.omega2[0, k])))
    for k, pf in enumerate(model.pairs):
        node = model.types[_type_of(model, k)][0]
        l, L = model.nodes[node]
        key = (f"psi.l{l}.{space.fmt(L)}.M=" + ",".join(space.fmt(m) for m in pf.M)
               + ".N=" + ",".join(space.fmt(n) for n in pf.N))
        rep.add(key, float(np.sqrt(sol.psi2[0, k])))
    rep.add("residual", sol.residual[0])
    rep.add("iterations", sol.iterations)
    return EXIT_OK


def _type_of(model, pair_index: int) -> int:
    return int(np.searchsorted(model.t_start, pair_index, side="right") - 1)


def cmd_decompose(inst: Instance, args, rep: Report) -> int:
    params = params_from(args)
    f = _function(inst, args)
    space = inst.space
    tree = build_decomposition(space, f, args.eps, inst.covering, params)
    rep.add("eps", args.eps)
    rep.add("level", tree.level)
    rep.add("schedule_length", len(tree.schedule))
    rep.add("depth_cap", tree.depth_cap)
    rep.add("nodes", len(tree.nodes))
    rep.add("depth", tree.depth)
    for k, nd in enumerate(tree.nodes):
        line = f"L={space.fmt(nd.L)} s={nd.s} rule={nd.rule}"
        if nd.children:
            line += " children=" + ",".join(str(c) for c in nd.children)
        if nd.choice is not None:
            gc = nd.choice
            sep = separators(space, gc.M, gc.N)
            line += (f" type=({gc.m},{gc.n},{_seq(gc.i)},{_seq(gc.j)})"
                     f" M={','.join(space.fmt(m) for m in gc.M)}"
                     f" N={','.join(space.fmt(n) for n in gc.N)}"
                     f" X={space.fmt(sep.X)} Y={space.fmt(sep.Y)}")
        rep.add(f"node.{k}", line)
    for k, L in enumerate(tree.leaves):
        rep.add(f"leaf.{k}", f"{space.fmt(L)} osc={f.osc_on(L)!r}")
    return EXIT_OK


def cmd_probe(inst: Instance, args, rep: Report) -> int:
    params = params_from(args)
    f = _function(inst, args)
    model = build_model(inst.space, inst.coverings(_levels(params)), params)
    report = lur_probe(model, f, args.eps, args.budget, args.seed)
    for line in report.lines():
        key, _, value = line.partition("=")
        rep.add(key, value)
    follow = followup_search(model, f, args.eps, report.delta_estimate,
                             samples=max(args.budget // 4, 1), seed=args.seed + 1)
    rep.add("followup.threshold", follow.threshold)
    rep.add("followup.samples", follow.samples)
    rep.add("followup.found", follow.found)
    rep.add("followup.violations", follow.violations)
    rep.add("followup.max_distance", follow.max_distance)
    return EXIT_OK if follow.violations == 0 else EXIT_INTERNAL


def cmd_lemma_check(inst: Instance | None, args, rep: Report) -> int:
    params = params_from(args)
    suites = args.suite or list(SUITES)
    tally = Tally()
    if inst is not None:
        tally.merge(run_suites(inst, suites, params, tuple(args.eps_values), args.seed))
    rng = np.random.default_rng(args.seed)
    for _ in range(args.random):
        tally.merge(run_suites(random_discrete_instance(rng), suites, params,
                               tuple(args.eps_values), args.seed))
    rep.add("suites", ",".join(suites))
    rep.add("instances", (inst is not None) + args.random)
    for line in tally.lines():
        key, _, value = line.partition("=")
        rep.add(f"check.{key}", value)
    rep.add("all_pass", tally.ok)
    return EXIT_OK if tally.ok else EXIT_INTERNAL


COMMANDS = {
    "validate": cmd_validate, "derive": cmd_derive, "norm": cmd_norm, "tables": cmd_tables,
    "decompose": cmd_decompose, "probe": cmd_probe, "lemma-check": cmd_lemma_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--machine", action="store_true", help="key=value output")
    common.add_argument("--lmax", type=int, default=4)
    common.add_argument("--imax", type=int, default=4)
    common.add_argument("--mnmax", type=int, default=2)
    common.add_argument("--pmax", type=int, default=8)
    common.add_argument("--fptol", type=float, default=1e-10)
    common.add_argument("--weights", choices=("paper", "file"), default="paper",
                        help="paper: 2**-(2**i0 + ... + 2**ik); file: read --weights-file")
    common.add_argument("--weights-file")
    common.add_argument("--level", type=int, action="append",
                        help="covering level (repeatable)")

    parser = _Parser(prog="lurnorm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lurnorm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    gallery = ", ".join(GALLERY)
    helps = {
        "validate": "check topology, metric, coverings and functions",
        "derive": "list derived families and minimal indices",
        "norm": "evaluate the norm of a function",
        "tables": "dump derived families and the Omega/Psi tables",
        "decompose": "build the decomposition tree for (f, eps)",
        "probe": "estimate the convexity modulus at f",
        "lemma-check": "run the structural check suites",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "lemma-check":
            p.add_argument("instance", nargs="?", help=f"YAML file or gallery name ({gallery})")
            p.add_argument("--suite", action="append", choices=SUITES,
                           help="; ".join(f"{k}: {v}" for k, v in SUITE_TOPICS.items()))
            p.add_argument("--random", type=int, default=0,
                           help="also check this many random discrete instances")
            p.add_argument("--eps-values", type=float, nargs="+", default=[0.5, 0.1])
            p.add_argument("--seed", type=int, default=0)
            continue
        p.add_argument("instance", help=f"YAML file or gallery name ({gallery})")
        if name in ("norm", "tables", "decompose", "probe"):
            p.add_argument("--f", help="function name from the instance")
        if name == "norm":
            p.add_argument("--init", choices=("zero", "sup"), default="zero")
        if name == "derive":
            p.add_argument("--H", help="closed set for the minimal index search, e.g. '{inf}'")
            p.add_argument("--all", action="store_true", help="include empty families")
        if name in ("decompose", "probe"):
            p.add_argument("--eps", type=float, required=True)
        if name == "probe":
            p.add_argument("--budget", type=int, default=10_000)
            p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    rep = None
    try:
        args = build_parser().parse_args(argv)
        rep = Report(args.machine)
        if args.command == "lemma-check":
            inst = resolve_instance(args.instance) if args.instance else None
            if inst is None and args.random < 1:
                raise ValidationError("lemma-check needs an instance or --random N")
        else:
            inst = resolve_instance(args.instance)
        if getattr(args, "eps", None) is not None and not args.eps > 0:
            raise ValidationError("--eps must be positive")
        start = time.perf_counter()
        code = COMMANDS[args.command](inst, args, rep)
        if not args.machine:
            rep.add("elapsed_s", round(time.perf_counter() - start, 3))
    except LurError as exc:
        if rep is not None and rep.rows:
            sys.stdout.write(rep.render())
        kind = "internal" if isinstance(exc, ConsistencyError) else \
            "unsupported" if exc.exit_code == EXIT_UNSUPPORTED else "invalid"
        sys.stdout.write(f"status={kind}\nerror={exc}\n")
        return exc.exit_code
    sys.stdout.write(rep.render())
    return code


if __name__ == "__main__":
    sys.exit(main())
