"""Instance files: a space, per-level coverings and named functions, in YAML.

Every mapping rejects unknown keys, and errors carry the line they refer to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import InstanceFormatError, LurError, ValidationError
from .families import ALL_SINGLETONS, IsolatedFamily, LevelCovering, build_covering, \
    singletons_family
from .space_core import FINITE, METRIC_RULES, SEQUENCE, PointSet, RealFunction, TopSpace, \
    build_finite_space, build_sequence_space, check_function, finite_space_from_open_sets

SYMBOLIC_NAMES = {"all-singletons": ALL_SINGLETONS}


class _Map(dict):
    line = None
    key_lines: dict = {}


class _List(list):
    line = None
    item_lines: list = []


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise InstanceFormatError(f"duplicate key {key!r}", line=key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


def _construct_list(loader, node):
    out = _List(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.item_lines = [v.start_mark.line + 1 for v in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_list)


def _line(obj, key=None):
    if key is not None and isinstance(obj, _Map):
        return obj.key_lines.get(key, obj.line)
    return getattr(obj, "line", None)


def _expect_map(obj, allowed, where, line=None, required=()):
    if not isinstance(obj, dict):
        raise InstanceFormatError(f"{where} must be a mapping", line=_line(obj) or line)
    for key in obj:
        if key not in allowed and str(key) not in allowed:
            raise InstanceFormatError(f"unknown field {key!r} in {where}", line=_line(obj, key))
    for key in required:
        if key not in obj:
            raise InstanceFormatError(f"{where} needs field {key!r}", line=_line(obj))
    return obj


def _expect_list(obj, where, line=None):
    if not isinstance(obj, list):
        raise InstanceFormatError(f"{where} must be a list", line=_line(obj) or line)
    return obj


def _reraise(exc: LurError, line):
    """Attach a line to a validation error raised while building parts."""
    if isinstance(exc, InstanceFormatError) or line is None:
        raise exc
    err = type(exc)(f"line {line}: {exc}", axiom=getattr(exc, "axiom", None),
                    witness=getattr(exc, "witness", None)) \
        if isinstance(exc, ValidationError) else type(exc)(f"line {line}: {exc}")
    raise err from exc


@dataclass
class FamilySpec:
    members: tuple
    witnesses: tuple | None
    symbolic: bool = False
    exclude: tuple = ()
    line: int | None = None


@dataclass(eq=False)
class Instance:
    name: str
    space: TopSpace
    default_covering: list | None
    level_coverings: dict
    functions: dict
    source: str = ""
    _built: dict = field(default_factory=dict, repr=False)

    def covering(self, level: int) -> LevelCovering:
        if level in self._built:
            return self._built[level]
        specs = self.level_coverings.get(level, self.default_covering)
        if specs is None:
            raise ValidationError(f"no covering for level {level}")
        fams, wits = [], []
        for fs in specs:
            try:
                fam = singletons_family(self.space, fs.exclude) if fs.symbolic \
                    else IsolatedFamily(fs.members)
            except LurError as exc:
                _reraise(exc, fs.line)
            fams.append(fam)
            if fs.witnesses is None:
                wits.append(None)
            elif fs.symbolic:
                wits.append(tuple(fs.witnesses) + (None,) * (len(fam.members) - len(fs.witnesses)))
            else:
                wits.append(fs.witnesses)
        try:
            cov = build_covering(self.space, level, fams, wits)
        except LurError as exc:
            wit = getattr(exc, "witness", None)
            at = wit[0] if isinstance(wit, tuple) and wit and isinstance(wit[0], int) else 0
            _reraise(exc, specs[at].line if specs else None)
        self._built[level] = cov
        return cov

    def coverings(self, levels) -> dict:
        return {l: self.covering(l) for l in levels}

    def covering_provider(self):
        return self.covering

    def function(self, name: str) -> RealFunction:
        if name not in self.functions:
            known = ", ".join(sorted(self.functions)) or "none"
            raise ValidationError(f"unknown function {name!r} (known: {known})")
        return self.functions[name]


# -- parsing ------------------------------------------------------------------

TOP_KEYS = ("name", "kind", "points", "topology", "metric", "cutoff", "period", "covering",
            "functions")


def _points_of(space, raw, where, line):
    if isinstance(raw, str):
        return space.parse(raw)
    _expect_list(raw, where, line)
    return space.parse([_token(t) for t in raw])


def _token(t):
    if isinstance(t, bool) or isinstance(t, (list, dict)) or t is None:
        raise InstanceFormatError(f"bad point token {t!r}")
    return str(t)


def _parse_space(doc, name):
    kind = doc.get("kind", FINITE)
    if kind not in (FINITE, SEQUENCE):
        raise InstanceFormatError(f"kind must be {FINITE!r} or {SEQUENCE!r}, got {kind!r}",
                                  line=_line(doc, "kind"))
    if kind == SEQUENCE:
        for key in ("points", "topology"):
            if key in doc:
                raise InstanceFormatError(f"field {key!r} not used for kind sequence",
                                          line=_line(doc, key))
        if "cutoff" not in doc:
            raise InstanceFormatError("kind sequence needs 'cutoff'", line=doc.line)
        rule = "dyadic"
        if "metric" in doc:
            m = _expect_map(doc["metric"], ("rule",), "metric", _line(doc, "metric"))
            rule = m.get("rule", rule)
            if rule not in METRIC_RULES:
                raise InstanceFormatError(f"unknown metric rule {rule!r}", line=_line(m, "rule"))
        cutoff, period = doc["cutoff"], doc.get("period", 1)
        if not isinstance(cutoff, int) or isinstance(cutoff, bool) or cutoff < 1:
            raise InstanceFormatError("cutoff must be a positive integer",
                                      line=_line(doc, "cutoff"))
        if not isinstance(period, int) or isinstance(period, bool) or period < 1:
            raise InstanceFormatError("period must be a positive integer",
                                      line=_line(doc, "period"))
        return build_sequence_space(cutoff, rule, period=period, name=name)

    for key in ("cutoff", "period"):
        if key in doc:
            raise InstanceFormatError(f"field {key!r} only applies to kind sequence",
                                      line=_line(doc, key))
    if "points" not in doc:
        raise InstanceFormatError("finite instance needs 'points'", line=doc.line)
    pts = [_token(p) for p in _expect_list(doc["points"], "points", _line(doc, "points"))]
    if len(set(pts)) != len(pts):
        raise InstanceFormatError("duplicate point names", line=_line(doc, "points"))
    matrix = None
    if "metric" in doc:
        m = _expect_map(doc["metric"], ("matrix",), "metric", _line(doc, "metric"))
        if "matrix" in m:
            rows = _expect_list(m["matrix"], "metric matrix", _line(m, "matrix"))
            try:
                matrix = np.array(rows, dtype=float)
            except (TypeError, ValueError):
                raise InstanceFormatError("metric matrix must be numeric",
                                          line=_line(m, "matrix")) from None
            if matrix.shape != (len(pts), len(pts)):
                raise InstanceFormatError(f"metric matrix must be {len(pts)}x{len(pts)}",
                                          line=_line(m, "matrix"))
    topo = doc.get("topology")
    line = _line(doc, "topology")
    try:
        if topo is None:
            return build_finite_space({p: [p] for p in pts}, matrix, name=name)
        topo = _expect_map(topo, ("min_nbhd", "open_sets"), "topology", line)
        if len(topo) != 1:
            raise InstanceFormatError("topology needs exactly one of min_nbhd, open_sets",
                                      line=line)
        if "min_nbhd" in topo:
            raw = _expect_map(topo["min_nbhd"], set(pts),
                              "min_nbhd", line)
            table = {}
            for p in pts:
                key = p if p in raw else next((k for k in raw if str(k) == p), None)
                if key is None:
                    raise InstanceFormatError(f"min_nbhd missing point {p}", line=raw.line)
                table[p] = [_token(q) for q in _expect_list(raw[key], "neighbourhood",
                                                            _line(raw, key))]
            return build_finite_space(table, matrix, name=name)
        sets = _expect_list(topo["open_sets"], "open_sets", _line(topo, "open_sets"))
        return finite_space_from_open_sets(pts, [[_token(q) for q in s] for s in sets], matrix,
                                           name=name)
    except InstanceFormatError:
        raise
    except LurError as exc:
        _reraise(exc, line if matrix is None or topo is not None else _line(doc, "metric"))


def _parse_family(space, raw, where):
    line = _line(raw)
    _expect_map(raw, ("members", "witnesses", "symbolic", "except"), where, line)
    if "symbolic" in raw:
        if raw["symbolic"] not in SYMBOLIC_NAMES:
            raise InstanceFormatError(f"unknown symbolic family {raw['symbolic']!r}",
                                      line=_line(raw, "symbolic"))
        if "members" in raw:
            raise InstanceFormatError("symbolic family cannot list members", line=line)
        if space.kind != SEQUENCE:
            raise InstanceFormatError("symbolic families need kind sequence", line=line)
        excl = tuple(_token(t) for t in _expect_list(raw.get("except", []), "except", line))
        wits = None
        if "witnesses" in raw:
            wits = tuple(_points_of(space, w, "witness", line)
                         for w in _expect_list(raw["witnesses"], "witnesses", line))
        return FamilySpec((), wits, True, excl, line)
    if "except" in raw:
        raise InstanceFormatError("'except' only applies to symbolic families", line=line)
    if "members" not in raw:
        raise InstanceFormatError(f"{where} needs 'members' or 'symbolic'", line=line)
    members_raw = _expect_list(raw["members"], "members", line)
    try:
        members = tuple(_points_of(space, m, "member", line) for m in members_raw)
        wits = None
        if "witnesses" in raw:
            wl = _expect_list(raw["witnesses"], "witnesses", _line(raw, "witnesses"))
            if len(wl) != len(members):
                raise InstanceFormatError("one witness per member is required",
                                          line=_line(raw, "witnesses"))
            wits = tuple(None if w is None else _points_of(space, w, "witness", line)
                         for w in wl)
    except InstanceFormatError:
        raise
    except LurError as exc:
        _reraise(exc, line)
    return FamilySpec(members, wits, False, (), line)


def _parse_family_list(space, raw, where, line):
    fams = _expect_list(raw, where, line)
    if not fams:
        raise InstanceFormatError(f"{where} has no families", line=line)
    return [_parse_family(space, f, f"{where} family {k}") for k, f in enumerate(fams)]


def _parse_covering(space, raw, line):
    if raw is None:
        return None, {}
    _expect_map(raw, ("default", "levels"), "covering", line)
    default = None
    if "default" in raw:
        default = _parse_family_list(space, raw["default"], "default covering",
                                     _line(raw, "default"))
    levels = {}
    if "levels" in raw:
        lv = _expect_map(raw["levels"], _AnyKey(), "covering levels",
                         _line(raw, "levels"))
        for key, fams in lv.items():
            if not isinstance(key, int) or isinstance(key, bool) or key < 0:
                raise InstanceFormatError(f"level key must be a natural number, got {key!r}",
                                          line=_line(lv, key))
            levels[key] = _parse_family_list(space, fams, f"level {key}", _line(lv, key))
    return default, levels


class _AnyKey:
    def __contains__(self, _):
        return True


def _parse_function(space, raw, name):
    line = _line(raw)
    _expect_map(raw, ("values", "tail"), f"function {name}", line, required=("values",))
    vals = _expect_map(raw["values"], _AnyKey(), f"values of {name}", _line(raw, "values"))
    parsed = {}
    for k, v in vals.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InstanceFormatError(f"value at {k} must be a number", line=_line(vals, k))
        if str(k) not in space._index:
            raise InstanceFormatError(f"function {name}: unknown point {k}", line=_line(vals, k))
        parsed[str(k)] = float(v)
    tail = raw.get("tail")
    if tail is not None and (isinstance(tail, bool) or not isinstance(tail, (int, float))):
        raise InstanceFormatError("tail must be a number", line=_line(raw, "tail"))
    if space.kind == FINITE and tail is not None:
        raise InstanceFormatError("tail value only applies to kind sequence",
                                  line=_line(raw, "tail"))
    f = RealFunction(parsed, None if tail is None else float(tail))
    try:
        check_function(space, f)
    except LurError as exc:
        _reraise(exc, line)
    return f


def parse_instance(text: str, source: str = "<string>") -> Instance:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise InstanceFormatError(f"YAML syntax: {exc.problem}", line=line) from None
    except yaml.YAMLError as exc:
        raise InstanceFormatError(f"YAML syntax: {exc}") from None
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance must be a mapping", line=1)
    _expect_map(doc, TOP_KEYS, "instance", 1)
    name = str(doc.get("name", Path(source).stem))
    space = _parse_space(doc, name)
    default, levels = _parse_covering(space, doc.get("covering"), _line(doc, "covering"))
    funcs = {}
    if "functions" in doc:
        fmap = _expect_map(doc["functions"], _AnyKey(), "functions", _line(doc, "functions"))
        for key, raw in fmap.items():
            funcs[str(key)] = _parse_function(space, raw, key)
    if default is None and not levels and space.kind == FINITE and space.is_discrete:
        default = [FamilySpec(tuple(PointSet.of(p) for p in space.points), None)]
    return Instance(name, space, default, levels, funcs, source)


def load_instance(path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceFormatError(f"cannot read {path}: {exc.strerror}") from None
    return parse_instance(text, str(path))


# -- gallery and random instances ----------------------------------------------

GALLERY = ("k1", "k2", "k3", "sierpinski", "omega8")


def gallery_path(name: str) -> Path:
    return Path(str(resources.files("lurnorm") / "gallery" / f"{name}.yaml"))


def load_gallery(name: str) -> Instance:
    if name not in GALLERY:
        raise ValidationError(f"unknown gallery instance {name!r}")
    return load_instance(gallery_path(name))


def resolve_instance(ref: str) -> Instance:
    """A path to a YAML file, or the name of a shipped gallery instance."""
    if ref in GALLERY and not Path(ref).exists():
        return load_gallery(ref)
    return load_instance(ref)


def random_discrete_instance(rng: np.random.Generator, n_points: int | None = None,
                             n_families: int | None = None, n_functions: int = 2) -> Instance:
    """A random discrete space with a random metric and a singleton-partition covering.

    The points are split into families of singletons, which are isolated on a
    discrete space and have witnesses of diameter 0, so the covering is valid
    at every level.
    """
    n = int(n_points or rng.integers(2, 7))
    pts = [f"p{k}" for k in range(n)]
    coords = rng.uniform(0.0, 4.0, size=(n, 2))
    dist = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=2) + 1e-3
    np.fill_diagonal(dist, 0.0)
    space = build_finite_space({p: [p] for p in pts}, dist, name="random")
    k = int(n_families or rng.integers(1, min(n, 4) + 1))
    labels = rng.permutation(np.arange(n) % k)
    specs = [FamilySpec(tuple(PointSet.of(pts[j]) for j in range(n) if labels[j] == i), None)
             for i in range(k)]
    funcs = {f"r{k}": RealFunction(dict(zip(pts, np.round(rng.uniform(-1, 1, n), 6).tolist())))
             for k in range(n_functions)}
    return Instance("random", space, specs, {}, funcs)


def singleton_instance(space: TopSpace, functions: dict | None = None) -> Instance:
    """Wrap a discrete space with the all-singletons covering."""
    specs = [FamilySpec(tuple(PointSet.of(p) for p in space.points), None)]
    return Instance(space.name, space, specs, {}, dict(functions or {}))

