"""JSON configuration documents: loading, validation and object construction.

Schema (version 1)::

    {
      "schema_version": 1,
      "name": "...",
      "universe": ["a", "b", "c"],
      "class": {"kind": "max_size" | "exact_size" | "ordered", "size": 3}
             | {"kind": "explicit", "members": [["a", "b"], ...]},
      "granularities": {"U": {"kind": "unbounded"},
                        "G": {"kind": "custom", "edges": [[0, 1], ...]}},
      "maps": {"p1": {"kind": "universe_split", "records": ["a"]},
               "o1": {"kind": "order_split", "ids": [1, 2]},
               "f":  {"kind": "record_projection", "records": ["a", "b"]},
               "id": {"kind": "identity"},
               "t":  {"kind": "explicit", "target": {<class>, "universe": [...]}, "image": [...]}},
      "steps": [{"name": "s1", "map": "p1", "flavor": "pure", "eps": 0.5,
                 "metric": "U", "dependent": false}],
      "mode": "independent" | "adaptive",
      "partition": true,
      "granularity": "U",
      "metric": "symmetric_difference",
      "verification": {"mechanisms": [{"step": "s1", "kind": "geometric", "eps": 0.5,
                                       "query": "count", "truncation": [-20, 23]}],
                       "pairs": "all" | "neighbors",
                       "granularity": "B",
                       "claims": [{"flavor": "pure", "eps": 1, "metric": "B"}],
                       "diagnose": true,
                       "postprocess_checks": 0,
                       "tolerance_profile": "default"}
    }

Step budgets by flavour: ``pure`` takes ``eps``; ``approximate`` takes ``eps``
and ``delta``; ``zero_concentrated`` takes ``rho``; ``gaussian`` takes ``mu``.
A step ``metric`` names a declared granularity (instantiated on the step
domain with the same kind) or ``symmetric_difference``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bounds import Guarantee
from .composition import CompositionPlan, PlanStep
from .errors import ParseError, SchemaVersionMismatch, UnresolvedReference
from .metrics import MapBetweenClasses, explicit_map, identity_map, order_block, record_projection
from .space import (
    BUILTIN_GRANULARITIES,
    ClassSpec,
    Database,
    DatabaseClass,
    Granularity,
    Metric,
    builtin_granularity,
    canonical_metric,
    enumerate_class,
    symmetric_difference_metric,
)
from .variants import approximate_guarantee, gaussian_guarantee, pure_guarantee, zc_guarantee

SCHEMA_VERSION = 1
FLAVOR_BUDGETS = {
    "pure": ("eps",),
    "approximate": ("eps", "delta"),
    "zero_concentrated": ("rho",),
    "gaussian": ("mu",),
}
MAP_KINDS = ("identity", "universe_split", "record_projection", "order_split", "explicit")
MECHANISM_KINDS = ("geometric", "discrete_gaussian", "binned_gaussian", "randomized_response", "counting")
SYMMETRIC_DIFFERENCE = "symmetric_difference"


@dataclass(frozen=True)
class ConfigDocument:
    """A validated configuration; ``raw`` is the parsed JSON object."""

    raw: dict
    path: str | None = None

    @property
    def name(self) -> str:
        return self.raw.get("name", Path(self.path).stem if self.path else "config")

    def get(self, key, default=None):
        return self.raw.get(key, default)


def _line_of(text: str, needle: str) -> int | None:
    for k, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return k
    return None


def parse_config(text: str, path: str | None = None) -> ConfigDocument:
    """Parse and validate a configuration from JSON text.

    Raises:
        ParseError: malformed JSON or an invalid field (with line when known).
        SchemaVersionMismatch: unsupported ``schema_version``.
        UnresolvedReference: a step, partition or verification entry names an
            undefined map, granularity or step.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object")
    doc = ConfigDocument(raw, path)
    _validate(doc, text)
    return doc


def load_config(path) -> ConfigDocument:
    """Read and validate the configuration at ``path``."""
    p = Path(path)
    return parse_config(p.read_text(), str(p))


def _require(cond: bool, message: str, text: str, fld: str, needle: str | None = None):
    if not cond:
        raise ParseError(message, line=_line_of(text, needle or f'"{fld.split(".")[-1]}"'), field=fld)


def _validate(doc: ConfigDocument, text: str) -> None:
    raw = doc.raw
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    uni = raw.get("universe")
    _require(isinstance(uni, list) and all(isinstance(x, str) for x in uni), "universe must be a list of labels", text, "universe")
    cls = raw.get("class")
    _require(isinstance(cls, dict) and cls.get("kind") in ("max_size", "exact_size", "ordered", "explicit"),
             "class.kind must be max_size, exact_size, ordered or explicit", text, "class")

    grans = raw.get("granularities", {})
    _require(isinstance(grans, dict), "granularities must be an object", text, "granularities")
    for key, g in grans.items():
        kind = g.get("kind") if isinstance(g, dict) else None
        _require(kind in BUILTIN_GRANULARITIES + ("custom",), f"granularity {key!r} has unknown kind", text, f"granularities.{key}", f'"{key}"')
        if kind == "custom":
            _require(isinstance(g.get("edges"), list), f"custom granularity {key!r} needs edges", text, f"granularities.{key}", f'"{key}"')

    maps = raw.get("maps", {})
    _require(isinstance(maps, dict), "maps must be an object", text, "maps")
    for key, m in maps.items():
        kind = m.get("kind") if isinstance(m, dict) else None
        _require(kind in MAP_KINDS, f"map {key!r} has unknown kind {kind!r}", text, f"maps.{key}", f'"{key}"')

    steps = raw.get("steps")
    _require(isinstance(steps, list) and steps, "steps must be a non-empty list", text, "steps")
    names = set()
    for k, s in enumerate(steps):
        fld = f"steps[{k}]"
        _require(isinstance(s, dict), "each step must be an object", text, fld, '"steps"')
        name = s.get("name", f"s{k + 1}")
        names.add(name)
        ref = s.get("map")
        if ref not in maps:
            raise UnresolvedReference(str(ref), "map")
        flavor = s.get("flavor")
        _require(flavor in FLAVOR_BUDGETS, f"step {name!r} has unknown flavor {flavor!r}", text, f"{fld}.flavor", f'"{flavor}"')
        for b in FLAVOR_BUDGETS[flavor]:
            v = s.get(b)
            _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0,
                     f"step {name!r} needs a non-negative {b}", text, f"{fld}.{b}", f'"{b}"')
        metric = s.get("metric")
        if metric != SYMMETRIC_DIFFERENCE and metric not in grans:
            raise UnresolvedReference(str(metric), "metric")
    if raw.get("mode", "independent") not in ("independent", "adaptive"):
        raise ParseError("mode must be independent or adaptive", line=_line_of(text, '"mode"'), field="mode")
    for key in ("granularity",):
        if key in raw and raw[key] not in grans:
            raise UnresolvedReference(str(raw[key]), "granularity")
    if "metric" in raw and raw["metric"] != SYMMETRIC_DIFFERENCE and raw["metric"] not in grans:
        raise UnresolvedReference(str(raw["metric"]), "metric")

    ver = raw.get("verification")
    if ver is not None:
        _require(isinstance(ver, dict), "verification must be an object", text, "verification")
        for k, mech in enumerate(ver.get("mechanisms", [])):
            if mech.get("step") not in names:
                raise UnresolvedReference(str(mech.get("step")), "step")
            _require(mech.get("kind") in MECHANISM_KINDS, f"unknown mechanism kind {mech.get('kind')!r}", text,
                     f"verification.mechanisms[{k}].kind", f'"{mech.get("kind")}"')
        if "granularity" in ver and ver["granularity"] not in grans:
            raise UnresolvedReference(str(ver["granularity"]), "granularity")
        _require(ver.get("pairs", "all") in ("all", "neighbors"), "pairs must be all or neighbors", text, "verification.pairs")
        for c in ver.get("claims", []):
            if c.get("flavor") not in FLAVOR_BUDGETS:
                raise ParseError(f"claim has unknown flavor {c.get('flavor')!r}", field="verification.claims")
            metric = c.get("metric")
            if metric != SYMMETRIC_DIFFERENCE and metric not in grans:
                raise UnresolvedReference(str(metric), "metric")


# ---------------------------------------------------------------------------
# construction


def _class_from(spec: dict, universe: list[str]) -> DatabaseClass:
    kind = spec["kind"]
    uni = spec.get("universe", universe)
    cap = spec.get("cap", 20_000)
    if kind == "explicit":
        ordered = spec.get("ordered", False)
        members = [Database.ordered(m) if ordered else Database.of(m) for m in spec["members"]]
        return enumerate_class(ClassSpec.explicit(uni, members, cap=cap))
    return enumerate_class(ClassSpec(kind, tuple(uni), int(spec["size"]), cap=cap))


@dataclass
class BuiltConfig:
    """Library objects constructed from a configuration."""

    doc: ConfigDocument
    domain: DatabaseClass
    granularities: dict[str, Granularity]
    maps: dict[str, MapBetweenClasses]
    plan: CompositionPlan
    step_names: list[str]
    step_metrics: list[Metric]
    flavor: str
    budgets: list[dict]
    extras: dict[str, Any] = field(default_factory=dict)


def metric_on(class_ref: DatabaseClass, ref: str, grans: dict[str, Granularity]) -> Metric:
    """Instantiate the metric named ``ref`` on ``class_ref``."""
    if ref == SYMMETRIC_DIFFERENCE:
        return symmetric_difference_metric(class_ref)
    g = grans[ref]
    if g.class_ref == class_ref:
        return canonical_metric(g)
    if g.name not in BUILTIN_GRANULARITIES:
        raise ParseError(f"custom granularity {ref!r} only exists on the plan domain", field="metric")
    return canonical_metric(builtin_granularity(class_ref, g.name))


def guarantee_from(step: dict, d: Metric) -> Guarantee:
    flavor = step["flavor"]
    if flavor == "pure":
        return pure_guarantee(d, step["eps"])
    if flavor == "approximate":
        return approximate_guarantee(d, step["eps"], step["delta"])
    if flavor == "zero_concentrated":
        return zc_guarantee(d, step["rho"])
    return gaussian_guarantee(d, step["mu"])


def build(doc: ConfigDocument) -> BuiltConfig:
    """Construct the class, granularities, maps and plan of ``doc``."""
    raw = doc.raw
    universe = raw["universe"]
    domain = _class_from(raw["class"], universe)
    grans: dict[str, Granularity] = {}
    for key, g in raw.get("granularities", {}).items():
        if g["kind"] == "custom":
            grans[key] = Granularity.from_edges(domain, [tuple(e) for e in g["edges"]], g.get("name", key))
        else:
            grans[key] = builtin_granularity(domain, g["kind"])
    maps: dict[str, MapBetweenClasses] = {}
    for key, m in raw.get("maps", {}).items():
        kind = m["kind"]
        if kind == "identity":
            maps[key] = identity_map(domain, key)
        elif kind in ("universe_split", "record_projection"):
            maps[key] = record_projection(domain, m["records"], name=key, kind=kind)
        elif kind == "order_split":
            maps[key] = order_block(domain, m["ids"], key)
        else:
            target = _class_from(m["target"], m["target"].get("universe", universe))
            maps[key] = explicit_map(domain, target, m["image"], key)

    steps, names, metrics, budgets = [], [], [], []
    flavors = set()
    for k, s in enumerate(raw["steps"]):
        f = maps[s["map"]]
        dep = bool(s.get("dependent", False))
        d = metric_on(f.source if dep else f.target, s["metric"], grans)
        g = guarantee_from(s, d)
        name = s.get("name", f"s{k + 1}")
        steps.append(PlanStep(f, g, dep, name))
        names.append(name)
        metrics.append(d)
        budgets.append({b: float(s[b]) for b in FLAVOR_BUDGETS[s["flavor"]]})
        flavors.add(s["flavor"])
    if flavors <= {"pure", "approximate"} and len(flavors) == 2:
        flavor = "approximate"
    elif len(flavors) == 1:
        flavor = flavors.pop()
    else:
        raise ParseError(f"steps mix incompatible flavours {sorted(flavors)}", field="steps")
    plan = CompositionPlan(domain, tuple(steps), raw.get("mode", "independent"))
    return BuiltConfig(doc, domain, grans, maps, plan, names, metrics, flavor, budgets)
