"""Plan execution and JSON guarantee reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .bounds import Bound, Guarantee
from .cache import cached_canonical_metric
from .composition import (
    analyze_partition,
    best_bound_disjoint,
    bounded_parallel_bound,
    compose_common_domain,
    compose_metrics,
)
from .config import SYMMETRIC_DIFFERENCE, BuiltConfig, ConfigDocument, build, guarantee_from, metric_on
from .errors import NeedTwoBlocks, PreconditionFailed
from .lab import (
    TOLERANCE_PROFILES,
    DiscreteMechanism,
    binned_gaussian_mechanism,
    counting_mechanism,
    diagnose_components,
    discrete_gaussian_mechanism,
    geometric_mechanism,
    post_process,
    precompose,
    product_compose,
    randomized_response,
    verify_guarantee,
)
from .metrics import connectivity_report, diameter, granularity_distance, identity_map, metric_type
from .space import BUILTIN_GRANULARITIES, symmetric_difference_metric
from .variants import (
    approx_best_bound_disjoint,
    approx_common_domain,
    approx_compose,
    gdp_common_domain,
    gdp_compose,
    gdp_parallel_bound,
    zc_best_bound_disjoint,
    zc_common_domain,
    zc_compose,
)

REPORT_FORMAT = "dpgranular-report/1"


def jsonable(obj):
    """Convert numpy scalars, tuples and infinities into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def summarize(values: np.ndarray) -> dict:
    """min / median / max over finite off-diagonal entries and the infinite-pair count."""
    n = values.shape[0]
    iu = np.triu_indices(n, 1)
    off = values[iu]
    fin = off[np.isfinite(off)]
    out = {"pairs": int(off.size), "inf_pairs": int(np.isinf(off).sum())}
    if fin.size:
        out.update(min=float(fin.min()), median=float(np.median(fin)), max=float(fin.max()))
    return out


@dataclass
class GuaranteeReport:
    """Everything a plan run produced, in a JSON-friendly shape."""

    name: str
    flavor: str
    mode: str
    results: list[dict] = field(default_factory=list)
    attempts: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    verification: list[dict] = field(default_factory=list)
    space: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def primary(self) -> dict:
        return self.results[0]

    @property
    def all_verified(self) -> bool:
        return all(v["passed"] for v in self.verification)

    def to_dict(self) -> dict:
        return jsonable(
            {
                "format": REPORT_FORMAT,
                "name": self.name,
                "flavor": self.flavor,
                "mode": self.mode,
                "results": self.results,
                "attempts": self.attempts,
                "warnings": self.warnings,
                "verification": self.verification,
                "space": self.space,
                "settings": self.settings,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# result entries


def _num(x: float) -> str:
    return repr(float(x))


def _closed_form_string(flavor: str, coef: float, base: str, delta: float | None = None, eps: float | None = None) -> str:
    if flavor == "zero_concentrated":
        return f"{_num(coef)}·({base})²"
    if flavor == "approximate" and delta is not None:
        return f"({_num(coef)}·{base}, {_num(delta)}·[{base}]_{_num(eps)})"
    return f"{_num(coef)}·{base}"


def _detect_closed_form(values: np.ndarray, candidates: dict[str, np.ndarray]) -> tuple[float, str] | None:
    for name, base in candidates.items():
        if not np.array_equal(np.isinf(values), np.isinf(base)):
            continue
        mask = np.isfinite(base) & (base > 0)
        if not mask.any():
            continue
        at = mask & (base == base[mask].min())
        c = float(np.max(values[at] / base[at]))
        expected = np.where(np.isinf(base), np.inf, c * base)
        with np.errstate(invalid="ignore"):
            if np.allclose(values[np.isfinite(base)], expected[np.isfinite(base)], rtol=1e-12, atol=0):
                return c, name
    return None


def _entry(role: str, g: Guarantee | Bound, flavor: str, candidates, extra: dict | None = None) -> dict:
    bound = g.d if isinstance(g, Guarantee) else g
    values = bound.values
    out: dict[str, Any] = {"role": role, "provenance": bound.provenance or (g.provenance if isinstance(g, Guarantee) else ""),
                           "flavor": flavor, "is_metric": bool(bound.is_metric)}
    coef, base = bound.coefficient, bound.base
    if flavor == "zero_concentrated":
        sq = g.squared if isinstance(g, Guarantee) else values ** 2
        hit = _detect_closed_form(sq, {k: v ** 2 for k, v in candidates.items()})
        if hit is not None:
            if coef is None:
                out["closed_form_detected"] = True
            coef, base = hit
        elif coef is not None:
            coef = coef ** 2
        out["summary"] = summarize(sq)
        out["summary_of"] = "d^2"
    else:
        if coef is None:
            hit = _detect_closed_form(values, candidates)
            if hit is not None:
                coef, base = hit
                out["closed_form_detected"] = True
        out["summary"] = summarize(values)
        out["summary_of"] = "d"
    if coef is not None:
        out["coefficient"] = coef
        out["base"] = base
        out["closed_form"] = _closed_form_string(flavor, coef, base)
    if isinstance(g, Guarantee) and g.delta is not None:
        out["delta_summary"] = summarize(g.delta)
        bad = g.meaningless_pairs()
        out["delta_ge_1_pairs"] = len(bad)
    if extra:
        out.update(extra)
    return out


def _candidates(built: BuiltConfig) -> dict[str, np.ndarray]:
    out = {}
    for g in built.granularities.values():
        d = cached_canonical_metric(g, built.extras.get("cache_dir"))
        out.setdefault(d.name, d.dist)
    if not built.domain.ordered:
        out.setdefault("d^△", symmetric_difference_metric(built.domain).dist)
    return out


# ---------------------------------------------------------------------------
# rule selection


def _attempt(report: GuaranteeReport, rule: str, fn):
    try:
        out = fn()
    except (PreconditionFailed, NeedTwoBlocks) as exc:
        cond = exc.condition if isinstance(exc, PreconditionFailed) else "at least two blocks"
        report.attempts.append({"rule": rule, "applied": False, "failed_condition": cond, "detail": str(exc)})
        return None
    report.attempts.append({"rule": rule, "applied": True})
    return out


def _generic(built: BuiltConfig) -> Guarantee:
    plan, flavor = built.plan, built.flavor
    dep = plan.all_dependent
    if flavor == "pure":
        b = compose_common_domain(plan) if dep else compose_metrics(plan)
        return Guarantee.pure(b, b.provenance)
    if flavor == "approximate":
        return approx_common_domain(plan) if dep else approx_compose(plan)
    if flavor == "zero_concentrated":
        return zc_common_domain(plan) if dep else zc_compose(plan)
    return gdp_common_domain(plan) if dep else gdp_compose(plan)


def _best(built: BuiltConfig, report: GuaranteeReport):
    """Closed-form rules for a declared partition; returns list of (role, guarantee, extra)."""
    raw = built.doc.raw
    if not raw.get("partition") or "granularity" not in raw and "metric" not in raw:
        return []
    plan, flavor = built.plan, built.flavor
    g = built.granularities.get(raw.get("granularity"))
    budgets = built.budgets
    if flavor == "pure":
        out = []
        if g is not None:
            b = _attempt(report, "best bound for disjoint inputs", lambda: best_bound_disjoint(plan, g, [x["eps"] for x in budgets]))
            if b is not None:
                return [("guarantee", Guarantee.pure(b, b.provenance), {})]
            if g.name == "bounded" and plan.all_dependent:
                res = _attempt(
                    report, "bounded parallel composition",
                    lambda: bounded_parallel_bound([x["eps"] for x in budgets], plan.maps, sharp=True),
                )
                if res is not None:
                    bound, sharp = res
                    out = [("guarantee", Guarantee.pure(bound, bound.provenance), {}),
                           ("sharp", Guarantee.pure(sharp, sharp.provenance), {})]
        return out
    if flavor == "approximate" and g is not None:
        pairs = [(x.get("eps", 0.0), x.get("delta", 0.0)) for x in budgets]
        res = _attempt(report, "approximate best bound for disjoint inputs", lambda: approx_best_bound_disjoint(plan, g, pairs))
        if res is not None:
            eps = res.d.coefficient
            dl = max(p[1] for p in pairs)
            return [("guarantee", res, {"closed_form": _closed_form_string("approximate", eps, res.d.base, dl, eps)})]
        return []
    if flavor == "zero_concentrated" and g is not None:
        res = _attempt(report, "zero-concentrated best bound for disjoint inputs",
                       lambda: zc_best_bound_disjoint(plan, g, [x["rho"] for x in budgets]))
        return [("guarantee", res, {})] if res is not None else []
    if flavor == "gaussian":
        metric = raw.get("metric")
        if metric is not None and metric != SYMMETRIC_DIFFERENCE:
            metric = built.granularities[metric].name
        res = _attempt(report, "Gaussian parallel rules",
                       lambda: gdp_parallel_bound(plan, metric=metric, granularity=g, mus=[x["mu"] for x in budgets]))
        if res is None:
            return []
        return [("guarantee", res.guarantee, {"rule": res.rule, "obligations": res.obligations}),
                ("d_tilde", Guarantee.gaussian(res.d_tilde, res.d_tilde.provenance), {})]
    return []


# ---------------------------------------------------------------------------
# space inspection


def inspect_space(built: BuiltConfig) -> dict:
    """Granularity statistics, pairwise granularity distances and partition facts."""
    cache_dir = built.extras.get("cache_dir")
    out: dict[str, Any] = {"members": len(built.domain), "universe": list(built.domain.universe.records),
                           "ordered": built.domain.ordered}
    grans = {}
    for key, g in built.granularities.items():
        d = cached_canonical_metric(g, cache_dir)
        grans[key] = {"kind": g.name, "edges": g.edge_count, "diameter": diameter(d),
                      "components": len(connectivity_report(d))}
    out["granularities"] = grans
    dists = {}
    for a, ga in built.granularities.items():
        for b, gb in built.granularities.items():
            if a != b:
                dists[f"dist({a},{b})"] = granularity_distance(ga, gb)
    out["granularity_distances"] = dists
    if built.doc.raw.get("partition"):
        maps = built.plan.maps
        mts = []
        if not built.domain.ordered:
            mts.append(metric_type(SYMMETRIC_DIFFERENCE))
        mts += [metric_type(g.name) for g in built.granularities.values() if g.name in BUILTIN_GRANULARITIES]
        seen, uniq = set(), []
        for mt in mts:
            if mt.name not in seen:
                seen.add(mt.name)
                uniq.append(mt)
        rep = analyze_partition(maps, list(built.granularities.values()), uniq)
        out["partition"] = {
            "blocks": [m.name for m in maps],
            "disjoint": rep.disjoint,
            "exhaustive": rep.exhaustive,
            "compatible_with": rep.compatible_with,
            "max_I_p": rep.max_I_p,
            "delta_p": rep.delta_p,
            "commutes": rep.commutes,
        }
    return out


# ---------------------------------------------------------------------------
# verification


def _query(spec, class_ref):
    q = spec.get("query", "count")
    if q == "count":
        return lambda db: db.size
    if isinstance(q, dict) and "count_records" in q:
        keep = set(q["count_records"])
        return lambda db: sum(m for x, m in db.counts if x in keep)
    raise ValueError(f"unsupported query {q!r}")


def build_mechanism(spec: dict, built: BuiltConfig, step_index: int) -> tuple[DiscreteMechanism, DiscreteMechanism]:
    """``(M*_i on the step's map target, M_i = M*_i ∘ f_i on the plan domain)``."""
    step = built.plan.steps[step_index]
    target = step.map.target
    kind = spec["kind"]
    q = _query(spec, target)
    if kind == "geometric":
        star = geometric_mechanism(target, q, spec["eps"], tuple(spec["truncation"]))
    elif kind == "discrete_gaussian":
        star = discrete_gaussian_mechanism(target, q, spec["sigma"], tuple(spec["truncation"]))
    elif kind == "binned_gaussian":
        star = binned_gaussian_mechanism(target, q, spec["sigma"], tuple(spec["truncation"]))
    elif kind == "randomized_response":
        star = randomized_response(target, q, spec["flip"], spec.get("labels"))
    else:
        star = counting_mechanism(target, identity_map(target))
    return star, precompose(star, step.map)


def _verdict(target: str, rep, class_ref) -> dict:
    out = {"target": target, "flavor": rep.flavor, "passed": bool(rep.passed), "slack": rep.slack,
           "tolerance": rep.tolerance}
    if rep.worst_pair is not None:
        i, j = rep.worst_pair
        out["worst_pair"] = [i, j]
        out["worst_pair_databases"] = [str(class_ref[i]), str(class_ref[j])]
    if rep.note:
        out["note"] = rep.note
    if rep.worst_alpha is not None:
        out["worst_alpha"] = rep.worst_alpha
    return out


def _postprocess_checks(joint: DiscreteMechanism, count: int, seed: int) -> dict:
    from .kernels import pairwise_max_divergence

    rng = np.random.default_rng(seed)
    base = pairwise_max_divergence(joint.log_table)
    worst = -np.inf
    for _ in range(count):
        labels = rng.integers(0, max(1, len(joint.outputs) // 2 + 1), size=len(joint.outputs))
        pp = post_process(joint, dict(zip(joint.outputs, labels.tolist())))
        after = pairwise_max_divergence(pp.log_table)
        with np.errstate(invalid="ignore"):
            gap = np.where(np.isinf(after) & np.isinf(base), 0.0, after - base)
        worst = max(worst, float(np.nanmax(gap)))
    return {"maps": count, "seed": seed, "max_divergence_increase": worst if count else 0.0}


def _run_verification(built: BuiltConfig, report: GuaranteeReport, chosen, pairs_override, profile, seed):
    ver = built.doc.raw.get("verification") or {}
    specs = {m["step"]: m for m in ver.get("mechanisms", [])}
    if not specs:
        return
    tol = TOLERANCE_PROFILES[profile or ver.get("tolerance_profile", "default")]
    scope_kind = pairs_override or ver.get("pairs", "all")
    scope = "all"
    if scope_kind == "neighbors":
        key = ver.get("granularity", built.doc.raw.get("granularity"))
        if key is None:
            raise PreconditionFailed("neighbour scope", "no granularity declared for --pairs neighbors")
        scope = built.granularities[key]
    domain = built.domain
    mechs = []
    for k, (name, step) in enumerate(zip(built.step_names, built.plan.steps)):
        if name not in specs:
            continue
        star, pulled = build_mechanism(specs[name], built, k)
        if step.dependent:
            rep = verify_guarantee(pulled, step.guarantee, "all", tol)
            report.verification.append(_verdict(f"step {name}", rep, domain))
        else:
            rep = verify_guarantee(star, step.guarantee, "all", tol)
            report.verification.append(_verdict(f"step {name}", rep, step.map.target))
        mechs.append(pulled)
    if len(mechs) != len(built.plan.steps):
        report.warnings.append("composed verification skipped: not every step has a mechanism")
        return
    joint = product_compose(mechs)
    for role, g, _ in chosen:
        rep = verify_guarantee(joint, g, scope, tol)
        report.verification.append(_verdict(f"composed vs {role}", rep, domain))
    claims = []
    for k, c in enumerate(ver.get("claims", [])):
        d = metric_on(domain, c["metric"], built.granularities)
        g = guarantee_from(c, d)
        claims.append(g)
        rep = verify_guarantee(joint, g, scope, tol)
        report.verification.append(_verdict(f"composed vs claim {k + 1}", rep, domain))
    if ver.get("diagnose") and claims:
        for k, rep in enumerate(diagnose_components(joint, claims[0], scope, tol)):
            report.verification.append(_verdict(f"marginal {k + 1} vs claim 1", rep, domain))
    count = int(ver.get("postprocess_checks", 0))
    if count:
        report.settings["postprocess"] = _postprocess_checks(joint, count, seed)


def run_plan(
    cfg: ConfigDocument | BuiltConfig,
    verify: bool = False,
    pairs: str | None = None,
    tolerance_profile: str | None = None,
    seed: int = 0,
    cache_dir=None,
) -> GuaranteeReport:
    """Compose the configured plan, try closed-form rules, and optionally verify."""
    built = cfg if isinstance(cfg, BuiltConfig) else build(cfg)
    built.extras["cache_dir"] = cache_dir
    report = GuaranteeReport(built.doc.name, built.flavor, built.plan.mode)
    report.settings = {"verify": verify, "pairs": pairs or (built.doc.raw.get("verification") or {}).get("pairs", "all"),
                       "tolerance_profile": tolerance_profile or "default", "seed": seed}
    cands = _candidates(built)
    chosen = _best(built, report)
    generic = _generic(built)
    failed = [a["failed_condition"] for a in report.attempts if not a["applied"]]
    if chosen:
        for role, g, extra in chosen:
            report.results.append(_entry(role, g, built.flavor, cands, extra))
        report.results.append(_entry("composed", generic, built.flavor, cands))
        chosen = chosen + [("composed", generic, {})]
    else:
        extra = {"fallback_from": failed} if failed else {}
        report.results.append(_entry("guarantee", generic, built.flavor, cands, extra))
        chosen = [("guarantee", generic, {})]
    for r in report.results:
        if r.get("delta_ge_1_pairs"):
            report.warnings.append(
                f"{r['role']}: {r['delta_ge_1_pairs']} pairs have composed delta >= 1 (effective delta = 1, no protection)"
            )
    report.space = inspect_space(built)
    if verify:
        _run_verification(built, report, chosen, pairs, tolerance_profile, seed)
    return report
