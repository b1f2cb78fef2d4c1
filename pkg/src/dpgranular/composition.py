"""Composed bounds for independent and adaptive plans of pure d-private steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .bounds import Bound, Guarantee, as_matrix
from .errors import (
    DependencyFlagMissing,
    FlavorMismatch,
    NeedTwoBlocks,
    NotASubsetMap,
    PreconditionFailed,
)
from .metrics import MapBetweenClasses, MetricType, metric_type, scale_matrix, sensitivity
from .space import (
    BUILTIN_GRANULARITIES,
    DatabaseClass,
    Granularity,
    Metric,
    builtin_granularity,
    canonical_metric,
    metric_label,
    same_class,
)

MODES = ("independent", "adaptive")

# tolerance for comparing step guarantees against declared budgets
_BUDGET_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class PlanStep:
    """One mechanism in a plan.

    Attributes:
        map: preprocessing map out of the plan domain.
        guarantee: over ``map.target`` for variable-domain steps, over the plan
            domain when ``dependent`` is set.
        dependent: common-domain flag (the step mechanism only sees ``map(D)``).
        name: display label.
    """

    map: MapBetweenClasses
    guarantee: Guarantee
    dependent: bool = False
    name: str = ""

    def __post_init__(self):
        expected = self.map.source if self.dependent else self.map.target
        same_class(self.guarantee.class_ref, expected, "step guarantee and its domain")


@dataclass(frozen=True, eq=False)
class CompositionPlan:
    """An ordered sequence of steps over a shared domain."""

    domain: DatabaseClass
    steps: tuple[PlanStep, ...]
    mode: str = "independent"

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not steps:
            raise ValueError("a plan needs at least one step")
        for s in steps:
            same_class(s.map.source, self.domain, "step map and plan domain")

    @property
    def maps(self) -> list[MapBetweenClasses]:
        return [s.map for s in self.steps]

    @property
    def all_dependent(self) -> bool:
        return all(s.dependent for s in self.steps)

    @property
    def none_dependent(self) -> bool:
        return not any(s.dependent for s in self.steps)


def _mode_label(plan: CompositionPlan) -> str:
    return "adaptive" if plan.mode == "adaptive" else "independent"


def _require_flavor(plan: CompositionPlan, flavors: tuple[str, ...]) -> None:
    for k, s in enumerate(plan.steps):
        if s.guarantee.flavor not in flavors:
            raise FlavorMismatch(f"step {k} has flavour {s.guarantee.flavor}, expected {'/'.join(flavors)}")


def _require_variable_domain(plan: CompositionPlan) -> None:
    if not plan.none_dependent:
        raise PreconditionFailed("variable-domain steps", "a step is marked dependent; use the common-domain rule")


def _require_common_domain(plan: CompositionPlan) -> None:
    for k, s in enumerate(plan.steps):
        if not s.dependent:
            raise DependencyFlagMissing(f"step {k} is not marked dependent")


def sum_pullbacks(plan: CompositionPlan, matrices: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i M_i[f_i(D), f_i(D')]`` over the plan domain."""
    n = len(plan.domain)
    total = np.zeros((n, n))
    for s, m in zip(plan.steps, matrices):
        total = total + s.map.pullback(m)
    return total


def compose_metrics(plan: CompositionPlan) -> Bound:
    """Sum of pulled-back step metrics; identical for independent and adaptive plans."""
    _require_flavor(plan, ("pure",))
    _require_variable_domain(plan)
    values = sum_pullbacks(plan, [s.guarantee.values for s in plan.steps])
    return Bound(plan.domain, values, True, f"{_mode_label(plan)} composition")


def minimum_privacy_matrix(d: np.ndarray, f: MapBetweenClasses) -> np.ndarray:
    labels, count = f.fiber_labels()
    fib = kernels.fiber_min(d, labels, count)
    return fib[np.ix_(labels, labels)]


def minimum_privacy(d: Metric | Bound, f: MapBetweenClasses) -> Bound:
    """Fibre-wise minimum ``d^f(D, D') = min{d(E, E') : f(E) = f(D), f(E') = f(D')}``."""
    same_class(d.class_ref, f.source, "metric and map source")
    return Bound(d.class_ref, minimum_privacy_matrix(as_matrix(d), f), False, "minimum privacy")


def compose_common_domain(plan: CompositionPlan) -> Bound:
    """``sum_i d_i^{f_i}`` for dependent steps whose guarantees live on the plan domain."""
    _require_flavor(plan, ("pure",))
    _require_common_domain(plan)
    n = len(plan.domain)
    values = np.zeros((n, n))
    for s in plan.steps:
        values = values + minimum_privacy_matrix(s.guarantee.values, s.map)
    return Bound(plan.domain, values, False, f"{_mode_label(plan)} composition (common domain)")


def selective_bound(plan: CompositionPlan) -> Bound:
    """``sum`` of ``d_i(D, D')`` over the steps whose map separates ``D`` and ``D'``."""
    _require_flavor(plan, ("pure",))
    _require_common_domain(plan)
    n = len(plan.domain)
    values = np.zeros((n, n))
    for s in plan.steps:
        differs = s.map.image[:, None] != s.map.image[None, :]
        values = values + np.where(differs, s.guarantee.values, 0.0)
    return Bound(plan.domain, values, False, "selective composition (common domain)")


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class PartitionReport:
    """Structural facts about a family of block maps.

    Attributes:
        disjoint: blocks never share a record occurrence.
        exhaustive: blocks cover every record occurrence.
        compatible_with: per granularity, whether neighbours differ in at most one block.
        max_I_p: per granularity, the largest number of differing blocks over neighbours.
        delta_p: per granularity, the block sensitivities ``Δp_i``.
        commutes: per metric, whether ``sum_i d*(p_i(D), p_i(D')) = d*(D, D')``.
    """

    disjoint: bool
    exhaustive: bool
    compatible_with: dict[str, bool] = field(default_factory=dict)
    max_I_p: dict[str, int] = field(default_factory=dict)
    delta_p: dict[str, tuple[float, ...]] = field(default_factory=dict)
    commutes: dict[str, bool] = field(default_factory=dict)


def _block_counts(f: MapBetweenClasses) -> np.ndarray:
    """Record counts of each ``f(D)`` in the source universe's columns."""
    src_cols = {x: c for c, x in enumerate(f.source.universe.records)}
    out = np.zeros((len(f.source), f.source.universe.size), dtype=np.int64)
    tgt = f.target.count_matrix
    for c, x in enumerate(f.target.universe.records):
        if x in src_cols:
            out[:, src_cols[x]] = tgt[f.image, c]
        elif tgt[:, c].any():
            raise NotASubsetMap(f"map {f.name} produces record {x!r} outside the source universe")
    return out


def _ordered_blocks(maps: Sequence[MapBetweenClasses]) -> bool:
    return all(m.kind == "order_split" for m in maps)


def block_granularity(g: Granularity, f: MapBetweenClasses) -> Granularity | None:
    """The granularity of the same kind on ``f.target`` (``None`` if undefined)."""
    if f.target is g.class_ref or f.target == g.class_ref:
        return g
    if g.name in BUILTIN_GRANULARITIES:
        try:
            return builtin_granularity(f.target, g.name)
        except Exception:
            return None
    return None


def _block_metric(mt: MetricType, target: DatabaseClass):
    try:
        return mt(target)
    except Exception:
        return None


def analyze_partition(
    maps: Sequence[MapBetweenClasses],
    granularities: Sequence[Granularity] = (),
    metrics: Sequence[MetricType | str] = (),
) -> PartitionReport:
    """Check disjointness, exhaustiveness, compatibility, block sensitivity and commutation.

    Raises:
        NotASubsetMap: some block is not a sub-multiset of its database.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one block map")
    source = maps[0].source
    for m in maps[1:]:
        same_class(m.source, source, "block maps")
    n = len(source)

    if _ordered_blocks(maps):
        sizes = np.array([db.size for db in source])
        id_sets = [set(m.block) for m in maps]
        disjoint = all(not (a & b) for i, a in enumerate(id_sets) for b in id_sets[i + 1:])
        covered = set().union(*id_sets)
        exhaustive = all(set(range(1, s + 1)) <= covered for s in sizes)
    else:
        counts = source.count_matrix
        blocks = [_block_counts(m) for m in maps]
        for m, b in zip(maps, blocks):
            if (b > counts).any():
                i = int(np.argwhere((b > counts).any(axis=1))[0, 0])
                raise NotASubsetMap(f"{m.name}({source[i]}) is not contained in {source[i]}")
        total = np.sum(blocks, axis=0)
        disjoint = bool((total <= counts).all())
        exhaustive = bool((total == counts).all())

    images = np.stack([m.image for m in maps])  # k x n
    compatible, max_ip, delta_p = {}, {}, {}
    for g in granularities:
        same_class(g.class_ref, source, "granularity and block source")
        pairs = np.array(list(g.pairs()), dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            ip = (images[:, pairs[:, 0]] != images[:, pairs[:, 1]]).sum(axis=0)
            max_ip[g.name] = int(ip.max())
        else:
            max_ip[g.name] = 0
        compatible[g.name] = max_ip[g.name] <= 1
        dg = canonical_metric(g)
        sens = []
        for m in maps:
            gb = block_granularity(g, m)
            sens.append(np.inf if gb is None else sensitivity(m, dg, canonical_metric(gb)).value)
        delta_p[g.name] = tuple(float(v) for v in sens)

    commutes = {}
    for spec in metrics:
        mt = metric_type(spec) if isinstance(spec, str) else spec
        whole = _block_metric(mt, source)
        parts = [_block_metric(mt, m.target) for m in maps]
        if whole is None or any(p is None for p in parts):
            commutes[mt.name] = False
            continue
        total = np.zeros((n, n))
        for m, p in zip(maps, parts):
            total = total + m.pullback(p.dist)
        commutes[mt.name] = bool(np.array_equal(total, whole.dist))
    return PartitionReport(disjoint, exhaustive, compatible, max_ip, delta_p, commutes)


def budget_from(values: np.ndarray, base: np.ndarray) -> float:
    """Smallest ``c`` with ``values <= c * base`` on pairs where ``base`` is finite."""
    mask = np.isfinite(base) & (base > 0)
    if np.any((base == 0) & (values > 0)):
        return np.inf
    if not mask.any():
        return 0.0
    return float((values[mask] / base[mask]).max())


def _step_base(step: PlanStep, g: Granularity) -> np.ndarray:
    dom = step.map.source if step.dependent else step.map.target
    gb = g if dom == g.class_ref else block_granularity(g, step.map)
    if gb is None:
        raise PreconditionFailed("step granularity", f"{g.name} is undefined on the domain of {step.map.name}")
    return canonical_metric(gb).dist


def check_disjoint_preconditions(plan: CompositionPlan, g: Granularity) -> tuple[PartitionReport, bool]:
    """Validate the hypotheses of the best-bound rules; return the report and the setting.

    The boolean is ``True`` for the common-domain setting.

    Raises:
        PreconditionFailed: naming the violated hypothesis.
    """
    same_class(g.class_ref, plan.domain, "granularity and plan domain")
    if plan.all_dependent:
        common = True
    elif plan.none_dependent:
        common = False
    else:
        raise PreconditionFailed("uniform dependency flags", "steps mix common-domain and variable-domain")
    report = analyze_partition(plan.maps, [g])
    if not report.disjoint:
        raise PreconditionFailed("disjoint blocks", "the maps do not form a partitioning function")
    if not report.compatible_with[g.name]:
        raise PreconditionFailed(
            f"d^G-compatibility ({g.name})",
            f"a {g.name} neighbour pair differs in {report.max_I_p[g.name]} blocks",
        )
    if not common:
        bad = [i for i, v in enumerate(report.delta_p[g.name]) if v > 1]
        if bad:
            raise PreconditionFailed(
                "block sensitivity Δp_i ≤ 1",
                f"blocks {[i + 1 for i in bad]} have Δp = {[report.delta_p[g.name][i] for i in bad]}",
            )
    return report, common


def _check_budget(step_values: np.ndarray, base: np.ndarray, eps: float, k: int) -> None:
    allowed = scale_matrix(base, eps)
    if np.any(step_values > allowed * (1 + _BUDGET_RTOL) + 1e-300):
        raise PreconditionFailed("step budget", f"step {k} guarantee exceeds {eps:g}·d^G")


def best_bound_disjoint(plan: CompositionPlan, granularity: Granularity, budgets: Sequence[float] | None = None) -> Bound:
    """``max_i eps_i · d^G`` for a compatible partition of ``eps_i d^G``-private steps.

    Variable-domain plans also need every ``Δp_i <= 1``; common-domain plans
    need compatibility only.

    Raises:
        PreconditionFailed: naming the violated hypothesis.
    """
    _require_flavor(plan, ("pure",))
    _, common = check_disjoint_preconditions(plan, granularity)
    eps = []
    for k, s in enumerate(plan.steps):
        base = _step_base(s, granularity)
        if budgets is None:
            eps.append(budget_from(s.guarantee.values, base))
        else:
            _check_budget(s.guarantee.values, base, float(budgets[k]), k)
            eps.append(float(budgets[k]))
    top = max(eps)
    if not np.isfinite(top):
        raise PreconditionFailed("step budget", "a step is not eps·d^G-private for any finite eps")
    d = canonical_metric(granularity)
    where = "best bound for disjoint inputs" + (" (common domain)" if common else "")
    return Bound(plan.domain, scale_matrix(d.dist, top), True, f"{_mode_label(plan)} {where}", top, d.name)


def bounded_parallel_bound(
    budgets: Sequence[float],
    partition: Sequence[MapBetweenClasses],
    sharp: bool = False,
):
    """``max_{i != j}(eps_i + eps_j) · d^B`` for dependent steps over a record partition.

    With ``sharp=True`` also returns the starred bound ``sum_i eps_i (d^B)^{p_i}``.

    Raises:
        NeedTwoBlocks: fewer than two blocks.
        PreconditionFailed: the maps are not a disjoint universe split.
    """
    partition = list(partition)
    budgets = [float(e) for e in budgets]
    if len(partition) < 2 or len(budgets) < 2:
        raise NeedTwoBlocks("bounded parallel composition needs at least two blocks")
    if len(budgets) != len(partition):
        raise ValueError("one budget per block")
    if any(m.kind != "universe_split" for m in partition):
        raise PreconditionFailed("universe-split partition", "blocks must be record projections D ∩ X_i")
    domain = partition[0].source
    report = analyze_partition(partition)
    if not report.disjoint:
        raise PreconditionFailed("disjoint blocks", "record blocks overlap")
    k = len(budgets)
    coef = max(budgets[i] + budgets[j] for i in range(k) for j in range(i + 1, k))
    d = canonical_metric(builtin_granularity(domain, "bounded"))
    bound = Bound(domain, scale_matrix(d.dist, coef), True, "bounded parallel composition", coef, d.name)
    if not sharp:
        return bound
    values = np.zeros_like(d.dist)
    for e, m in zip(budgets, partition):
        values = values + scale_matrix(minimum_privacy_matrix(d.dist, m), e)
    return bound, Bound(domain, values, False, "bounded parallel composition (sharp)")


def common_domain_plan(domain: DatabaseClass, maps: Sequence[MapBetweenClasses], guarantees, mode="independent"):
    """Plan of dependent steps, one per map."""
    return CompositionPlan(domain, tuple(PlanStep(m, g, True) for m, g in zip(maps, guarantees)), mode)


def variable_domain_plan(domain: DatabaseClass, maps: Sequence[MapBetweenClasses], guarantees, mode="independent"):
    """Plan of variable-domain steps, one per map."""
    return CompositionPlan(domain, tuple(PlanStep(m, g, False) for m, g in zip(maps, guarantees)), mode)


def canonical_on(class_ref: DatabaseClass, kind: str) -> Metric:
    """Shortcut for the canonical metric of a built-in granularity."""
    return canonical_metric(builtin_granularity(class_ref, kind))
