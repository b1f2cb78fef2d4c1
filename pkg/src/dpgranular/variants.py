"""Approximate, zero-concentrated and Gaussian guarantee flavours."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .bounds import Bound, Guarantee, as_matrix
from .composition import (
    CompositionPlan,
    _mode_label,
    _require_common_domain,
    _require_flavor,
    _require_variable_domain,
    _step_base,
    analyze_partition,
    budget_from,
    canonical_on,
    check_disjoint_preconditions,
    minimum_privacy_matrix,
    sum_pullbacks,
)
from .errors import DomainError, FlavorMismatch, NeedTwoBlocks, PreconditionFailed
from .metrics import MetricType, metric_type, scale_matrix
from .space import Granularity, Metric, canonical_metric

_BUDGET_RTOL = 1e-12


# ---------------------------------------------------------------------------
# delta scaling


@dataclass(frozen=True, eq=False)
class DeltaProfile:
    """Entrywise ``[d]_eps = (e^{eps d} - 1) / (e^eps - 1)``; ``d`` itself when ``eps = 0``."""

    eps: float
    values: np.ndarray


def delta_scaling_matrix(d: np.ndarray, eps: float) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if eps < 0 or np.isnan(eps):
        raise DomainError(f"eps must be non-negative, got {eps}")
    if eps == 0:
        return d.copy()
    with np.errstate(over="ignore"):
        return np.expm1(eps * d) / np.expm1(eps)


def delta_scaling(d: Metric | Bound | np.ndarray, eps: float) -> DeltaProfile:
    values = delta_scaling_matrix(as_matrix(d), float(eps))
    values.setflags(write=False)
    return DeltaProfile(float(eps), values)


# ---------------------------------------------------------------------------
# guarantee constructors on a base metric


def pure_guarantee(d: Metric | Bound, eps: float = 1.0) -> Guarantee:
    """``eps · d``-privacy."""
    return Guarantee.pure(_scaled(d, eps))


def approximate_guarantee(d: Metric | Bound, eps: float, delta: float) -> Guarantee:
    """``(eps · d, delta · [d]_eps)``-privacy."""
    slack = delta * delta_scaling_matrix(as_matrix(d), eps) if delta > 0 else np.zeros_like(as_matrix(d))
    return Guarantee.approximate(_scaled(d, eps), slack)


def zc_guarantee(d: Metric | Bound, rho: float) -> Guarantee:
    """``rho · d^2``-zCprivacy, stored through the base ``sqrt(rho) · d``."""
    if rho < 0:
        raise DomainError("rho must be non-negative")
    return Guarantee.zero_concentrated(_scaled(d, float(np.sqrt(rho))), square=scale_matrix(as_matrix(d) ** 2, float(rho)))


def gaussian_guarantee(d: Metric | Bound, mu: float) -> Guarantee:
    """``mu · d``-Gprivacy."""
    return Guarantee.gaussian(_scaled(d, mu))


def _scaled(d, c: float) -> Bound:
    vals = scale_matrix(as_matrix(d), float(c))
    is_metric = not isinstance(d, Bound) or d.is_metric
    base = d.name if isinstance(d, Metric) else (d.base if isinstance(d, Bound) else None)
    coef = float(c) if isinstance(d, Metric) else (d.coefficient * c if isinstance(d, Bound) and d.coefficient is not None else None)
    return Bound(d.class_ref, vals, is_metric, "", coef, base)


# ---------------------------------------------------------------------------
# approximate


def _approx_steps(plan: CompositionPlan) -> list[Guarantee]:
    _require_flavor(plan, ("approximate", "pure"))
    return [s.guarantee.as_approximate() for s in plan.steps]


def approx_compose(plan: CompositionPlan) -> Guarantee:
    """Sum the pulled-back distances and slacks of variable-domain steps.

    Entries whose composed slack reaches 1 are kept verbatim; see
    :meth:`Guarantee.meaningless_pairs`.
    """
    gs = _approx_steps(plan)
    _require_variable_domain(plan)
    d = sum_pullbacks(plan, [g.values for g in gs])
    delta = sum_pullbacks(plan, [g.delta for g in gs])
    prov = f"approximate {_mode_label(plan)} composition"
    return Guarantee.approximate(Bound(plan.domain, d, True, prov), delta, prov)


def approx_common_domain(plan: CompositionPlan) -> Guarantee:
    """``(sum d_i^{f_i}, sum delta_i^{f_i})`` for dependent steps.

    ``delta^f`` takes the least slack among the fibre pairs that minimise the distance.
    """
    gs = _approx_steps(plan)
    _require_common_domain(plan)
    n = len(plan.domain)
    d = np.zeros((n, n))
    delta = np.zeros((n, n))
    for s, g in zip(plan.steps, gs):
        labels, count = s.map.fiber_labels()
        best, best_delta = kernels.fiber_min_tiebreak(g.values, g.delta, labels, count)
        d = d + best[np.ix_(labels, labels)]
        delta = delta + best_delta[np.ix_(labels, labels)]
    prov = f"approximate {_mode_label(plan)} composition (common domain)"
    return Guarantee.approximate(Bound(plan.domain, d, False, prov), delta, prov)


def _approx_budget(g: Guarantee, base: np.ndarray) -> tuple[float, float]:
    eps = budget_from(g.values, base)
    prof = delta_scaling_matrix(base, eps)
    return eps, budget_from(g.delta, prof)


def approx_best_bound_disjoint(
    plan: CompositionPlan,
    granularity: Granularity,
    budgets: Sequence[tuple[float, float]] | None = None,
) -> Guarantee:
    """``(max eps_i · d^G, max delta_i · [d^G]_{max eps})`` for a compatible partition.

    Raises:
        PreconditionFailed: naming the violated hypothesis.
    """
    gs = _approx_steps(plan)
    _, common = check_disjoint_preconditions(plan, granularity)
    pairs = []
    for k, (s, g) in enumerate(zip(plan.steps, gs)):
        base = _step_base(s, granularity)
        if budgets is None:
            pairs.append(_approx_budget(g, base))
        else:
            eps, dl = (float(v) for v in budgets[k])
            allowed_d = scale_matrix(base, eps)
            allowed_delta = dl * delta_scaling_matrix(base, eps)
            with np.errstate(invalid="ignore"):
                too_big = np.any(g.values > allowed_d * (1 + _BUDGET_RTOL)) or np.any(
                    g.delta > np.where(np.isnan(allowed_delta), np.inf, allowed_delta) * (1 + _BUDGET_RTOL) + 1e-300
                )
            if too_big:
                raise PreconditionFailed("step budget", f"step {k} exceeds ({eps:g}·d^G, {dl:g}·[d^G]_{eps:g})")
            pairs.append((eps, dl))
    eps = max(p[0] for p in pairs)
    dl = max(p[1] for p in pairs)
    d = canonical_metric(granularity)
    where = "approximate best bound for disjoint inputs" + (" (common domain)" if common else "")
    bound = Bound(plan.domain, scale_matrix(d.dist, eps), True, where, eps, d.name)
    delta = dl * delta_scaling_matrix(d.dist, eps) if dl > 0 else np.zeros_like(d.dist)
    return Guarantee.approximate(bound, delta, where)


# ---------------------------------------------------------------------------
# zero-concentrated


def _l2(total_sq: np.ndarray) -> np.ndarray:
    return np.sqrt(total_sq)


def zc_compose(plan: CompositionPlan) -> Guarantee:
    """Base ``sqrt(sum d_i(f_i D, f_i D')^2)`` so that the squared bound adds up."""
    _require_flavor(plan, ("zero_concentrated",))
    _require_variable_domain(plan)
    prov = f"zero-concentrated {_mode_label(plan)} composition"
    total = sum_pullbacks(plan, [s.guarantee.squared for s in plan.steps])
    return Guarantee.zero_concentrated(Bound(plan.domain, _l2(total), True, prov), prov, total)


def zc_common_domain(plan: CompositionPlan) -> Guarantee:
    """Base ``sqrt(sum (d_i^{f_i})^2)`` for dependent steps."""
    _require_flavor(plan, ("zero_concentrated",))
    _require_common_domain(plan)
    n = len(plan.domain)
    total = np.zeros((n, n))
    for s in plan.steps:
        total = total + minimum_privacy_matrix(s.guarantee.squared, s.map)
    prov = f"zero-concentrated {_mode_label(plan)} composition (common domain)"
    return Guarantee.zero_concentrated(Bound(plan.domain, _l2(total), False, prov), prov, total)


def zc_best_bound_disjoint(plan: CompositionPlan, granularity: Granularity, rhos: Sequence[float] | None = None) -> Guarantee:
    """``max rho_i · (d^G)^2`` for a compatible partition.

    Raises:
        PreconditionFailed: naming the violated hypothesis.
    """
    _require_flavor(plan, ("zero_concentrated",))
    _, common = check_disjoint_preconditions(plan, granularity)
    found = []
    for k, s in enumerate(plan.steps):
        base = _step_base(s, granularity)
        if rhos is None:
            found.append(budget_from(s.guarantee.squared, base ** 2))
        else:
            rho = float(rhos[k])
            if np.any(s.guarantee.squared > scale_matrix(base ** 2, rho) * (1 + 1e-9)):
                raise PreconditionFailed("step budget", f"step {k} exceeds {rho:g}·(d^G)^2")
            found.append(rho)
    rho = max(found)
    d = canonical_metric(granularity)
    where = "zero-concentrated best bound for disjoint inputs" + (" (common domain)" if common else "")
    root = float(np.sqrt(rho))
    return Guarantee.zero_concentrated(
        Bound(plan.domain, scale_matrix(d.dist, root), True, where, root, d.name), where, scale_matrix(d.dist ** 2, rho)
    )


# ---------------------------------------------------------------------------
# Gaussian


def gdp_compose(plan: CompositionPlan) -> Guarantee:
    """Entrywise l2 norm of the pulled-back step distances."""
    _require_flavor(plan, ("gaussian",))
    _require_variable_domain(plan)
    prov = f"Gaussian {_mode_label(plan)} composition"
    values = _l2(sum_pullbacks(plan, [s.guarantee.values ** 2 for s in plan.steps]))
    return Guarantee.gaussian(Bound(plan.domain, values, True, prov), prov)


def gdp_common_domain(plan: CompositionPlan) -> Guarantee:
    """Entrywise l2 norm of the step minimum-privacy bounds."""
    _require_flavor(plan, ("gaussian",))
    _require_common_domain(plan)
    n = len(plan.domain)
    total = np.zeros((n, n))
    for s in plan.steps:
        total = total + minimum_privacy_matrix(s.guarantee.values, s.map) ** 2
    prov = f"Gaussian {_mode_label(plan)} composition (common domain)"
    return Guarantee.gaussian(Bound(plan.domain, _l2(total), False, prov), prov)


@dataclass(frozen=True, eq=False)
class GaussianParallelResult:
    """Outcome of :func:`gdp_parallel_bound`.

    Attributes:
        d_tilde: the exact l2-composed bound.
        guarantee: the closed-form guarantee ``coefficient · base``.
        coefficient: multiplier of the closed form.
        base: name of the metric the coefficient multiplies.
        rule: name of the rule that justified the closed form.
        obligations: each checked hypothesis and whether it held.
    """

    d_tilde: Bound
    guarantee: Guarantee
    coefficient: float
    base: str
    rule: str
    obligations: dict[str, bool] = field(default_factory=dict)


def _gauss_budgets(plan: CompositionPlan, base_for, mus):
    if mus is not None:
        return [float(m) for m in mus]
    return [budget_from(s.guarantee.values, base_for(s)) for s in plan.steps]


def gdp_parallel_bound(
    plan: CompositionPlan,
    metric: MetricType | str | None = None,
    granularity: Granularity | None = None,
    mus: Sequence[float] | None = None,
) -> GaussianParallelResult:
    """Closed-form Gaussian bound for a partitioned plan, plus the exact ``d̃``.

    Rules are tried in order:

    1. the partition commutes with ``metric``: ``max mu_i · d*``;
    2. ``granularity``-compatible (and ``Δp_i <= 1`` for variable-domain plans):
       ``max mu_i · d^G``;
    3. bounded granularity, dependent steps over a universe split:
       ``max_{i != j} sqrt(mu_i^2 + mu_j^2) · d^B``.

    Raises:
        PreconditionFailed: no rule applies; the message lists every missing condition.
    """
    _require_flavor(plan, ("gaussian",))
    if plan.none_dependent:
        d_tilde = gdp_compose(plan).d
    elif plan.all_dependent:
        d_tilde = gdp_common_domain(plan).d
    else:
        raise PreconditionFailed("uniform dependency flags")
    obligations: dict[str, bool] = {"common_domain": plan.all_dependent}
    missing = []

    if metric is not None:
        mt = metric_type(metric) if isinstance(metric, str) else metric
        report = analyze_partition(plan.maps, [], [mt])
        ok = report.disjoint and report.commutes[mt.name]
        obligations[f"commutes[{mt.name}]"] = report.commutes[mt.name]
        obligations["disjoint"] = report.disjoint
        if ok:
            whole = mt(plan.domain)
            coefs = _gauss_budgets(plan, lambda s: mt(s.map.source if s.dependent else s.map.target).dist, mus)
            mu = max(coefs)
            return _gauss_result(plan, d_tilde, whole, mu, "Gaussian parallel composition", obligations)
        missing.append(f"commutation with {mt.name}")

    if granularity is not None:
        try:
            _, common = check_disjoint_preconditions(plan, granularity)
            obligations[f"compatible[{granularity.name}]"] = True
            if not common:
                obligations["delta_p<=1"] = True
            coefs = _gauss_budgets(plan, lambda s: _step_base(s, granularity), mus)
            where = "Gaussian best bound for disjoint inputs" + (" (common domain)" if common else "")
            return _gauss_result(plan, d_tilde, canonical_metric(granularity), max(coefs), where, obligations)
        except PreconditionFailed as exc:
            obligations[exc.condition] = False
            missing.append(exc.condition)

        if granularity.name == "bounded":
            split = all(s.map.kind == "universe_split" for s in plan.steps)
            obligations["universe_split"] = split
            if not plan.all_dependent:
                missing.append("dependent steps for bounded pairwise rule")
            elif not split:
                missing.append("universe-split blocks for bounded pairwise rule")
            elif len(plan.steps) < 2:
                raise NeedTwoBlocks("the bounded pairwise rule needs at least two blocks")
            else:
                report = analyze_partition(plan.maps)
                obligations["disjoint"] = report.disjoint
                if report.disjoint:
                    coefs = _gauss_budgets(plan, lambda s: _step_base(s, granularity), mus)
                    k = len(coefs)
                    mu = max(np.hypot(coefs[i], coefs[j]) for i in range(k) for j in range(i + 1, k))
                    return _gauss_result(
                        plan, d_tilde, canonical_metric(granularity), float(mu), "Gaussian bounded parallel composition", obligations
                    )
                missing.append("disjoint blocks")
    if not missing:
        missing.append("a metric or granularity to close the bound against")
    raise PreconditionFailed("; ".join(missing), f"obligations: {obligations}")


def _gauss_result(plan, d_tilde, base: Metric, mu: float, rule: str, obligations):
    if not np.isfinite(mu):
        raise PreconditionFailed("step budget", "a step is not mu·d-Gprivate for any finite mu")
    closed = Bound(plan.domain, scale_matrix(base.dist, mu), True, rule, mu, base.name)
    return GaussianParallelResult(d_tilde, Guarantee.gaussian(closed, rule), mu, base.name, rule, dict(obligations))


def g_mu(mu: float, alpha):
    """Gaussian trade-off ``G_mu(alpha) = Phi(Phi^{-1}(1 - alpha) - mu)``.

    ``G_inf`` is identically zero.

    Raises:
        DomainError: ``mu < 0`` or ``alpha`` outside ``[0, 1]``.
    """
    a = np.asarray(alpha, dtype=float)
    if np.isnan(mu) or mu < 0:
        raise DomainError(f"mu must be non-negative, got {mu}")
    if np.isnan(a).any() or (a < 0).any() or (a > 1).any():
        raise DomainError("alpha must lie in [0, 1]")
    if np.isinf(mu):
        out = np.zeros_like(a)
    else:
        # Phi^{-1}(1 - a) = -Phi^{-1}(a) keeps accuracy for small a
        out = ndtr(-ndtri(a) - mu)
    return float(out) if out.ndim == 0 else out


def phi_inv_upper(alpha) -> np.ndarray:
    """``Phi^{-1}(1 - alpha)``."""
    return -ndtri(np.asarray(alpha, dtype=float))
