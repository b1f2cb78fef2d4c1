"""Finite mechanisms and the brute-force verification oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp

from . import kernels
from .bounds import Guarantee
from .errors import (
    DomainError,
    FlavorMismatch,
    NotATuple,
    OutcomeCapExceeded,
    PrefixMismatch,
    RangeTooSmall,
)
from .metrics import MapBetweenClasses
from .space import Database, DatabaseClass, Granularity, same_class
from .variants import phi_inv_upper

ZC_ALPHA_GRID = (1.25, 1.5, 2.0, 4.0, 8.0, 32.0)
GAUSSIAN_GRID_SIZE = 1001
OUTCOME_CAP = 1_000_000
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Tolerance:
    """Named comparison tolerances.

    Attributes:
        divergence: absolute slack for log-ratio, hockey-stick and Renyi checks.
        tradeoff: absolute slack for trade-off curve checks.
    """

    divergence: float = 1e-9
    tradeoff: float = 1e-3


TOLERANCE_PROFILES = {
    "default": Tolerance(1e-9, 1e-3),
    "strict": Tolerance(1e-12, 1e-4),
}


def _log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


@dataclass(frozen=True, eq=False)
class DiscreteMechanism:
    """Per-database output distributions over a finite output set.

    Attributes:
        class_ref: the database class (rows).
        outputs: output labels (columns).
        log_table: log-probabilities, ``-inf`` for zero mass.
        arity: number of coordinates when outputs are tuples, else ``None``.
        name: display label.
    """

    class_ref: DatabaseClass
    outputs: tuple
    log_table: np.ndarray
    arity: int | None = None
    name: str = "M"

    def __post_init__(self):
        lt = np.array(self.log_table, dtype=float, copy=True)
        outputs = tuple(self.outputs)
        if lt.shape != (len(self.class_ref), len(outputs)):
            raise ValueError(f"table must be {len(self.class_ref)}x{len(outputs)}, got {lt.shape}")
        if np.isnan(lt).any() or (lt > 1e-12).any():
            raise ValueError("log-probabilities must be <= 0 and not NaN")
        sums = np.exp(lt).sum(axis=1)
        if lt.size and np.abs(sums - 1).max() > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 (worst deviation {np.abs(sums - 1).max():.3g})")
        lt = np.minimum(lt, 0.0)
        lt.setflags(write=False)
        object.__setattr__(self, "log_table", lt)
        object.__setattr__(self, "outputs", outputs)

    @classmethod
    def from_table(cls, class_ref, outputs, table, arity=None, name="M") -> "DiscreteMechanism":
        table = np.asarray(table, dtype=float)
        if (table < 0).any():
            raise ValueError("probabilities must be non-negative")
        return cls(class_ref, tuple(outputs), _log(table), arity, name)

    @cached_property
    def table(self) -> np.ndarray:
        t = np.exp(self.log_table)
        t.setflags(write=False)
        return t

    def row(self, db: Database) -> np.ndarray:
        return self.table[self.class_ref.index(db)]

    def coordinates(self, label) -> tuple:
        return tuple(label) if self.arity is not None else (label,)

    def __repr__(self):
        return f"DiscreteMechanism({self.name}, n={len(self.class_ref)}, outputs={len(self.outputs)})"


def _query_values(class_ref: DatabaseClass, query) -> list:
    if callable(query):
        return [query(db) for db in class_ref]
    vals = list(query)
    if len(vals) != len(class_ref):
        raise ValueError("query needs one value per member")
    return vals


def randomized_response(class_ref: DatabaseClass, query, flip: float, labels: Sequence[Hashable] | None = None):
    """Report the true label with probability ``1 - flip``, else a uniform other label.

    Raises:
        DomainError: ``flip`` outside ``(0, 1)``.
    """
    if not 0 < flip < 1:
        raise DomainError("flip must lie strictly between 0 and 1")
    vals = _query_values(class_ref, query)
    labels = tuple(labels) if labels is not None else tuple(sorted(set(vals)))
    col = {l: c for c, l in enumerate(labels)}
    m = len(labels)
    table = np.zeros((len(vals), m))
    for i, v in enumerate(vals):
        if m == 1:
            table[i, 0] = 1.0
            continue
        table[i, :] = flip / (m - 1)
        table[i, col[v]] = 1.0 - flip
    return DiscreteMechanism.from_table(class_ref, labels, table, name=f"RR({flip:g})")


def _check_window(vals, truncation) -> tuple[int, int]:
    lo, hi = (int(v) for v in truncation)
    if lo > hi:
        raise RangeTooSmall("empty truncation window")
    if any(v < lo or v > hi for v in vals):
        raise RangeTooSmall(f"window [{lo}, {hi}] does not cover query values [{min(vals)}, {max(vals)}]")
    return lo, hi


def geometric_mechanism(class_ref: DatabaseClass, query, eps: float, truncation: tuple[int, int]):
    """Two-sided geometric noise ``Pr(v) ∝ e^{-eps |v - q|}`` with the tails folded onto the endpoints.

    Folding keeps log-ratios between rows exact at the endpoints.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    vals = [int(v) for v in _query_values(class_ref, query)]
    lo, hi = _check_window(vals, truncation)
    grid = np.arange(lo, hi + 1)
    r = math.exp(-eps)
    log_z = math.log1p(r) - math.log1p(-r)
    tail = -math.log1p(-r)
    out = np.empty((len(vals), grid.size))
    for i, q in enumerate(vals):
        row = -eps * np.abs(grid - q) - log_z
        if grid.size > 1:
            row[0] = -eps * (q - lo) + tail - log_z
            row[-1] = -eps * (hi - q) + tail - log_z
        else:
            row[0] = 0.0
        out[i] = row
    return DiscreteMechanism(class_ref, tuple(int(v) for v in grid), out, name=f"Geom({eps:g})")


def _lse_series(start: float, sigma: float, count: int) -> float:
    # log sum_{t >= 0} exp(-(start + t)^2 / (2 sigma^2)), truncated after ``count`` terms
    t = start + np.arange(count)
    return float(logsumexp(-(t ** 2) / (2 * sigma ** 2)))


def discrete_gaussian_mechanism(class_ref: DatabaseClass, query, sigma: float, truncation: tuple[int, int]):
    """Discrete Gaussian noise ``Pr(v) ∝ e^{-(v - q)^2 / (2 sigma^2)}``, tails folded onto the endpoints."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    vals = [int(v) for v in _query_values(class_ref, query)]
    lo, hi = _check_window(vals, truncation)
    grid = np.arange(lo, hi + 1)
    span = int(math.ceil(40 * sigma)) + 50
    log_z = float(logsumexp(-(np.arange(-span, span + 1) ** 2) / (2 * sigma ** 2)))
    out = np.empty((len(vals), grid.size))
    for i, q in enumerate(vals):
        if grid.size == 1:
            out[i] = 0.0
            continue
        row = -((grid - q) ** 2) / (2 * sigma ** 2)
        row[0] = _lse_series(q - lo, sigma, span + abs(q - lo))
        row[-1] = _lse_series(hi - q, sigma, span + abs(hi - q))
        row -= log_z
        out[i] = row - logsumexp(row)  # absorb the series truncation
    return DiscreteMechanism(class_ref, tuple(int(v) for v in grid), out, name=f"DGauss({sigma:g})")


def _log_interval(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log(Phi(b) - Phi(a))`` for ``a < b``, accurate in both tails."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log1p(-np.exp(llo - lhi))


def binned_gaussian_mechanism(class_ref: DatabaseClass, query, sigma: float, truncation: tuple[int, int]):
    """Continuous Gaussian noise rounded to the nearest integer, tails folded onto the endpoints.

    This is post-processing of ``q + N(0, sigma^2)``, so it inherits the exact
    Gaussian trade-off guarantee of the continuous mechanism.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    vals = [int(v) for v in _query_values(class_ref, query)]
    lo, hi = _check_window(vals, truncation)
    grid = np.arange(lo, hi + 1, dtype=float)
    out = np.empty((len(vals), grid.size))
    for i, q in enumerate(vals):
        a = (grid - 0.5 - q) / sigma
        b = (grid + 0.5 - q) / sigma
        a[0] = -np.inf
        b[-1] = np.inf
        out[i] = _log_interval(a, b)
        out[i] -= logsumexp(out[i])
    return DiscreteMechanism(class_ref, tuple(int(v) for v in grid), out, name=f"BinGauss({sigma:g})")


def deterministic_mechanism(class_ref: DatabaseClass, fn, name: str = "det") -> DiscreteMechanism:
    """Point mass on ``fn(D)``; outputs are the sorted distinct values."""
    vals = _query_values(class_ref, fn)
    labels = tuple(sorted(set(vals)))
    col = {l: c for c, l in enumerate(labels)}
    table = np.zeros((len(vals), len(labels)))
    table[np.arange(len(vals)), [col[v] for v in vals]] = 1.0
    return DiscreteMechanism.from_table(class_ref, labels, table, name=name)


def counting_mechanism(class_ref: DatabaseClass, f: MapBetweenClasses) -> DiscreteMechanism:
    """Point mass on ``|f(D)|``."""
    same_class(f.source, class_ref, "map source and mechanism class")
    sizes = [f.target[int(j)].size for j in f.image]
    return deterministic_mechanism(class_ref, sizes, name=f"|{f.name}|")


def precompose(m: DiscreteMechanism, f: MapBetweenClasses) -> DiscreteMechanism:
    """The mechanism ``D ↦ m(f(D))`` over ``f.source``."""
    same_class(f.target, m.class_ref, "map target and mechanism class")
    return DiscreteMechanism(f.source, m.outputs, m.log_table[f.image], m.arity, f"{m.name}∘{f.name}")


def _coords(m: DiscreteMechanism) -> list[tuple]:
    return [m.coordinates(o) for o in m.outputs]


def product_compose(mechanisms: Sequence[DiscreteMechanism], cap: int = OUTCOME_CAP) -> DiscreteMechanism:
    """Independent joint distribution; tuple outputs are flattened into one tuple.

    Raises:
        OutcomeCapExceeded: the joint output space exceeds ``cap``.
    """
    mechanisms = list(mechanisms)
    if not mechanisms:
        raise ValueError("need at least one mechanism")
    base = mechanisms[0].class_ref
    total = 1
    for m in mechanisms:
        same_class(m.class_ref, base, "composed mechanisms")
        total *= len(m.outputs)
    if total > cap:
        raise OutcomeCapExceeded(f"{total} joint outcomes exceed the cap of {cap}")
    logt = mechanisms[0].log_table
    labels = _coords(mechanisms[0])
    for m in mechanisms[1:]:
        logt = (logt[:, :, None] + m.log_table[:, None, :]).reshape(len(base), -1)
        labels = [a + b for a in labels for b in _coords(m)]
    arity = len(labels[0])
    return DiscreteMechanism(base, tuple(labels), logt, arity, "×".join(m.name for m in mechanisms))


@dataclass(frozen=True, eq=False)
class AdaptiveKernel:
    """Stage ``stage`` of an adaptive composition, as a finite table.

    Attributes:
        stage: zero-based stage index.
        outputs: stage output labels.
        table: maps each prefix of earlier stage outputs to an ``n x |outputs|``
            probability matrix (rows are databases).
    """

    stage: int
    outputs: tuple
    table: Mapping[tuple, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for prefix, mat in self.table.items():
            arr = np.array(mat, dtype=float, copy=True)
            if arr.ndim != 2 or arr.shape[1] != len(self.outputs):
                raise ValueError(f"kernel row for prefix {prefix} has the wrong width")
            if (arr < 0).any() or np.abs(arr.sum(axis=1) - 1).max() > ROW_SUM_TOL:
                raise ValueError(f"kernel rows for prefix {prefix} must be distributions")
            arr.setflags(write=False)
            frozen[tuple(prefix)] = arr
        object.__setattr__(self, "table", frozen)
        object.__setattr__(self, "outputs", tuple(self.outputs))


def adaptive_compose(class_ref: DatabaseClass, stages: Sequence[AdaptiveKernel], cap: int = OUTCOME_CAP):
    """Joint distribution of an adaptive composition by the chain rule over prefixes.

    Raises:
        PrefixMismatch: a stage is out of order, or lacks a prefix that has
            positive probability for some database.
        OutcomeCapExceeded: the joint output space exceeds ``cap``.
    """
    n = len(class_ref)
    total = 1
    for i, k in enumerate(stages):
        if k.stage != i:
            raise PrefixMismatch(f"stage {k.stage} supplied in position {i}")
        total *= len(k.outputs)
    if total > cap:
        raise OutcomeCapExceeded(f"{total} joint outcomes exceed the cap of {cap}")
    frontier = [((), np.zeros(n))]
    for k in stages:
        nxt = []
        for prefix, logrow in frontier:
            mat = k.table.get(prefix)
            if mat is None:
                if np.isfinite(logrow).any():
                    raise PrefixMismatch(f"stage {k.stage} has no row for reachable prefix {prefix}")
                block = np.full((n, len(k.outputs)), -np.inf)
            else:
                if mat.shape[0] != n:
                    raise PrefixMismatch(f"stage {k.stage} rows do not match the class size")
                block = _log(mat)
            joint = logrow[:, None] + block
            nxt.extend((prefix + (o,), joint[:, c]) for c, o in enumerate(k.outputs))
        frontier = nxt
    labels = tuple(p for p, _ in frontier)
    logt = np.stack([r for _, r in frontier], axis=1)
    return DiscreteMechanism(class_ref, labels, logt, len(stages), "adaptive")


def post_process(m: DiscreteMechanism, g: Callable | Mapping, arity: int | None = None) -> DiscreteMechanism:
    """Push rows forward through the output map ``g`` (new labels in first-appearance order)."""
    fn = g.__getitem__ if isinstance(g, Mapping) else g
    new = [fn(o) for o in m.outputs]
    order: dict = {}
    for v in new:
        order.setdefault(v, len(order))
    groups = [[] for _ in order]
    for c, v in enumerate(new):
        groups[order[v]].append(c)
    logt = np.stack([logsumexp(m.log_table[:, cols], axis=1) for cols in groups], axis=1)
    return DiscreteMechanism(m.class_ref, tuple(order), np.minimum(logt, 0.0), arity, f"g∘{m.name}")


def marginal(m: DiscreteMechanism, coord: int) -> DiscreteMechanism:
    """Distribution of one coordinate of a tuple-valued mechanism.

    Raises:
        NotATuple: ``m`` does not produce tuples.
    """
    if m.arity is None:
        raise NotATuple("mechanism outputs are not tuples")
    out = post_process(m, lambda o: o[coord])
    return DiscreteMechanism(out.class_ref, out.outputs, out.log_table, None, f"{m.name}[{coord}]")


# ---------------------------------------------------------------------------
# divergences between two distributions


def _pair_log(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("P and Q must be vectors over the same outcomes")
    return np.stack([_log(p), _log(q)])


def max_divergence(p, q) -> float:
    """``max_s ln(p_s / q_s)`` over the support of ``p``; ``inf`` if ``q`` misses it."""
    return float(kernels.pairwise_max_divergence(_pair_log(p, q))[0, 1])


def hockey_stick(p, q, eps: float) -> float:
    """``sum_s max(0, p_s - e^eps q_s)``, the least slack at exponent ``eps``."""
    if eps < 0:
        raise DomainError("eps must be non-negative")
    tab = np.exp(_pair_log(p, q))
    e = np.full((2, 2), float(eps))
    return float(kernels.pairwise_hockey_stick(tab, e)[0, 1])


def renyi_divergence(p, q, alpha: float) -> float:
    """Renyi divergence of order ``alpha > 1``; ``alpha = inf`` gives the max divergence.

    Raises:
        DomainError: ``alpha <= 1``.
    """
    if not alpha > 1:
        raise DomainError("alpha must exceed 1")
    if np.isinf(alpha):
        return max_divergence(p, q)
    return float(kernels.pairwise_renyi(_pair_log(p, q), np.array([alpha]))[0, 0, 1])


@dataclass(frozen=True)
class TradeoffCurve:
    """Piecewise-linear convex trade-off curve ``beta = T(alpha)``.

    Attributes:
        vertices: ``(alpha, beta)`` points, increasing in ``alpha``.
    """

    vertices: tuple[tuple[float, float], ...]

    @property
    def xs(self) -> np.ndarray:
        return np.array([v[0] for v in self.vertices])

    @property
    def ys(self) -> np.ndarray:
        return np.array([v[1] for v in self.vertices])

    def __call__(self, alpha):
        out = kernels.eval_curve_numpy(self.xs, self.ys, alpha)
        return float(out) if np.ndim(out) == 0 else out

    def is_convex(self, tol: float = 1e-12) -> bool:
        xs, ys = self.xs, self.ys
        if xs.size < 3:
            return True
        slopes = np.diff(ys) / np.diff(xs)
        return bool((np.diff(slopes) >= -tol).all())

    def support(self, eps: float) -> float:
        """``max`` over vertices of ``1 - beta - e^eps alpha``."""
        xs, ys = self.xs, self.ys
        return float(np.max(1.0 - ys - math.exp(eps) * xs))


def _merge_vertices(xs: np.ndarray, ys: np.ndarray, tol: float = 1e-15) -> tuple[tuple[float, float], ...]:
    pts: list[tuple[float, float]] = []
    for x, y in zip(xs.tolist(), ys.tolist()):
        if pts and x == pts[-1][0]:
            pts[-1] = (x, min(y, pts[-1][1]))
            continue
        if pts and y == pts[-1][1] == 0.0:
            continue  # flat tail at beta = 0
        pts.append((x, y))
        while len(pts) >= 3:
            (ax, ay), (bx, by), (cx, cy) = pts[-3:]
            cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
            if abs(cross) <= tol:
                del pts[-2]
            else:
                break
    return tuple(pts)


def tradeoff_curve(p, q) -> TradeoffCurve:
    """Neyman-Pearson trade-off curve of testing ``P`` against ``Q``; collinear vertices merged."""
    lt = _pair_log(p, q)
    xs, ys = kernels.curve_vertices_numpy(lt[0], lt[1])
    return TradeoffCurve(_merge_vertices(xs, ys))


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Outcome of checking a mechanism against a guarantee.

    Attributes:
        passed: ``slack >= -tolerance`` at the worst pair.
        worst_pair: lexicographically first ordered pair with minimum slack.
        slack: bound minus observed at ``worst_pair`` (``inf`` if every pair is vacuous).
        per_pair: observed values (``D_inf``, hockey-stick, Renyi per alpha, or trade-off gap).
        slack_matrix: per-pair slack, ``inf`` outside the scope.
        flavor: guarantee flavour checked.
        tolerance: tolerance applied.
        note: extra qualification, such as ``grid-verified``.
        worst_alpha: alpha (zC) or type-I error (Gaussian) where the worst slack occurs.
    """

    passed: bool
    worst_pair: tuple[int, int] | None
    slack: float
    per_pair: np.ndarray | None
    slack_matrix: np.ndarray
    flavor: str
    tolerance: float
    note: str = ""
    worst_alpha: float | None = None


def _scope_mask(n: int, pairs) -> np.ndarray:
    if isinstance(pairs, Granularity):
        mask = np.zeros((n, n), dtype=bool)
        for i, row in enumerate(pairs.adjacency):
            mask[i, list(row)] = True
        return mask
    if pairs in ("all", None):
        return ~np.eye(n, dtype=bool)
    raise ValueError("pairs must be 'all' or a Granularity")


def verify_guarantee(
    m: DiscreteMechanism,
    g: Guarantee,
    pairs="all",
    tolerance: Tolerance | str | None = None,
    alphas: Sequence[float] = ZC_ALPHA_GRID,
    grid_size: int = GAUSSIAN_GRID_SIZE,
) -> VerificationReport:
    """Check ``m`` against ``g`` on every ordered pair in scope.

    Pairs whose bound is infinite pass vacuously.

    Raises:
        ClassMismatch: ``g`` lives over another class.
        FlavorMismatch: unknown flavour.
    """
    same_class(m.class_ref, g.class_ref, "mechanism and guarantee")
    if isinstance(pairs, Granularity):
        same_class(pairs.class_ref, m.class_ref, "pair scope and mechanism")
    tol = TOLERANCE_PROFILES[tolerance] if isinstance(tolerance, str) else (tolerance or TOLERANCE_PROFILES["default"])
    n = len(m.class_ref)
    bound = g.values
    finite = np.isfinite(bound)
    note = ""
    worst_alpha_idx = None
    if g.flavor == "pure":
        observed = kernels.pairwise_max_divergence(m.log_table)
        with np.errstate(invalid="ignore"):
            slack = np.where(finite, bound - observed, np.inf)
        used = tol.divergence
    elif g.flavor == "approximate":
        observed = kernels.pairwise_hockey_stick(m.table, bound)
        slack = np.where(finite, g.delta - observed, np.inf)
        used = tol.divergence
    elif g.flavor == "zero_concentrated":
        a = np.asarray(alphas, dtype=float)
        observed = kernels.pairwise_renyi(m.log_table, a)
        allowed = g.squared[None, :, :] * a[:, None, None]
        with np.errstate(invalid="ignore"):
            per_alpha = np.where(finite[None], allowed - observed, np.inf)
        worst_alpha_idx = np.argmin(per_alpha, axis=0)
        slack = per_alpha.min(axis=0)
        used = tol.divergence
        note = "grid-verified"
    elif g.flavor == "gaussian":
        grid = np.linspace(0.0, 1.0, grid_size)
        slack, worst_alpha_idx = kernels.pairwise_tradeoff_slack(m.log_table, grid, phi_inv_upper(grid), bound)
        observed = slack
        used = tol.tradeoff
    else:  # pragma: no cover - guarded by Guarantee
        raise FlavorMismatch(g.flavor)

    scope = _scope_mask(n, pairs)
    scoped = np.where(scope, slack, np.inf)
    if not np.isfinite(scoped).any() and not (scoped == -np.inf).any():
        return VerificationReport(True, None, np.inf, observed, scoped, g.flavor, used, note)
    flat = int(np.argmin(scoped))
    i, j = divmod(flat, n)
    worst = float(scoped[i, j])
    alpha_at = None
    if worst_alpha_idx is not None:
        t = int(worst_alpha_idx[i, j])
        alpha_at = float(alphas[t]) if g.flavor == "zero_concentrated" else (t / (grid_size - 1) if t >= 0 else None)
    return VerificationReport(worst >= -used, (i, j), worst, observed, scoped, g.flavor, used, note, alpha_at)


def diagnose_components(
    m: DiscreteMechanism,
    claims: Guarantee | Sequence[Guarantee],
    pairs="all",
    tolerance: Tolerance | str | None = None,
) -> list[VerificationReport]:
    """Verify every coordinate marginal of a tuple-valued mechanism.

    Raises:
        NotATuple: ``m`` does not produce tuples.
    """
    if m.arity is None:
        raise NotATuple("mechanism outputs are not tuples")
    if isinstance(claims, Guarantee):
        claims = [claims] * m.arity
    if len(claims) != m.arity:
        raise ValueError("one claim per coordinate")
    return [verify_guarantee(marginal(m, i), c, pairs, tolerance) for i, c in enumerate(claims)]
