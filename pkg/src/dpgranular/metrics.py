"""Metric algebra: scaling, domination, granularity distance, sensitivity, maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ClassMismatch, NegativeScale, OrderedUnsupported
from .space import (
    Database,
    DatabaseClass,
    Granularity,
    Metric,
    RecordUniverse,
    builtin_granularity,
    canonical_metric,
    metric_label,
    same_class,
    symmetric_difference_metric,
)


def scale_matrix(values: np.ndarray, eps: float) -> np.ndarray:
    """``eps * values`` with ``0 * inf = 0``."""
    if eps < 0 or np.isnan(eps):
        raise NegativeScale(f"scale factor must be non-negative, got {eps}")
    if eps == 0:
        return np.zeros_like(values, dtype=float)
    return np.asarray(values, dtype=float) * eps


def scale(d: Metric, eps: float) -> Metric:
    """The metric ``eps * d``; scaling by zero yields the zero metric."""
    name = d.name if eps == 1 else f"{eps:g}·{d.name}"
    return Metric(d.class_ref, scale_matrix(d.dist, float(eps)), name, d.is_canonical_of if eps == 1 else None)


@dataclass(frozen=True)
class DominationResult:
    """Outcome of :func:`is_dominated`; ``counterexample`` is the first violating pair."""

    holds: bool
    counterexample: tuple[int, int] | None = None

    def __bool__(self):
        return self.holds


def is_dominated(d1: Metric, d2: Metric, k: float = 1.0) -> DominationResult:
    """Check ``d1 <= k * d2`` entrywise.

    Raises:
        ClassMismatch: the metrics live over different classes.
    """
    same_class(d1.class_ref, d2.class_ref, "metrics")
    bad = d1.dist > scale_matrix(d2.dist, float(k))
    if not bad.any():
        return DominationResult(True)
    i, j = np.argwhere(bad)[0]
    return DominationResult(False, (int(i), int(j)))


def granularity_distance(g1: Granularity, g2: Granularity) -> float:
    """Largest ``d^{g1}`` distance between ``g2``-neighbours (0 when ``g2`` is empty)."""
    same_class(g1.class_ref, g2.class_ref, "granularities")
    dist = canonical_metric(g1).dist
    pairs = np.array(list(g2.pairs()), dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return 0.0
    return float(dist[pairs[:, 0], pairs[:, 1]].max())


def diameter(d: Metric | np.ndarray) -> float:
    values = d.dist if isinstance(d, Metric) else np.asarray(d)
    return float(values.max()) if values.size else 0.0


@dataclass(frozen=True)
class SensitivityResult:
    """Smallest Lipschitz constant of a map and a source pair attaining it."""

    value: float
    witness: tuple[int, int] | None = None


def connectivity_report(d: Metric | np.ndarray) -> list[list[int]]:
    """Components under finite-distance reachability, each sorted, ordered by first index."""
    values = d.dist if isinstance(d, Metric) else np.asarray(d)
    n = values.shape[0]
    seen = np.zeros(n, dtype=bool)
    out = []
    for i in range(n):
        if seen[i]:
            continue
        comp = np.flatnonzero(np.isfinite(values[i]))
        seen[comp] = True
        out.append([int(j) for j in comp])
    return out


# ---------------------------------------------------------------------------
# maps between classes


@dataclass(frozen=True, eq=False)
class MapBetweenClasses:
    """A total map from ``source`` members to ``target`` members.

    Attributes:
        source: domain class.
        target: codomain class.
        image: ``image[i]`` is the target index of source member ``i``.
        name: display label.
        kind: ``identity``, ``universe_split``, ``record_projection``,
            ``order_split`` or ``explicit``; partition analysis uses it.
        block: for split maps, the kept records (or identifiers).
    """

    source: DatabaseClass
    target: DatabaseClass
    image: np.ndarray
    name: str = "f"
    kind: str = "explicit"
    block: tuple | None = None

    def __post_init__(self):
        img = np.array(self.image, dtype=np.int64, copy=True).reshape(-1)
        if img.size != len(self.source):
            raise ValueError("a map needs one image per source member")
        if img.size and (img.min() < 0 or img.max() >= len(self.target)):
            raise ValueError("image index out of range for the target class")
        img.setflags(write=False)
        object.__setattr__(self, "image", img)

    def __call__(self, db: Database) -> Database:
        return self.target[int(self.image[self.source.index(db)])]

    def then(self, g: "MapBetweenClasses") -> "MapBetweenClasses":
        """The composite ``g ∘ self``."""
        same_class(self.target, g.source, "maps")
        return MapBetweenClasses(self.source, g.target, g.image[self.image], f"{g.name}∘{self.name}")

    @property
    def is_injective(self) -> bool:
        return np.unique(self.image).size == self.image.size

    def fiber_labels(self) -> tuple[np.ndarray, int]:
        """Compressed fibre labels ``0..L-1`` of the source members, and ``L``."""
        _, labels = np.unique(self.image, return_inverse=True)
        return labels.astype(np.int64), int(labels.max()) + 1 if labels.size else 0

    def pullback(self, values: np.ndarray) -> np.ndarray:
        """``values[f(i), f(j)]`` as a source-indexed matrix."""
        return np.asarray(values)[np.ix_(self.image, self.image)]


def identity_map(class_ref: DatabaseClass, name: str = "id") -> MapBetweenClasses:
    return MapBetweenClasses(class_ref, class_ref, np.arange(len(class_ref)), name, "identity")


def image_class(source: DatabaseClass, images: Sequence[Database], universe: RecordUniverse | None = None):
    """The class of distinct images in first-appearance order, plus the index map."""
    seen: dict[tuple, int] = {}
    members: list[Database] = []
    image = np.empty(len(images), dtype=np.int64)
    for i, db in enumerate(images):
        j = seen.get(db.key)
        if j is None:
            j = seen[db.key] = len(members)
            members.append(db)
        image[i] = j
    univ = universe or source.universe
    ordered = bool(members) and members[0].is_ordered
    desc = {"kind": "image", "of": source.description, "members": [str(m) for m in members]}
    return DatabaseClass(univ, members, ordered=ordered, description=desc), image


def map_from_function(
    source: DatabaseClass,
    fn: Callable[[Database], Database],
    *,
    target: DatabaseClass | None = None,
    universe: RecordUniverse | None = None,
    name: str = "f",
    kind: str = "explicit",
    block: tuple | None = None,
) -> MapBetweenClasses:
    """Tabulate ``fn`` on every source member.

    Without ``target`` the codomain is the image class (first-appearance order).
    """
    images = [fn(db) for db in source]
    if target is None:
        target, image = image_class(source, images, universe)
    else:
        image = np.array([target.index(db) for db in images], dtype=np.int64)
    return MapBetweenClasses(source, target, image, name, kind, block)


def record_projection(source: DatabaseClass, records: Iterable[str], name: str | None = None, kind: str = "record_projection"):
    """``D ↦ D ∩ Y`` onto its image, with ``Y`` as the target universe."""
    if source.ordered:
        raise OrderedUnsupported("record projection needs multiset members")
    keep = tuple(sorted(set(records)))
    univ = RecordUniverse(keep) if keep else source.universe
    return map_from_function(
        source,
        lambda db: db.restrict(keep),
        universe=univ,
        name=name or "∩{" + ",".join(keep) + "}",
        kind=kind,
        block=keep,
    )


def universe_split(source: DatabaseClass, blocks: Sequence[Iterable[str]], prefix: str = "p") -> list[MapBetweenClasses]:
    """One projection ``p_i(D) = D ∩ X_i`` per record block."""
    return [
        record_projection(source, blk, name=f"{prefix}{i + 1}", kind="universe_split")
        for i, blk in enumerate(blocks)
    ]


def order_block(source: DatabaseClass, ids: Iterable[int], name: str = "p") -> MapBetweenClasses:
    """Keep the records whose identifiers lie in ``ids``, re-indexed ``1..|block|``."""
    if not source.ordered:
        raise ValueError("order blocks need an ordered class")
    ids = tuple(sorted(set(int(v) for v in ids)))

    def restrict(db):
        return Database.ordered([db.sequence[n - 1] for n in ids if n <= db.size])

    return map_from_function(source, restrict, name=name, kind="order_split", block=ids)


def order_split(source: DatabaseClass, id_blocks: Sequence[Iterable[int]], prefix: str = "p") -> list[MapBetweenClasses]:
    """One :func:`order_block` per identifier block."""
    return [order_block(source, ids, f"{prefix}{i + 1}") for i, ids in enumerate(id_blocks)]


def explicit_map(source: DatabaseClass, target: DatabaseClass, image: Sequence[int], name: str = "f"):
    return MapBetweenClasses(source, target, np.asarray(image), name, "explicit")


# ---------------------------------------------------------------------------
# sensitivity


def sensitivity(f: MapBetweenClasses, d1: Metric, d2: Metric) -> SensitivityResult:
    """Smallest ``Δ`` with ``d2(f(D), f(D')) <= Δ d1(D, D')`` whenever ``d1 < inf``.

    Ratios use ``0/0 = 0`` and ``x/0 = inf`` for ``x > 0``. The witness is the
    first pair ``(i, j)``, ``i < j``, attaining the maximum.
    """
    same_class(f.source, d1.class_ref, "map source and d1")
    same_class(f.target, d2.class_ref, "map target and d2")
    num = f.pullback(d2.dist)
    den = d1.dist
    n = den.shape[0]
    upper = np.triu(np.ones((n, n), dtype=bool), 1) & np.isfinite(den)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    ratio = np.where(upper, ratio, -np.inf)
    if not upper.any():
        return SensitivityResult(0.0, None)
    flat = int(np.argmax(ratio))
    i, j = divmod(flat, n)
    return SensitivityResult(float(ratio[i, j]), (i, j))


# ---------------------------------------------------------------------------
# named metric families


@dataclass(frozen=True)
class MetricType:
    """A metric family that can be instantiated over any compatible class.

    Attributes:
        name: label, e.g. ``unbounded``.
        builder: callable producing the metric from a class.
    """

    name: str
    builder: Callable[[DatabaseClass], Metric] = field(repr=False)

    def __call__(self, class_ref: DatabaseClass) -> Metric:
        return self.builder(class_ref)


def canonical_type(kind: str) -> MetricType:
    return MetricType(kind, lambda c: canonical_metric(builtin_granularity(c, kind)))


SYMMETRIC_DIFFERENCE = MetricType("symmetric_difference", symmetric_difference_metric)


def metric_type(name: str) -> MetricType:
    if name in ("symmetric_difference", "sym_diff", "d^△"):
        return SYMMETRIC_DIFFERENCE
    return canonical_type(name)


__all__ = [
    "DominationResult",
    "MapBetweenClasses",
    "MetricType",
    "SensitivityResult",
    "ClassMismatch",
    "canonical_type",
    "connectivity_report",
    "diameter",
    "explicit_map",
    "granularity_distance",
    "identity_map",
    "image_class",
    "is_dominated",
    "map_from_function",
    "metric_label",
    "metric_type",
    "order_block",
    "order_split",
    "record_projection",
    "scale",
    "scale_matrix",
    "sensitivity",
    "universe_split",
]
