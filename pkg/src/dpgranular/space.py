"""Finite database classes, neighbour relations and canonical metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import kernels
from .errors import (
    CapExceeded,
    ClassMismatch,
    EmptyUniverse,
    InvalidMetric,
    InvalidRelation,
    NotInClass,
    OrderedUnsupported,
    UnsupportedClass,
)

DEFAULT_CAP = 20_000
BUILTIN_GRANULARITIES = ("unbounded", "bounded", "free_lunch")


@dataclass(frozen=True)
class RecordUniverse:
    """A finite, lexicographically ordered set of record labels."""

    records: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(r) for r in self.records)
        if len(set(labels)) != len(labels):
            raise ValueError(f"record labels must be unique: {labels}")
        object.__setattr__(self, "records", tuple(sorted(labels)))

    @property
    def size(self) -> int:
        return len(self.records)

    def index(self, label: str) -> int:
        return self.records.index(label)

    def __contains__(self, label) -> bool:
        return label in self.records

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class Database:
    """A multiset of records, optionally carrying identifiers 1..n.

    Attributes:
        counts: sorted ``(label, multiplicity)`` pairs with positive multiplicity.
        sequence: for ordered databases, the label held by identifier ``n`` at
            position ``n - 1``; ``None`` for plain multisets.
    """

    counts: tuple[tuple[str, int], ...]
    sequence: tuple[str, ...] | None = None

    def __post_init__(self):
        merged: dict[str, int] = {}
        for label, m in self.counts:
            if m < 0:
                raise ValueError("multiplicities must be non-negative")
            if m:
                merged[str(label)] = merged.get(str(label), 0) + int(m)
        object.__setattr__(self, "counts", tuple(sorted(merged.items())))
        if self.sequence is not None:
            seq = tuple(str(x) for x in self.sequence)
            object.__setattr__(self, "sequence", seq)
            if sorted(itertools.chain.from_iterable([l] * m for l, m in self.counts)) != sorted(seq):
                raise ValueError("ordered sequence disagrees with multiplicities")

    @classmethod
    def of(cls, records: Iterable[str]) -> "Database":
        """Build a multiset database from an iterable of labels (with repetition)."""
        bag: dict[str, int] = {}
        for r in records:
            bag[str(r)] = bag.get(str(r), 0) + 1
        return cls(tuple(bag.items()))

    @classmethod
    def ordered(cls, labels: Sequence[str]) -> "Database":
        """Build an ordered database; identifier ``n`` carries ``labels[n - 1]``."""
        return cls(tuple(_tally(labels).items()), tuple(labels))

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "Database":
        return cls(tuple(counts.items()))

    @property
    def is_ordered(self) -> bool:
        return self.sequence is not None

    @property
    def size(self) -> int:
        if self.sequence is not None:
            return len(self.sequence)
        return sum(m for _, m in self.counts)

    @property
    def multiplicities(self) -> dict[str, int]:
        return dict(self.counts)

    @property
    def ordered_ids(self) -> tuple[tuple[int, str], ...] | None:
        if self.sequence is None:
            return None
        return tuple((n + 1, x) for n, x in enumerate(self.sequence))

    def multiplicity(self, label: str) -> int:
        return dict(self.counts).get(label, 0)

    @property
    def key(self) -> tuple:
        """Canonical encoding used for indexing and caching."""
        if self.sequence is not None:
            return ("ordered", self.sequence)
        return ("multiset", self.counts)

    def records(self) -> tuple[str, ...]:
        """Sorted labels with repetition."""
        return tuple(itertools.chain.from_iterable([l] * m for l, m in self.counts))

    def labels(self) -> set[str]:
        return {l for l, _ in self.counts}

    def restrict(self, keep: Iterable[str]) -> "Database":
        """The sub-multiset of records whose label lies in ``keep``."""
        keep = set(keep)
        return Database(tuple((l, m) for l, m in self.counts if l in keep))

    def __len__(self):
        return self.size

    def __str__(self):
        if self.sequence is not None:
            return "[" + ",".join(f"{n}:{x}" for n, x in self.ordered_ids) + "]"
        return "{" + ",".join(self.records()) + "}"


def _tally(labels: Iterable[str]) -> dict[str, int]:
    bag: dict[str, int] = {}
    for r in labels:
        bag[str(r)] = bag.get(str(r), 0) + 1
    return bag


def symmetric_difference_size(a: Database, b: Database) -> int:
    """``|a △ b|`` under multiset semantics."""
    ma, mb = a.multiplicities, b.multiplicities
    return sum(abs(ma.get(x, 0) - mb.get(x, 0)) for x in set(ma) | set(mb))


def is_submultiset(a: Database, b: Database) -> bool:
    mb = b.multiplicities
    return all(m <= mb.get(x, 0) for x, m in a.counts)


class DatabaseClass:
    """An immutable, indexed collection of distinct databases.

    Args:
        universe: the record universe every member draws from.
        members: the databases, in index order.
        ordered: whether members carry identifiers; inferred when omitted.
        description: JSON-friendly description of how the class was built,
            used for cache digests.
    """

    def __init__(
        self,
        universe: RecordUniverse,
        members: Sequence[Database],
        *,
        ordered: bool | None = None,
        description: dict | None = None,
    ):
        members = tuple(members)
        if ordered is None:
            ordered = bool(members) and members[0].is_ordered
        index_of: dict[tuple, int] = {}
        for i, db in enumerate(members):
            if db.is_ordered != ordered:
                raise ValueError("members must be uniformly ordered or unordered")
            if db.key in index_of:
                raise ValueError(f"duplicate member {db}")
            stray = db.labels() - set(universe.records)
            if stray:
                raise ValueError(f"member {db} uses records outside the universe: {sorted(stray)}")
            index_of[db.key] = i
        self._universe = universe
        self._members = members
        self._index_of = index_of
        self._ordered = ordered
        self._description = description or {
            "kind": "explicit",
            "universe": list(universe.records),
            "ordered": ordered,
            "members": [list(db.sequence) if ordered else list(db.records()) for db in members],
        }

    @property
    def universe(self) -> RecordUniverse:
        return self._universe

    @property
    def members(self) -> tuple[Database, ...]:
        return self._members

    @property
    def index_of(self) -> dict[tuple, int]:
        return dict(self._index_of)

    @property
    def ordered(self) -> bool:
        return self._ordered

    @property
    def description(self) -> dict:
        return self._description

    def __len__(self):
        return len(self._members)

    def __iter__(self) -> Iterator[Database]:
        return iter(self._members)

    def __getitem__(self, i: int) -> Database:
        return self._members[i]

    def __contains__(self, db: Database) -> bool:
        return db.key in self._index_of

    def index(self, db: Database) -> int:
        try:
            return self._index_of[db.key]
        except KeyError:
            raise NotInClass(f"{db} is not a member of this class") from None

    def find(self, db: Database) -> int | None:
        return self._index_of.get(db.key)

    @cached_property
    def count_matrix(self) -> np.ndarray:
        """Member-by-record multiplicity matrix (read-only)."""
        col = {x: c for c, x in enumerate(self._universe.records)}
        out = np.zeros((len(self), self._universe.size), dtype=np.int64)
        for i, db in enumerate(self._members):
            for x, m in db.counts:
                out[i, col[x]] = m
        out.setflags(write=False)
        return out

    @cached_property
    def fingerprint(self) -> tuple:
        return (self._universe.records, self._ordered, tuple(self._index_of))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, DatabaseClass):
            return NotImplemented
        return self.fingerprint == other.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return f"DatabaseClass(|X|={self._universe.size}, members={len(self)}, ordered={self._ordered})"


def same_class(a: DatabaseClass, b: DatabaseClass, what: str = "objects") -> None:
    if a is not b and a != b:
        raise ClassMismatch(f"{what} live over different classes")


@dataclass(frozen=True)
class ClassSpec:
    """Recipe for :func:`enumerate_class`.

    Attributes:
        kind: ``max_size``, ``exact_size``, ``explicit`` or ``ordered``.
        universe: record labels.
        size: the size bound (``max_size``) or exact size (``exact_size``, ``ordered``).
        members: member databases for ``explicit``.
        cap: maximum number of members.
    """

    kind: str
    universe: tuple[str, ...]
    size: int | None = None
    members: tuple[Database, ...] | None = None
    cap: int = DEFAULT_CAP

    @classmethod
    def max_size(cls, universe, n, cap=DEFAULT_CAP):
        return cls("max_size", tuple(universe), n, cap=cap)

    @classmethod
    def exact_size(cls, universe, n, cap=DEFAULT_CAP):
        return cls("exact_size", tuple(universe), n, cap=cap)

    @classmethod
    def ordered_size(cls, universe, n, cap=DEFAULT_CAP):
        return cls("ordered", tuple(universe), n, cap=cap)

    @classmethod
    def explicit(cls, universe, members, cap=DEFAULT_CAP):
        return cls("explicit", tuple(universe), members=tuple(members), cap=cap)

    def describe(self) -> dict:
        out = {"kind": self.kind, "universe": sorted(self.universe)}
        if self.size is not None:
            out["size"] = self.size
        if self.members is not None:
            out["members"] = [list(m.sequence) if m.is_ordered else list(m.records()) for m in self.members]
        return out


def class_size(spec: ClassSpec) -> int:
    """Number of members ``spec`` would enumerate."""
    n = len(set(spec.universe))
    if spec.kind == "max_size":
        return sum(math.comb(s + n - 1, n - 1) for s in range(spec.size + 1))
    if spec.kind == "exact_size":
        return math.comb(spec.size + n - 1, n - 1)
    if spec.kind == "ordered":
        return n ** spec.size
    if spec.kind == "explicit":
        return len(spec.members)
    raise ValueError(f"unknown class kind {spec.kind!r}")


def enumerate_class(spec: ClassSpec) -> DatabaseClass:
    """Enumerate the class described by ``spec``.

    Members are ordered by size, then lexicographically by sorted record list
    (multisets) or by label sequence (ordered classes).

    Raises:
        EmptyUniverse: the universe has no records.
        CapExceeded: more than ``spec.cap`` members would be produced.
    """
    if not spec.universe:
        raise EmptyUniverse("the record universe is empty")
    universe = RecordUniverse(tuple(spec.universe))
    if spec.kind in ("max_size", "exact_size", "ordered") and (spec.size is None or spec.size < 0):
        raise ValueError(f"{spec.kind} classes need a non-negative size")
    count = class_size(spec)
    if count > spec.cap:
        raise CapExceeded(f"class would have {count} members, cap is {spec.cap}")
    labels = universe.records
    if spec.kind == "max_size":
        members = [
            Database.of(combo)
            for s in range(spec.size + 1)
            for combo in itertools.combinations_with_replacement(labels, s)
        ]
    elif spec.kind == "exact_size":
        members = [Database.of(c) for c in itertools.combinations_with_replacement(labels, spec.size)]
    elif spec.kind == "ordered":
        members = [Database.ordered(seq) for seq in itertools.product(labels, repeat=spec.size)]
    else:
        members = list(spec.members)
        if not members:
            raise ValueError("explicit classes need at least one member")
    ordered = spec.kind == "ordered" or (spec.kind == "explicit" and members[0].is_ordered)
    return DatabaseClass(universe, members, ordered=ordered, description=spec.describe())


# ---------------------------------------------------------------------------
# granularities


@dataclass(frozen=True, eq=False)
class Granularity:
    """A symmetric, irreflexive neighbour relation over a class.

    Attributes:
        class_ref: the class the relation lives over.
        adjacency: sorted neighbour indices for each member.
        name: ``unbounded``, ``bounded``, ``free_lunch`` or ``custom``.
    """

    class_ref: DatabaseClass
    adjacency: tuple[tuple[int, ...], ...]
    name: str = "custom"

    def __post_init__(self):
        n = len(self.class_ref)
        if len(self.adjacency) != n:
            raise InvalidRelation("adjacency needs one row per member")
        rows = tuple(tuple(sorted(set(int(j) for j in row))) for row in self.adjacency)
        sets = [set(r) for r in rows]
        for i, row in enumerate(rows):
            for j in row:
                if not 0 <= j < n:
                    raise InvalidRelation(f"neighbour index {j} out of range")
                if j == i:
                    raise InvalidRelation(f"member {i} is listed as its own neighbour")
                if i not in sets[j]:
                    raise InvalidRelation(f"relation is not symmetric at ({i}, {j})")
        object.__setattr__(self, "adjacency", rows)

    @classmethod
    def from_edges(cls, class_ref: DatabaseClass, edges: Iterable[tuple[int, int]], name: str = "custom"):
        """Build a relation from undirected index pairs."""
        n = len(class_ref)
        rows: list[set[int]] = [set() for _ in range(n)]
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidRelation(f"edge ({i}, {j}) leaves the class of {n} members")
            rows[i].add(j)
            rows[j].add(i)
        return cls(class_ref, tuple(tuple(r) for r in rows), name)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        lengths = np.array([len(r) for r in self.adjacency], dtype=np.int64)
        indptr = np.r_[0, np.cumsum(lengths)].astype(np.int64)
        indices = np.fromiter(itertools.chain.from_iterable(self.adjacency), dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    def pairs(self) -> Iterator[tuple[int, int]]:
        """Neighbour pairs ``(i, j)`` with ``i < j`` in index order."""
        for i, row in enumerate(self.adjacency):
            for j in row:
                if j > i:
                    yield i, j

    def are_neighbors(self, i: int, j: int) -> bool:
        return j in self.adjacency[i]

    @property
    def edge_count(self) -> int:
        return sum(len(r) for r in self.adjacency) // 2


def builtin_granularity(class_ref: DatabaseClass, kind: str) -> Granularity:
    """The unbounded, bounded or free-lunch relation over ``class_ref``.

    Bounded neighbours share a size and differ by changing one record; on
    ordered classes that means changing the label of one identifier.

    Raises:
        UnsupportedClass: unbounded neighbours on an ordered class.
    """
    if len(class_ref) == 0:
        raise ValueError("class is empty")
    n = len(class_ref)
    if kind == "free_lunch":
        rows = tuple(tuple(j for j in range(n) if j != i) for i in range(n))
        return Granularity(class_ref, rows, "free_lunch")
    labels = class_ref.universe.records
    rows: list[set[int]] = [set() for _ in range(n)]
    if kind == "unbounded":
        if class_ref.ordered:
            raise UnsupportedClass("unbounded neighbours are undefined for ordered databases")
        for i, db in enumerate(class_ref):
            bag = db.multiplicities
            for x in labels:
                bigger = dict(bag)
                bigger[x] = bigger.get(x, 0) + 1
                j = class_ref.find(Database.from_counts(bigger))
                if j is not None:
                    rows[i].add(j)
                    rows[j].add(i)
    elif kind == "bounded":
        for i, db in enumerate(class_ref):
            if class_ref.ordered:
                seq = list(db.sequence)
                for pos, old in enumerate(seq):
                    for y in labels:
                        if y != old:
                            changed = seq.copy()
                            changed[pos] = y
                            j = class_ref.find(Database.ordered(changed))
                            if j is not None:
                                rows[i].add(j)
            else:
                bag = db.multiplicities
                for x in bag:
                    for y in labels:
                        if y == x:
                            continue
                        changed = dict(bag)
                        changed[x] -= 1
                        changed[y] = changed.get(y, 0) + 1
                        j = class_ref.find(Database.from_counts(changed))
                        if j is not None:
                            rows[i].add(j)
    else:
        raise ValueError(f"unknown granularity {kind!r}")
    return Granularity(class_ref, tuple(tuple(r) for r in rows), kind)


def neighbors(g: Granularity, db: Database) -> tuple[Database, ...]:
    """Materialise the neighbours of ``db`` under ``g``."""
    i = g.class_ref.index(db)
    return tuple(g.class_ref[j] for j in g.adjacency[i])


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True, eq=False)
class Metric:
    """A dense extended pseudometric over a class.

    Attributes:
        class_ref: the class.
        dist: read-only ``float64`` matrix, ``inf`` for unreachable pairs.
        name: display label such as ``d^U``.
        is_canonical_of: the granularity this metric was derived from, if any.
    """

    class_ref: DatabaseClass
    dist: np.ndarray
    name: str = "d"
    is_canonical_of: Granularity | None = None

    def __post_init__(self):
        dist = np.array(self.dist, dtype=np.float64, copy=True)
        n = len(self.class_ref)
        if dist.shape != (n, n):
            raise InvalidMetric(f"distance matrix must be {n}x{n}, got {dist.shape}")
        if np.isnan(dist).any() or (dist < 0).any():
            raise InvalidMetric("distances must be non-negative and not NaN")
        if n and np.any(np.diag(dist) != 0):
            raise InvalidMetric("diagonal must be zero")
        if not np.array_equal(dist, dist.T):
            raise InvalidMetric("distance matrix must be symmetric")
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)

    @classmethod
    def from_matrix(cls, class_ref, dist, name="d", check_triangle=True):
        """Validate a user-supplied matrix, including the triangle inequality."""
        m = cls(class_ref, dist, name)
        if check_triangle:
            bad = m.triangle_violation()
            if bad is not None:
                raise InvalidMetric(f"triangle inequality fails at {bad}")
        return m

    @property
    def values(self) -> np.ndarray:
        return self.dist

    @property
    def is_pseudo(self) -> bool:
        n = self.dist.shape[0]
        off = ~np.eye(n, dtype=bool)
        return bool((self.dist[off] == 0).any())

    def triangle_violation(self, tol: float = 0.0):
        return kernels.triangle_violation(self.dist, tol)

    def __call__(self, a: Database, b: Database) -> float:
        return float(self.dist[self.class_ref.index(a), self.class_ref.index(b)])

    def __repr__(self):
        return f"Metric({self.name}, n={self.dist.shape[0]})"


def canonical_metric(g: Granularity) -> Metric:
    """Shortest neighbour-chain distance, by breadth-first search from every member."""
    indptr, indices = g.csr
    dist = kernels.bfs_all_pairs(indptr, indices)
    return Metric(g.class_ref, dist, metric_label(g.name), is_canonical_of=g)


def metric_label(granularity_name: str) -> str:
    short = {"unbounded": "U", "bounded": "B", "free_lunch": "FL"}
    return f"d^{short.get(granularity_name, granularity_name)}"


def symmetric_difference_metric(class_ref: DatabaseClass) -> Metric:
    """``|D △ D'|`` as a (finite) metric.

    Raises:
        OrderedUnsupported: on ordered classes.
    """
    if class_ref.ordered:
        raise OrderedUnsupported("symmetric difference is defined on multisets only")
    return Metric(class_ref, kernels.pairwise_l1(class_ref.count_matrix), "d^△")
