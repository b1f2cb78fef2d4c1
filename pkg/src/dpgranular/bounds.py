"""Privacy bounds and guarantees: matrix-valued objects over a class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FlavorMismatch, InvalidMetric
from .space import DatabaseClass, Metric

FLAVORS = ("pure", "approximate", "zero_concentrated", "gaussian")


def _frozen_matrix(values, n: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.shape != (n, n):
        raise InvalidMetric(f"{what} must be {n}x{n}, got {arr.shape}")
    if np.isnan(arr).any() or (arr < 0).any():
        raise InvalidMetric(f"{what} must be non-negative and not NaN")
    if n and np.any(np.diag(arr) != 0):
        raise InvalidMetric(f"{what} must have a zero diagonal")
    if not np.array_equal(arr, arr.T):
        raise InvalidMetric(f"{what} must be symmetric")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Bound:
    """A symmetric, zero-diagonal bound matrix produced by a composition rule.

    Attributes:
        class_ref: the plan domain.
        values: read-only matrix of extended non-negative reals.
        is_metric: ``False`` for starred bounds that may break the triangle inequality.
        provenance: name of the rule that produced the bound.
        coefficient: closed-form multiplier when ``values = coefficient * base``.
        base: name of the canonical metric the coefficient multiplies.
    """

    class_ref: DatabaseClass
    values: np.ndarray
    is_metric: bool = True
    provenance: str = ""
    coefficient: float | None = None
    base: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_matrix(self.values, len(self.class_ref), "bound"))

    @property
    def dist(self) -> np.ndarray:
        return self.values

    @property
    def name(self) -> str:
        return self.closed_form() or "d*"

    @classmethod
    def from_metric(cls, d: Metric, provenance: str = "", coefficient=None, base=None) -> "Bound":
        return cls(d.class_ref, d.dist, True, provenance, coefficient, base)

    def closed_form(self) -> str | None:
        if self.coefficient is None or self.base is None:
            return None
        return f"{self.coefficient:.12g}·{self.base}"


def as_matrix(d) -> np.ndarray:
    """The distance matrix of a :class:`Metric` or :class:`Bound`."""
    return d.dist if isinstance(d, (Metric, Bound)) else np.asarray(d, dtype=float)


@dataclass(frozen=True, eq=False)
class Guarantee:
    """A privacy guarantee of one of four flavours.

    Attributes:
        flavor: ``pure``, ``approximate``, ``zero_concentrated`` or ``gaussian``.
        d: the distance part. For ``zero_concentrated`` this is the base metric;
            the operative bound on ``D_alpha / alpha`` is ``d**2``.
        delta: the additive slack, present exactly for ``approximate``.
        provenance: rule that produced the guarantee.
        square: optional exact ``d**2`` for ``zero_concentrated``, carried so
            that budgets added under composition are not routed through a
            square root and back.
    """

    flavor: str
    d: Metric | Bound
    delta: np.ndarray | None = None
    provenance: str = ""
    square: np.ndarray | None = None

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise FlavorMismatch(f"unknown flavour {self.flavor!r}")
        if (self.delta is not None) != (self.flavor == "approximate"):
            raise FlavorMismatch("delta must be given exactly for approximate guarantees")
        if self.delta is not None:
            object.__setattr__(self, "delta", _frozen_matrix(self.delta, len(self.class_ref), "delta"))
        if self.square is not None:
            if self.flavor != "zero_concentrated":
                raise FlavorMismatch("square is only meaningful for zero_concentrated guarantees")
            object.__setattr__(self, "square", _frozen_matrix(self.square, len(self.class_ref), "square"))

    # constructors -----------------------------------------------------------
    @classmethod
    def pure(cls, d, provenance: str = "") -> "Guarantee":
        return cls("pure", d, None, provenance)

    @classmethod
    def approximate(cls, d, delta, provenance: str = "") -> "Guarantee":
        return cls("approximate", d, delta, provenance)

    @classmethod
    def zero_concentrated(cls, d, provenance: str = "", square=None) -> "Guarantee":
        return cls("zero_concentrated", d, None, provenance, square)

    @classmethod
    def gaussian(cls, d, provenance: str = "") -> "Guarantee":
        return cls("gaussian", d, None, provenance)

    # views ------------------------------------------------------------------
    @property
    def class_ref(self) -> DatabaseClass:
        return self.d.class_ref

    @property
    def values(self) -> np.ndarray:
        return as_matrix(self.d)

    @property
    def is_metric(self) -> bool:
        return not isinstance(self.d, Bound) or self.d.is_metric

    @property
    def squared(self) -> np.ndarray:
        """``d**2``, the operative zCDP bound."""
        if self.square is not None:
            return self.square
        return self.values ** 2

    @property
    def delta_or_zero(self) -> np.ndarray:
        if self.delta is None:
            return np.zeros_like(self.values)
        return self.delta

    def as_approximate(self) -> "Guarantee":
        """View a pure guarantee as approximate with zero slack."""
        if self.flavor == "approximate":
            return self
        if self.flavor != "pure":
            raise FlavorMismatch(f"cannot view {self.flavor} as approximate")
        return Guarantee("approximate", self.d, np.zeros_like(self.values), self.provenance)

    def meaningless_pairs(self) -> list[tuple[int, int]]:
        """Pairs ``i < j`` whose slack is at least 1 (no protection)."""
        if self.delta is None:
            return []
        idx = np.argwhere(np.triu(self.delta >= 1.0, 1))
        return [(int(i), int(j)) for i, j in idx]

    @property
    def effective_delta(self) -> np.ndarray | None:
        """Slack clamped at 1, for annotation only."""
        return None if self.delta is None else np.minimum(self.delta, 1.0)
