import math

import numpy as np
import pytest

from dpgranular import (
    ClassSpec,
    Database,
    Granularity,
    Metric,
    builtin_granularity,
    canonical_metric,
    class_size,
    enumerate_class,
    neighbors,
    symmetric_difference_metric,
)
from dpgranular.errors import (
    CapExceeded,
    EmptyUniverse,
    InvalidMetric,
    InvalidRelation,
    NotInClass,
    OrderedUnsupported,
    UnsupportedClass,
)

import oracles


def D(*xs):
    return Database.of(xs)


def test_max_size_one_members():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    assert list(c.members) == [D(), D("a"), D("b")]


def test_exact_size_two_members():
    c = enumerate_class(ClassSpec.exact_size("ab", 2))
    assert list(c.members) == [D("a", "a"), D("a", "b"), D("b", "b")]


@pytest.mark.parametrize("k,n", [(1, 4), (2, 3), (3, 3), (4, 2), (3, 5)])
def test_class_size_matches_stars_and_bars(k, n):
    spec = ClassSpec.max_size("abcd"[:k] if k <= 4 else "x", n)
    assert class_size(spec) == len(enumerate_class(spec)) == oracles.stars_and_bars(k, n)


def test_three_records_size_three_has_twenty_members():
    assert len(enumerate_class(ClassSpec.max_size("abc", 3))) == 20


def test_cap_is_enforced():
    with pytest.raises(CapExceeded):
        enumerate_class(ClassSpec.max_size("abcdefgh", 8, cap=1000))


def test_empty_universe_rejected():
    with pytest.raises(EmptyUniverse):
        enumerate_class(ClassSpec.max_size("", 2))


def test_index_and_find():
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    assert c[c.index(D("a", "b"))] == D("b", "a")
    assert c.find(D("a", "a", "a")) is None
    with pytest.raises(NotInClass):
        c.index(D("c"))


def test_ordered_class_members_are_sequences():
    c = enumerate_class(ClassSpec.ordered_size("ab", 2))
    assert len(c) == 4 and c.ordered
    assert Database.ordered("ab") != Database.ordered("ba")


@pytest.mark.parametrize(
    "kind,a,b,expected",
    [
        ("unbounded", D("a"), D("a", "b"), True),
        ("bounded", D("a", "a"), D("a", "b"), True),
        ("free_lunch", D(), D("a", "b"), True),
        ("unbounded", D(), D("a", "b"), False),
        ("bounded", D("a"), D("a", "b"), False),
    ],
)
def test_neighbour_examples(kind, a, b, expected):
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    g = builtin_granularity(c, kind)
    assert g.are_neighbors(c.index(a), c.index(b)) is expected


def test_neighbors_free_lunch_three_members():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    g = builtin_granularity(c, "free_lunch")
    assert list(neighbors(g, D("a"))) == [D(), D("b")]


def test_neighbors_unbounded_empty():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    assert list(neighbors(builtin_granularity(c, "unbounded"), D())) == [D("a"), D("b")]


def test_neighbors_bounded_empty():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    assert list(neighbors(builtin_granularity(c, "bounded"), D())) == []


def test_unbounded_on_ordered_class_is_unsupported():
    c = enumerate_class(ClassSpec.ordered_size("ab", 2))
    with pytest.raises(UnsupportedClass):
        builtin_granularity(c, "unbounded")


def test_bounded_on_ordered_class_changes_one_label():
    c = enumerate_class(ClassSpec.ordered_size("ab", 2))
    g = builtin_granularity(c, "bounded")
    i, j = c.index(Database.ordered("ab")), c.index(Database.ordered("ba"))
    assert not g.are_neighbors(i, j)
    assert g.are_neighbors(i, c.index(Database.ordered("aa")))


def test_custom_granularity_validation():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    with pytest.raises(InvalidRelation):
        Granularity.from_edges(c, [(0, 0)])
    with pytest.raises(InvalidRelation):
        Granularity.from_edges(c, [(0, 7)])
    g = Granularity.from_edges(c, [(0, 1)], "chain")
    d = canonical_metric(g)
    assert d.dist[0, 1] == 1 and math.isinf(d.dist[0, 2])


@pytest.mark.parametrize("kind", ["unbounded", "bounded", "free_lunch"])
def test_canonical_metric_is_one_exactly_on_neighbours(kind):
    c = enumerate_class(ClassSpec.max_size("abc", 3))
    g = builtin_granularity(c, kind)
    d = canonical_metric(g).dist
    adj = np.zeros_like(d, dtype=bool)
    for i, j in g.pairs():
        adj[i, j] = adj[j, i] = True
    assert np.array_equal(d == 1, adj)
    assert canonical_metric(g).triangle_violation() is None


def test_free_lunch_all_ones():
    c = enumerate_class(ClassSpec.max_size("abc", 2))
    d = canonical_metric(builtin_granularity(c, "free_lunch")).dist
    assert np.array_equal(d, 1 - np.eye(len(c)))


def test_symmetric_difference_examples():
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    d = symmetric_difference_metric(c)
    assert d(D("a"), D("a")) == 0
    assert d(D("a", "a"), D("b")) == 3


def test_symmetric_difference_on_ordered_class_is_unsupported():
    with pytest.raises(OrderedUnsupported):
        symmetric_difference_metric(enumerate_class(ClassSpec.ordered_size("ab", 2)))


def test_unbounded_equals_symmetric_difference_on_full_class():
    c = enumerate_class(ClassSpec.max_size("abc", 3))
    assert np.array_equal(canonical_metric(builtin_granularity(c, "unbounded")).dist, symmetric_difference_metric(c).dist)


def test_exact_size_class_is_totally_disconnected_under_unbounded():
    c = enumerate_class(ClassSpec.exact_size("abc", 2))
    d = canonical_metric(builtin_granularity(c, "unbounded")).dist
    off = d[~np.eye(len(c), dtype=bool)]
    assert np.isinf(off).all()
    # restriction witness: the intrinsic metric differs from the induced one
    assert np.isfinite(symmetric_difference_metric(c).dist).all()


def test_metric_validation():
    c = enumerate_class(ClassSpec.max_size("a", 2))
    with pytest.raises(InvalidMetric):
        Metric.from_matrix(c, np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float))
    with pytest.raises(InvalidMetric):
        Metric.from_matrix(c, np.array([[0, 1, 2], [2, 0, 1], [2, 1, 0]], dtype=float))
    with pytest.raises(InvalidMetric):
        Metric.from_matrix(c, np.array([[1, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float))
    pseudo = Metric.from_matrix(c, np.array([[0, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=float))
    assert pseudo.is_pseudo


def test_metric_matrix_is_read_only():
    c = enumerate_class(ClassSpec.max_size("ab", 1))
    d = canonical_metric(builtin_granularity(c, "unbounded"))
    with pytest.raises(ValueError):
        d.dist[0, 1] = 5
