import math

import numpy as np
import pytest

from dpgranular import (
    AdaptiveKernel,
    ClassSpec,
    Database,
    adaptive_compose,
    binned_gaussian_mechanism,
    builtin_granularity,
    canonical_metric,
    counting_mechanism,
    deterministic_mechanism,
    diagnose_components,
    discrete_gaussian_mechanism,
    enumerate_class,
    gaussian_guarantee,
    geometric_mechanism,
    hockey_stick,
    identity_map,
    marginal,
    max_divergence,
    post_process,
    precompose,
    product_compose,
    pure_guarantee,
    randomized_response,
    renyi_divergence,
    tradeoff_curve,
    universe_split,
    verify_guarantee,
    zc_guarantee,
    approximate_guarantee,
)
from dpgranular.errors import ClassMismatch, DomainError, NotATuple, OutcomeCapExceeded, PrefixMismatch, RangeTooSmall
from dpgranular import kernels
from dpgranular.lab import ZC_ALPHA_GRID

import oracles

LN3 = math.log(3)


def canon(c, kind):
    return canonical_metric(builtin_granularity(c, kind))


@pytest.fixture(scope="module")
def small():
    return enumerate_class(ClassSpec.max_size("ab", 2))


def has_a(db):
    return int(db.multiplicity("a") > 0)


def test_randomized_response_rows(small):
    m = randomized_response(small, has_a, 0.25)
    np.testing.assert_allclose(m.row(Database.of([])), [0.75, 0.25], rtol=1e-15)
    np.testing.assert_allclose(m.row(Database.of(["a"])), [0.25, 0.75], rtol=1e-15)


def test_randomized_response_half_flip_is_uniform(small):
    m = randomized_response(small, has_a, 0.5)
    assert np.allclose(m.table, 0.5)
    assert max_divergence(m.table[0], m.table[1]) == 0


def test_randomized_response_max_divergence_ln3(small):
    m = randomized_response(small, has_a, 0.25)
    i, j = small.index(Database.of([])), small.index(Database.of(["a"]))
    assert max_divergence(m.table[i], m.table[j]) == pytest.approx(LN3, abs=1e-15)


def test_geometric_constant_query_identical_rows(small):
    m = geometric_mechanism(small, lambda db: 1, 0.7, (-3, 5))
    assert np.array_equal(m.log_table, np.broadcast_to(m.log_table[0], m.log_table.shape))


def test_geometric_rows_sum_to_one_and_window_checked(small):
    m = geometric_mechanism(small, lambda db: db.size, 0.9, (-2, 6))
    np.testing.assert_allclose(m.table.sum(axis=1), 1, atol=1e-12)
    with pytest.raises(RangeTooSmall):
        geometric_mechanism(small, lambda db: db.size, 0.9, (0, 1))


def test_geometric_count_is_one_unbounded_private():
    c = enumerate_class(ClassSpec.max_size("abc", 3))
    m = geometric_mechanism(c, lambda db: db.size, 1.0, (-4, 7))
    rep = verify_guarantee(m, pure_guarantee(canon(c, "unbounded"), 1.0))
    assert rep.passed
    d = canon(c, "unbounded").dist
    obs = rep.per_pair
    for i in range(len(c)):
        for j in range(len(c)):
            assert obs[i, j] == pytest.approx(abs(c[i].size - c[j].size), abs=1e-12)
    del d


def test_geometric_cross_block_divergence_adds():
    c = enumerate_class(ClassSpec.max_size("abc", 2))
    maps = universe_split(c, [["a"], ["b"], ["c"]])
    eps = (0.5, 1.0, 2.0)
    mechs = [precompose(geometric_mechanism(m.target, lambda db: db.size, e, (-2, 4)), m) for m, e in zip(maps, eps)]
    joint = product_compose(mechs)
    i, j = c.index(Database.of(["a"])), c.index(Database.of(["c"]))
    assert max_divergence(joint.table[i], joint.table[j]) == pytest.approx(2.5, abs=1e-12)


def test_counting_mechanism_point_mass():
    c = enumerate_class(ClassSpec.exact_size("ab", 3))
    maps = universe_split(c, [["a"], ["b"]])
    joint = product_compose([precompose(counting_mechanism(m.target, identity_map(m.target)), m) for m in maps])
    row = joint.row(Database.of("aaa"))
    assert row.max() == 1.0
    assert joint.outputs[int(np.argmax(row))] == (3, 0)


def test_counting_mechanism_empty_database(small):
    m = counting_mechanism(small, identity_map(small))
    assert m.row(Database.of([]))[0] == 1.0


def test_discrete_gaussian_constant_query_zero_renyi(small):
    m = discrete_gaussian_mechanism(small, lambda db: 0, 1.0, (-10, 10))
    for a in ZC_ALPHA_GRID:
        assert renyi_divergence(m.table[0], m.table[3], a) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_discrete_gaussian_quadratic_group(k):
    c = enumerate_class(ClassSpec.max_size("a", 3))
    m = discrete_gaussian_mechanism(c, lambda db: db.size, 1.0, (-150, 153))
    # linear tables underflow in the tails; the log-table kernel is the faithful route
    got = kernels.pairwise_renyi(m.log_table, np.array(ZC_ALPHA_GRID))[:, 0, k]
    np.testing.assert_allclose(got, k * k * np.array(ZC_ALPHA_GRID) / 2, atol=1e-6)


def test_binned_gaussian_rows_normalised(small):
    m = binned_gaussian_mechanism(small, lambda db: db.size, 1.0, (-8, 10))
    np.testing.assert_allclose(m.table.sum(axis=1), 1, atol=1e-12)


def test_product_with_point_mass_keeps_divergence(small):
    rr = randomized_response(small, has_a, 0.25)
    point = deterministic_mechanism(small, lambda db: "x")
    joint = product_compose([rr, point])
    assert np.allclose(marginal(joint, 0).table, rr.table)
    assert max_divergence(joint.table[0], joint.table[1]) == pytest.approx(LN3, abs=1e-12)


def test_two_randomized_responses_double_divergence(small):
    rr = randomized_response(small, has_a, 0.25)
    joint = product_compose([rr, rr])
    assert len(joint.outputs) == 4
    assert max_divergence(joint.table[0], joint.table[1]) == pytest.approx(2 * LN3, abs=1e-12)


def test_product_cap(small):
    rr = randomized_response(small, has_a, 0.25)
    with pytest.raises(OutcomeCapExceeded):
        product_compose([rr] * 5, cap=16)


def test_adaptive_constant_kernels_equal_product(small):
    rr = randomized_response(small, has_a, 0.25)
    k0 = AdaptiveKernel(0, rr.outputs, {(): rr.table})
    k1 = AdaptiveKernel(1, rr.outputs, {(o,): rr.table for o in rr.outputs})
    a = adaptive_compose(small, [k0, k1])
    p = product_compose([rr, rr])
    assert np.allclose(a.table, p.table, atol=1e-15)


def _flip_query_kernels(c, eps):
    p = math.exp(eps) / (1 + math.exp(eps))
    first = np.array([[p, 1 - p] if db.multiplicity("a") else [1 - p, p] for db in c])
    second_same = np.array([[p, 1 - p] if db.multiplicity("b") else [1 - p, p] for db in c])
    second_flip = second_same[:, ::-1]
    k0 = AdaptiveKernel(0, (0, 1), {(): first})
    k1 = AdaptiveKernel(1, (0, 1), {(0,): second_same, (1,): second_flip})
    return k0, k1


def test_adaptive_prefix_dependent_query_passes_sum():
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    eps = 0.8
    joint = adaptive_compose(c, list(_flip_query_kernels(c, eps)))
    dU = canon(c, "unbounded")
    assert verify_guarantee(joint, pure_guarantee(dU, 2 * eps), builtin_granularity(c, "unbounded")).passed


def test_adaptive_marginals_pass():
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    joint = adaptive_compose(c, list(_flip_query_kernels(c, 0.8)))
    reps = diagnose_components(joint, pure_guarantee(canon(c, "unbounded"), 1.6), builtin_granularity(c, "unbounded"))
    assert all(r.passed for r in reps)


def test_adaptive_missing_prefix_rejected(small):
    k0 = AdaptiveKernel(0, (0, 1), {(): np.tile([0.5, 0.5], (len(small), 1))})
    k1 = AdaptiveKernel(1, (0, 1), {(0,): np.tile([0.5, 0.5], (len(small), 1))})
    with pytest.raises(PrefixMismatch):
        adaptive_compose(small, [k0, k1])
    with pytest.raises(PrefixMismatch):
        adaptive_compose(small, [k1])


def test_post_process_identity_constant_merge(small):
    rr = randomized_response(small, has_a, 0.25)
    same = post_process(rr, lambda o: o)
    assert np.allclose(same.table, rr.table)
    const = post_process(rr, lambda o: "z")
    assert np.allclose(const.table, 1.0)
    merged = post_process(rr, {0: "x", 1: "x"})
    assert max_divergence(merged.table[0], merged.table[1]) <= max_divergence(rr.table[0], rr.table[1])


def test_marginal_needs_tuples(small):
    with pytest.raises(NotATuple):
        marginal(randomized_response(small, has_a, 0.25), 0)


# ---------------------------------------------------------------------------
# divergences


def test_max_divergence_examples():
    assert max_divergence([0.3, 0.7], [0.3, 0.7]) == 0
    assert max_divergence([0.75, 0.25], [0.25, 0.75]) == pytest.approx(LN3, abs=1e-15)
    assert max_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert math.isinf(max_divergence([0.5, 0.5], [1, 0]))


def test_hockey_stick_examples():
    assert hockey_stick([0.4, 0.6], [0.4, 0.6], 0) == 0
    assert hockey_stick([0.75, 0.25], [0.25, 0.75], 0) == pytest.approx(0.5, abs=1e-15)
    assert hockey_stick([0.75, 0.25], [0.25, 0.75], LN3) == pytest.approx(0.0, abs=1e-15)


def test_renyi_examples():
    assert renyi_divergence([0.2, 0.8], [0.2, 0.8], 4) == pytest.approx(0, abs=1e-15)
    want = math.log(0.75 ** 2 / 0.25 + 0.25 ** 2 / 0.75)
    assert renyi_divergence([0.75, 0.25], [0.25, 0.75], 2) == pytest.approx(want, abs=1e-14)
    assert want == pytest.approx(0.8473, abs=1e-4)
    assert renyi_divergence([0.75, 0.25], [0.25, 0.75], math.inf) == pytest.approx(LN3, abs=1e-15)
    assert renyi_divergence([0.75, 0.25], [0.25, 0.75], 1e6) == pytest.approx(LN3, abs=1e-6)
    with pytest.raises(DomainError):
        renyi_divergence([0.5, 0.5], [0.5, 0.5], 1.0)


@pytest.mark.parametrize("seed", range(25))
def test_divergences_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 7))
    p, q = rng.random(m) ** 2, rng.random(m) ** 2
    if seed % 3 == 0:
        p[0] = 0.0
    p, q = p / p.sum(), q / q.sum()
    assert max_divergence(p, q) == pytest.approx(oracles.brute_max_divergence(p, q), abs=1e-12)
    for eps in (0.0, 0.3, 1.2):
        assert hockey_stick(p, q, eps) == pytest.approx(oracles.brute_hockey_stick(p, q, eps), abs=1e-12)
    for a in (1.25, 2.0, 8.0):
        assert renyi_divergence(p, q, a) == pytest.approx(oracles.brute_renyi(p, q, a), rel=1e-10, abs=1e-12)
    curve = tradeoff_curve(p, q)
    for a in np.linspace(0, 1, 17):
        assert curve(float(a)) == pytest.approx(oracles.brute_tradeoff(p, q, float(a)), abs=1e-12)


def test_tradeoff_examples():
    assert tradeoff_curve([0.5, 0.5], [0.5, 0.5]).vertices == ((0.0, 1.0), (1.0, 0.0))
    assert tradeoff_curve([1.0, 0.0], [0.0, 1.0]).vertices == ((0.0, 0.0),)
    assert tradeoff_curve([0.75, 0.25], [0.25, 0.75]).vertices == ((0.0, 1.0), (0.25, 0.25), (1.0, 0.0))


@pytest.mark.parametrize("seed", range(10))
def test_tradeoff_duality_with_hockey_stick(seed):
    rng = np.random.default_rng(100 + seed)
    p, q = rng.random(6) + 0.05, rng.random(6) + 0.05
    p, q = p / p.sum(), q / q.sum()
    curve = tradeoff_curve(p, q)
    assert curve.is_convex()
    for eps in (0.0, 0.2, 0.9):
        assert curve.support(eps) == pytest.approx(hockey_stick(q, p, eps), abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_renyi_non_decreasing_in_alpha(seed):
    rng = np.random.default_rng(200 + seed)
    p, q = rng.random(5) + 0.01, rng.random(5) + 0.01
    p, q = p / p.sum(), q / q.sum()
    vals = [renyi_divergence(p, q, a) for a in ZC_ALPHA_GRID]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# verification


def test_example1_counting_fails_bounded():
    c = enumerate_class(ClassSpec.exact_size("ab", 3))
    maps = universe_split(c, [["a"], ["b"]])
    joint = product_compose([precompose(counting_mechanism(m.target, identity_map(m.target)), m) for m in maps])
    rep = verify_guarantee(joint, pure_guarantee(canon(c, "bounded"), 1.0), builtin_granularity(c, "bounded"))
    assert not rep.passed
    assert rep.worst_pair == (c.index(Database.of("aaa")), c.index(Database.of("aab")))
    assert math.isinf(rep.per_pair[rep.worst_pair])
    reps = diagnose_components(joint, pure_guarantee(canon(c, "bounded"), 1.0), builtin_granularity(c, "bounded"))
    assert [r.passed for r in reps] == [False, False]


def test_verify_class_mismatch(small):
    other = enumerate_class(ClassSpec.max_size("ab", 1))
    with pytest.raises(ClassMismatch):
        verify_guarantee(randomized_response(small, has_a, 0.25), pure_guarantee(canon(other, "unbounded"), 1))


def test_verify_reports_zc_grid_note(small):
    m = discrete_gaussian_mechanism(small, lambda db: db.size, 2.0, (-40, 42))
    rep = verify_guarantee(m, zc_guarantee(canon(small, "unbounded"), 1 / 8 + 1e-6))
    assert rep.passed and rep.note == "grid-verified"


def test_verify_approximate(small):
    rr = randomized_response(small, has_a, 0.25)
    dU = canon(small, "unbounded")
    assert verify_guarantee(rr, approximate_guarantee(dU, 0.0, 0.5)).passed
    assert not verify_guarantee(rr, approximate_guarantee(dU, 0.0, 0.49)).passed


def test_verify_gaussian_binned(small):
    m = binned_gaussian_mechanism(small, lambda db: db.size, 1.0, (-10, 12))
    assert verify_guarantee(m, gaussian_guarantee(canon(small, "unbounded"), 1.0)).passed
    assert not verify_guarantee(m, gaussian_guarantee(canon(small, "unbounded"), 0.5)).passed


def test_infinite_bounds_pass_vacuously():
    c = enumerate_class(ClassSpec.exact_size("ab", 2))
    m = deterministic_mechanism(c, lambda db: db.key)
    rep = verify_guarantee(m, pure_guarantee(canon(c, "unbounded"), 1.0))
    assert rep.passed and rep.worst_pair is None
