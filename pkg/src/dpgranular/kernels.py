"""Numeric kernels with a numba implementation and a pure-numpy twin.

Every public function here dispatches on :data:`dpgranular._backend.BACKEND`.
Both implementations are importable through :func:`implementation` so tests
and the benchmark can compare them directly.

Conventions shared by all kernels:

* distances are ``float64`` with ``np.inf`` for "unreachable";
* probability tables arrive as log-probabilities, ``-np.inf`` meaning zero mass;
* rows of a table are databases, columns are outcomes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from ._backend import BACKEND, HAVE_NUMBA, njit

NEG_INF = -np.inf

# ---------------------------------------------------------------------------
# all-pairs BFS over a CSR adjacency


def _bfs_all_pairs_loop(indptr, indices, n):
    out = np.full((n, n), np.inf)
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    for s in range(n):
        for v in range(n):
            level[v] = -1
        level[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if level[v] < 0:
                    level[v] = level[u] + 1
                    queue[tail] = v
                    tail += 1
        for v in range(n):
            if level[v] >= 0:
                out[s, v] = level[v]
    return out


def _bfs_all_pairs_numpy(indptr, indices, n, chunk=256):
    # Level-synchronous BFS from a block of sources at once.
    out = np.full((n, n), np.inf)
    degree = np.diff(indptr)
    active = degree > 0
    starts = indptr[:-1][active]
    for lo in range(0, n, chunk):
        src = np.arange(lo, min(n, lo + chunk))
        rows = np.arange(src.size)
        visited = np.zeros((src.size, n), dtype=bool)
        visited[rows, src] = True
        out[src, src] = 0.0
        frontier = visited.copy()
        level = 0
        while indices.size and frontier.any():
            level += 1
            reached = np.zeros_like(visited)
            reached[:, active] = np.logical_or.reduceat(frontier[:, indices], starts, axis=1)
            fresh = reached & ~visited
            r, c = np.nonzero(fresh)
            out[src[r], c] = level
            visited |= fresh
            frontier = fresh
    return out


# ---------------------------------------------------------------------------
# pairwise L1 between count vectors (multiset symmetric difference)


def _pairwise_l1_loop(counts):
    n, m = counts.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0
            for x in range(m):
                acc += abs(counts[i, x] - counts[j, x])
            out[i, j] = acc
            out[j, i] = acc
    return out


def _pairwise_l1_numpy(counts, chunk=128):
    n = counts.shape[0]
    out = np.empty((n, n))
    for lo in range(0, n, chunk):
        block = counts[lo:lo + chunk]
        out[lo:lo + chunk] = np.abs(block[:, None, :] - counts[None, :, :]).sum(axis=2)
    return out


# ---------------------------------------------------------------------------
# fibre-wise minima: B[a, b] = min{d[i, j] : labels[i] = a, labels[j] = b}


def _fiber_min_loop(d, labels, n_labels):
    out = np.full((n_labels, n_labels), np.inf)
    n = d.shape[0]
    for i in range(n):
        a = labels[i]
        for j in range(n):
            v = d[i, j]
            b = labels[j]
            if v < out[a, b]:
                out[a, b] = v
    return out


def _fiber_min_tiebreak_loop(d, delta, labels, n_labels):
    best = np.full((n_labels, n_labels), np.inf)
    best_delta = np.full((n_labels, n_labels), np.inf)
    n = d.shape[0]
    for i in range(n):
        a = labels[i]
        for j in range(n):
            v = d[i, j]
            b = labels[j]
            if v < best[a, b]:
                best[a, b] = v
                best_delta[a, b] = delta[i, j]
            elif v == best[a, b] and delta[i, j] < best_delta[a, b]:
                best_delta[a, b] = delta[i, j]
    return best, best_delta


def _segments(labels):
    order = np.argsort(labels, kind="stable")
    ordered = labels[order]
    starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
    return order, starts


def _fiber_min_numpy(d, labels, n_labels):
    order, starts = _segments(labels)
    rows = np.minimum.reduceat(d[order], starts, axis=0)
    return np.minimum.reduceat(rows[:, order], starts, axis=1)


def _fiber_min_tiebreak_numpy(d, delta, labels, n_labels):
    best = _fiber_min_numpy(d, labels, n_labels)
    attained = d == best[np.ix_(labels, labels)]
    masked = np.where(attained, delta, np.inf)
    return best, _fiber_min_numpy(masked, labels, n_labels)


# ---------------------------------------------------------------------------
# pairwise divergences between rows of a log-probability table


def _max_divergence_loop(logtab):
    n, m = logtab.shape
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            best = NEG_INF
            for s in range(m):
                lp = logtab[i, s]
                if lp == NEG_INF:
                    continue
                lq = logtab[j, s]
                if lq == NEG_INF:
                    best = np.inf
                    break
                if lp - lq > best:
                    best = lp - lq
            out[i, j] = best
    return out


def _max_divergence_numpy(logtab):
    n = logtab.shape[0]
    out = np.empty((n, n))
    with np.errstate(invalid="ignore"):
        for i in range(n):
            lp = logtab[i]
            support = lp > NEG_INF
            diff = lp[support][None, :] - logtab[:, support]
            out[i] = diff.max(axis=1)
    return out


def _renyi_loop(logtab, alphas):
    n, m = logtab.shape
    out = np.empty((alphas.shape[0], n, n))
    terms = np.empty(m)
    for a in range(alphas.shape[0]):
        alpha = alphas[a]
        for i in range(n):
            for j in range(n):
                top = NEG_INF
                k = 0
                infinite = False
                for s in range(m):
                    lp = logtab[i, s]
                    if lp == NEG_INF:
                        continue
                    lq = logtab[j, s]
                    if lq == NEG_INF:
                        infinite = True
                        break
                    t = alpha * lp + (1.0 - alpha) * lq
                    terms[k] = t
                    k += 1
                    if t > top:
                        top = t
                if infinite:
                    out[a, i, j] = np.inf
                    continue
                acc = 0.0
                for t in range(k):
                    acc += math.exp(terms[t] - top)
                out[a, i, j] = (top + math.log(acc)) / (alpha - 1.0)
    return out


def _renyi_numpy(logtab, alphas):
    n = logtab.shape[0]
    out = np.empty((alphas.shape[0], n, n))
    with np.errstate(invalid="ignore", over="ignore"):
        for a, alpha in enumerate(alphas):
            for i in range(n):
                lp = logtab[i]
                support = lp > NEG_INF
                lq = logtab[:, support]
                t = alpha * lp[support][None, :] + (1.0 - alpha) * lq
                top = t.max(axis=1, keepdims=True)
                finite = np.isfinite(top[:, 0])
                lse = np.full(n, np.inf)
                lse[finite] = top[finite, 0] + np.log(np.exp(t[finite] - top[finite]).sum(axis=1))
                out[a, i] = lse / (alpha - 1.0)
    return out


def _hockey_stick_loop(table, eps):
    n, m = table.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            e = eps[i, j]
            if e == np.inf:
                continue
            factor = math.exp(e) if e < 709.0 else np.inf
            acc = 0.0
            for s in range(m):
                p = table[i, s]
                q = table[j, s]
                gap = p if q == 0.0 else p - factor * q
                if gap > 0.0:
                    acc += gap
            out[i, j] = acc
    return out


def _hockey_stick_numpy(table, eps):
    n = table.shape[0]
    out = np.zeros((n, n))
    with np.errstate(over="ignore", invalid="ignore"):
        factor = np.exp(eps)
        for i in range(n):
            scaled = factor[i][:, None] * table
            scaled = np.where(table == 0.0, 0.0, scaled)
            out[i] = np.maximum(table[i][None, :] - scaled, 0.0).sum(axis=1)
    out[np.isinf(eps)] = 0.0
    return out


# ---------------------------------------------------------------------------
# trade-off curves


def _curve_loop(lp, lq, xs, ys, keys):
    # Vertices of T(P, Q): reject outcomes by decreasing q/p.  Outcomes with
    # p = 0 are rejected for free and collapse into the starting vertex.
    m = lp.shape[0]
    q_free = 0.0
    for s in range(m):
        if lp[s] == NEG_INF:
            keys[s] = np.inf
            if lq[s] > NEG_INF:
                q_free += math.exp(lq[s])
        elif lq[s] == NEG_INF:
            keys[s] = np.inf  # sorted last after the negation below
        else:
            keys[s] = lp[s] - lq[s]
    order = np.argsort(keys, kind="mergesort")
    xs[0] = 0.0
    ys[0] = max(0.0, 1.0 - q_free)
    k = 1
    a = 0.0
    b = q_free
    for t in range(m):
        s = order[t]
        if lp[s] == NEG_INF:
            continue
        a += math.exp(lp[s])
        if lq[s] > NEG_INF:
            b += math.exp(lq[s])
        xs[k] = min(a, 1.0)
        ys[k] = max(0.0, 1.0 - b)
        k += 1
    return k


def _eval_curve_loop(xs, ys, k, x):
    lo = 0
    hi = k - 1
    if x >= xs[hi]:
        return ys[hi]
    # last vertex with xs <= x
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    while lo + 1 < k and xs[lo + 1] <= x:
        lo += 1
    span = xs[lo + 1] - xs[lo]
    return ys[lo] + (ys[lo + 1] - ys[lo]) * (x - xs[lo]) / span


def _tradeoff_slack_loop(logtab, grid, zgrid, mu):
    n, m = logtab.shape
    g = grid.shape[0]
    slack = np.full((n, n), np.inf)
    where = np.full((n, n), -1, np.int64)
    xs = np.empty(m + 1)
    ys = np.empty(m + 1)
    keys = np.empty(m)
    for i in range(n):
        for j in range(n):
            if i == j or mu[i, j] == np.inf:
                continue
            k = _curve_loop(logtab[i], logtab[j], xs, ys, keys)
            for t in range(g):
                target = 0.5 * math.erfc(-(zgrid[t] - mu[i, j]) / math.sqrt(2.0))
                gap = _eval_curve_loop(xs, ys, k, grid[t]) - target
                if gap < slack[i, j]:
                    slack[i, j] = gap
                    where[i, j] = t
    return slack, where


def curve_vertices_numpy(lp, lq):
    """Return the vertex arrays ``(xs, ys)`` of ``T(P, Q)`` from log-probabilities."""
    p_free = lp == NEG_INF
    q_free = float(np.exp(lq[p_free]).sum())
    keep = ~p_free
    keys = np.where(np.isneginf(lq[keep]), np.inf, lp[keep] - lq[keep])
    order = np.argsort(keys, kind="mergesort")
    p = np.exp(lp[keep][order])
    q = np.exp(lq[keep][order])
    xs = np.minimum(np.r_[0.0, np.cumsum(p)], 1.0)
    ys = np.maximum(1.0 - (q_free + np.r_[0.0, np.cumsum(q)]), 0.0)
    return xs, ys


def eval_curve_numpy(xs, ys, x):
    """Evaluate the piecewise-linear curve with vertices ``xs, ys`` at ``x``."""
    x = np.asarray(x, dtype=float)
    k = xs.size
    lo = np.searchsorted(xs, x, side="right") - 1
    lo = np.clip(lo, 0, k - 1)
    at_end = lo >= k - 1
    hi = np.minimum(lo + 1, k - 1)
    span = xs[hi] - xs[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(at_end, 0.0, (x - xs[lo]) / np.where(span > 0, span, 1.0))
    return ys[lo] + (ys[hi] - ys[lo]) * frac


def _tradeoff_slack_numpy(logtab, grid, zgrid, mu):
    n = logtab.shape[0]
    slack = np.full((n, n), np.inf)
    where = np.full((n, n), -1, np.int64)
    for i in range(n):
        for j in range(n):
            if i == j or np.isinf(mu[i, j]):
                continue
            xs, ys = curve_vertices_numpy(logtab[i], logtab[j])
            gap = eval_curve_numpy(xs, ys, grid) - ndtr(zgrid - mu[i, j])
            t = int(np.argmin(gap))
            slack[i, j] = gap[t]
            where[i, j] = t
    return slack, where


# ---------------------------------------------------------------------------
# triangle inequality witness search


def _triangle_loop(d, tol):
    n = d.shape[0]
    out = np.full(3, -1, np.int64)
    for i in range(n):
        for j in range(n):
            dij = d[i, j]
            for k in range(n):
                if d[i, k] > dij + d[j, k] + tol:
                    out[0] = i
                    out[1] = j
                    out[2] = k
                    return out
    return out


def _triangle_numpy(d, tol):
    n = d.shape[0]
    best = None
    for j in range(n):
        bad = d > d[:, j:j + 1] + d[j:j + 1, :] + tol
        if not bad.any():
            continue
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        k = int(np.flatnonzero(bad[i])[0])
        if best is None or (i, j, k) < best:
            best = (i, j, k)
    return np.array(best if best is not None else (-1, -1, -1), dtype=np.int64)


# ---------------------------------------------------------------------------
# dispatch

_NUMPY = {
    "bfs_all_pairs": _bfs_all_pairs_numpy,
    "pairwise_l1": _pairwise_l1_numpy,
    "fiber_min": _fiber_min_numpy,
    "fiber_min_tiebreak": _fiber_min_tiebreak_numpy,
    "max_divergence": _max_divergence_numpy,
    "renyi": _renyi_numpy,
    "hockey_stick": _hockey_stick_numpy,
    "tradeoff_slack": _tradeoff_slack_numpy,
    "triangle": _triangle_numpy,
}

if HAVE_NUMBA:
    _curve_loop = njit(_curve_loop)
    _eval_curve_loop = njit(_eval_curve_loop)
    _NUMBA = {
        "bfs_all_pairs": njit(_bfs_all_pairs_loop),
        "pairwise_l1": njit(_pairwise_l1_loop),
        "fiber_min": njit(_fiber_min_loop),
        "fiber_min_tiebreak": njit(_fiber_min_tiebreak_loop),
        "max_divergence": njit(_max_divergence_loop),
        "renyi": njit(_renyi_loop),
        "hockey_stick": njit(_hockey_stick_loop),
        "tradeoff_slack": njit(_tradeoff_slack_loop),
        "triangle": njit(_triangle_loop),
    }
else:  # pragma: no cover
    _NUMBA = dict(_NUMPY)


def implementation(name: str, backend: str | None = None):
    """Return the raw kernel ``name`` for ``backend`` (default: active backend)."""
    backend = backend or BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")
    return (_NUMBA if backend == "numba" else _NUMPY)[name]


def bfs_all_pairs(indptr, indices, backend=None) -> np.ndarray:
    """All-pairs hop distances of an undirected graph in CSR form."""
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    return implementation("bfs_all_pairs", backend)(indptr, indices, indptr.size - 1)


def pairwise_l1(counts, backend=None) -> np.ndarray:
    """L1 distances between integer count vectors (rows)."""
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    return implementation("pairwise_l1", backend)(counts)


def fiber_min(d, labels, n_labels, backend=None) -> np.ndarray:
    """Minimum of ``d`` over each product of label fibres.

    ``labels`` must use every value in ``0..n_labels-1``.
    """
    d = np.ascontiguousarray(d, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return implementation("fiber_min", backend)(d, labels, int(n_labels))


def fiber_min_tiebreak(d, delta, labels, n_labels, backend=None):
    """Like :func:`fiber_min`, also returning the least ``delta`` among minimisers."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return implementation("fiber_min_tiebreak", backend)(d, delta, labels, int(n_labels))


def pairwise_max_divergence(logtab, backend=None) -> np.ndarray:
    """``out[i, j] = D_inf(P_i || P_j)`` for every ordered pair of rows."""
    logtab = np.ascontiguousarray(logtab, dtype=np.float64)
    return implementation("max_divergence", backend)(logtab)


def pairwise_renyi(logtab, alphas, backend=None) -> np.ndarray:
    """``out[a, i, j] = D_alpha_a(P_i || P_j)`` for finite ``alpha > 1``."""
    logtab = np.ascontiguousarray(logtab, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    return implementation("renyi", backend)(logtab, alphas)


def pairwise_hockey_stick(table, eps, backend=None) -> np.ndarray:
    """``out[i, j] = sum_s max(0, p_i(s) - exp(eps[i, j]) p_j(s))``; zero where eps is inf."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    return implementation("hockey_stick", backend)(table, eps)


def pairwise_tradeoff_slack(logtab, grid, zgrid, mu, backend=None):
    """Minimum over the grid of ``T(P_i, P_j) - G_mu[i, j]`` and its grid index.

    ``zgrid`` holds ``Phi^{-1}(1 - grid)``.  Pairs with ``mu = inf`` and the
    diagonal are skipped (slack ``inf``, index ``-1``).
    """
    logtab = np.ascontiguousarray(logtab, dtype=np.float64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    zgrid = np.ascontiguousarray(zgrid, dtype=np.float64)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    return implementation("tradeoff_slack", backend)(logtab, grid, zgrid, mu)


def triangle_violation(d, tol=0.0, backend=None):
    """Lexicographically first ``(i, j, k)`` with ``d[i,k] > d[i,j] + d[j,k] + tol``, or None."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    out = implementation("triangle", backend)(d, float(tol))
    return None if out[0] < 0 else tuple(int(v) for v in out)
