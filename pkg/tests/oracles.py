"""Independent reference implementations used only by the tests.

Everything here is deliberately naive: plain Python loops, exact rationals or
mpmath where it matters, and no code shared with the package.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import mpmath
import numpy as np

INF = math.inf


def floyd_warshall(n: int, edges) -> np.ndarray:
    """All-pairs hop distances of an undirected graph (min-plus relaxation per pivot)."""
    d = np.full((n, n), INF)
    np.fill_diagonal(d, 0.0)
    for i, j in edges:
        d[i, j] = d[j, i] = 1.0
    for k in range(n):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return d


def multisets(universe, max_size: int, exact: bool = False) -> list[Counter]:
    """Multisets over ``universe`` of size <= max_size (or == when ``exact``)."""
    out = []
    sizes = [max_size] if exact else range(max_size + 1)
    for s in sizes:
        for combo in itertools.combinations_with_replacement(sorted(universe), s):
            out.append(Counter(combo))
    return out


def stars_and_bars(k: int, n: int) -> int:
    """Number of multisets of size <= n over k labels."""
    return sum(math.comb(s + k - 1, k - 1) for s in range(n + 1))


def counter_key(c: Counter) -> tuple:
    return tuple(sorted((x, m) for x, m in c.items() if m))


def sym_diff(a: Counter, b: Counter) -> int:
    keys = set(a) | set(b)
    return sum(abs(a[k] - b[k]) for k in keys)


def unbounded_edges(dbs) -> list[tuple[int, int]]:
    return [(i, j) for i, j in itertools.combinations(range(len(dbs)), 2)
            if sym_diff(dbs[i], dbs[j]) == 1]


def bounded_edges(dbs) -> list[tuple[int, int]]:
    out = []
    for i, j in itertools.combinations(range(len(dbs)), 2):
        a, b = dbs[i], dbs[j]
        if sum(a.values()) == sum(b.values()) and sym_diff(a, b) == 2:
            out.append((i, j))
    return out


def brute_fiber_min(d, labels) -> list[list[float]]:
    """``d^f(i, j) = min{d(a, b) : f(a) = f(i), f(b) = f(j)}`` by direct enumeration."""
    n = len(labels)
    fibers: dict = {}
    for a, lab in enumerate(labels):
        fibers.setdefault(lab, []).append(a)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            out[i][j] = min(d[a][b] for a in fibers[labels[i]] for b in fibers[labels[j]])
    return out


def brute_max_divergence(p, q) -> float:
    best = 0.0
    for a, b in zip(p, q):
        if a > 0 and b == 0:
            return INF
        if a > 0:
            best = max(best, math.log(a / b))
    return best


def brute_hockey_stick(p, q, eps) -> float:
    """``sup_S P(S) - e^eps Q(S)`` over every event ``S``."""
    n = len(p)
    best = 0.0
    for r in range(n + 1):
        for s in itertools.combinations(range(n), r):
            best = max(best, sum(p[k] for k in s) - math.exp(eps) * sum(q[k] for k in s))
    return best


def brute_renyi(p, q, alpha) -> float:
    mpmath.mp.dps = 40
    total = mpmath.mpf(0)
    for a, b in zip(p, q):
        if a == 0:
            continue
        if b == 0:
            return INF
        total += mpmath.mpf(a) ** alpha * mpmath.mpf(b) ** (1 - alpha)
    return float(mpmath.log(total) / (alpha - 1))


def brute_tradeoff(p, q, alpha: float) -> float:
    """Lower convex envelope of ``(P(S), 1 - Q(S))`` over all events, at ``alpha``."""
    n = len(p)
    pts = set()
    for r in range(n + 1):
        for s in itertools.combinations(range(n), r):
            pts.add((sum(p[k] for k in s), 1.0 - sum(q[k] for k in s)))
    pts = sorted(pts)
    best = INF
    for (x1, y1), (x2, y2) in itertools.combinations(pts, 2):
        if x1 <= alpha <= x2 and x2 > x1:
            t = (alpha - x1) / (x2 - x1)
            best = min(best, y1 + t * (y2 - y1))
    for x, y in pts:
        if abs(x - alpha) < 1e-15:
            best = min(best, y)
    return max(best, 0.0)


def normal_cdf(x: float) -> float:
    mpmath.mp.dps = 40
    return float(mpmath.ncdf(x))


def gaussian_tradeoff(mu: float, alpha: float) -> float:
    """``Phi(Phi^{-1}(1 - alpha) - mu)`` in high precision."""
    mpmath.mp.dps = 40
    if alpha <= 0:
        return 1.0
    if alpha >= 1:
        return 0.0
    z = mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(alpha))
    return float(mpmath.ncdf(z - mu))


def brute_sensitivity(image, d1, d2) -> float:
    best = 0.0
    n = len(image)
    for i in range(n):
        for j in range(n):
            num = d2[image[i]][image[j]]
            den = d1[i][j]
            if den == INF or num == 0:
                continue
            if den == 0:
                return INF
            best = max(best, num / den)
    return best
