"""Slow reference implementations used as independent checks."""

import itertools

import numpy as np


def frechet_by_couplings(a, b) -> float:
    """Minimax leash length over every monotone coupling, enumerated explicitly."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    best = np.inf

    def walk(i, j, worst):
        nonlocal best
        worst = max(worst, float(np.linalg.norm(a[i] - b[j])))
        if worst >= best:
            return
        if i == n - 1 and j == m - 1:
            best = worst
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, worst)
        if i + 1 < n:
            walk(i + 1, j, worst)
        if j + 1 < m:
            walk(i, j + 1, worst)

    walk(0, 0, 0.0)
    return best


def assignment_by_permutations(c) -> float:
    c = np.asarray(c, dtype=float)
    n = len(c)
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def complete_linkage_naive(points, threshold: float) -> list[frozenset]:
    """Merge the closest pair of clusters (max pairwise distance) until none is below threshold."""
    points = np.asarray(points, dtype=float)
    clusters = [[i] for i in range(len(points))]
    D = np.linalg.norm(points[:, None] - points[None], axis=-1)
    while len(clusters) > 1:
        best, pair = np.inf, None
        for x in range(len(clusters)):
            for y in range(x + 1, len(clusters)):
                d = max(D[i, j] for i in clusters[x] for j in clusters[y])
                if d < best:
                    best, pair = d, (x, y)
        if best >= threshold:
            break
        x, y = pair
        clusters[x] = clusters[x] + clusters[y]
        del clusters[y]
    return sorted(frozenset(c) for c in clusters)


def ks_by_pooled_points(a, b) -> float:
    """Largest ECDF gap, evaluated by counting at every pooled sample."""
    a = list(map(float, a))
    b = list(map(float, b))
    best = 0.0
    for x in a + b:
        fa = sum(v <= x for v in a) / len(a)
        fb = sum(v <= x for v in b) / len(b)
        best = max(best, abs(fa - fb))
    return best


def kolmogorov_series(lam: float, terms: int = 200) -> float:
    """Kolmogorov survival function from its two classical series.

    Q(lam) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2) for lam >= 0.5, and
    Q(lam) = 1 - sqrt(2 pi)/lam sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8 lam^2))
    below, where the alternating series converges slowly.
    """
    if lam <= 0:
        return 1.0
    k = np.arange(1, terms + 1, dtype=float)
    if lam >= 0.5:
        q = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    else:
        q = 1.0 - np.sqrt(2 * np.pi) / lam * np.sum(np.exp(-(2 * k - 1) ** 2 * np.pi ** 2
                                                          / (8 * lam * lam)))
    return float(min(max(q, 0.0), 1.0))
