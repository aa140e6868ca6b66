"""Independent oracles used by the test suite.

These deliberately avoid the library's solver paths: exact transport is
minimized by enumerating every basic feasible solution (spanning trees of
the bipartite class graph), and gradients are checked by central finite
differences.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np


@lru_cache(maxsize=None)
def _spanning_trees(n: int, m: int):
    """All spanning trees of K_{n,m} as tuples of (i, j) edges."""
    edges = [(i, j) for i in range(n) for j in range(m)]
    trees = []
    for subset in combinations(edges, n + m - 1):
        parent = list(range(n + m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for i, j in subset:
            ra, rb = find(i), find(n + j)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            trees.append(subset)
    return tuple(trees)


def _solve_tree(tree, s, t):
    """Unique flow on a spanning tree matching the marginals (may be negative)."""
    n, m = s.size, t.size
    supply = s.astype(float).copy()
    demand = t.astype(float).copy()
    incident = {k: [] for k in range(n + m)}
    for eid, (i, j) in enumerate(tree):
        incident[i].append(eid)
        incident[n + j].append(eid)
    alive = [True] * len(tree)
    degree = {k: len(v) for k, v in incident.items()}
    leaves = [k for k in range(n + m) if degree[k] == 1]
    flow = {}
    while leaves:
        node = leaves.pop()
        eid = next((e for e in incident[node] if alive[e]), None)
        if eid is None:
            continue
        i, j = tree[eid]
        if node < n:  # row leaf ships all remaining supply
            q = supply[i]
            supply[i] = 0.0
            demand[j] -= q
        else:  # column leaf absorbs all remaining demand
            q = demand[j]
            demand[j] = 0.0
            supply[i] -= q
        flow[(i, j)] = q
        alive[eid] = False
        other = (n + j) if node < n else i
        degree[other] -= 1
        if degree[other] == 1:
            leaves.append(other)
    return flow


def brute_force_wasserstein(s, t, costs) -> float:
    """Exact minimum transport cost by enumerating basic feasible solutions."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    costs = np.asarray(costs, dtype=float)
    best = np.inf
    for tree in _spanning_trees(s.size, t.size):
        flow = _solve_tree(tree, s, t)
        if flow is None or any(q < -1e-12 for q in flow.values()):
            continue
        cost = sum(costs[c] * q for c, q in flow.items())
        best = min(best, cost)
    return float(best)


def central_difference_grad(f, x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step.flat[k] = h
        grad.flat[k] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(numeric), 1e-12)
    return float(num / den)
