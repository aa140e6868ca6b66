"""Exact and entropic discrete optimal-transport losses over class
histograms, with subgradients w.r.t. the prediction histogram."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

MASS_TOL = 1e-6
PLAN_TOL = 1e-8
SINKHORN_TOL = 1e-9
SINKHORN_MAX_ITER = 10000
# zero histogram entries are floored to this inside Sinkhorn iterations only
_SINKHORN_FLOOR = 1e-30
_REDUCED_COST_TOL = 1e-12


class OtError(ValueError):
    """Invalid input to an optimal-transport operation."""


def _as_hist(x, name: str) -> np.ndarray:
    h = np.asarray(x, dtype=float).ravel()
    if h.size == 0:
        raise OtError(f"{name} is empty")
    if not np.all(np.isfinite(h)):
        raise OtError(f"{name} has non-finite entries")
    if np.any(h < 0):
        raise OtError(f"{name} has negative entries")
    return h


def _as_costs(D, n: int) -> np.ndarray:
    costs = np.asarray(D, dtype=float)
    if costs.shape != (n, n):
        raise OtError(f"ground matrix shape {costs.shape} does not match {n} classes")
    return costs


def normalize_histogram(x) -> np.ndarray:
    """Rescale a nonnegative vector to unit mass."""
    h = _as_hist(x, "histogram")
    total = h.sum()
    if total <= 0:
        raise OtError("histogram has zero total mass")
    return h / total


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Nonnegative mass flow from a source to a target histogram."""

    flow: np.ndarray
    source: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class PlanViolation:
    """One failed transport constraint with the worst offending cell."""

    kind: str  # "negative" | "row_marginal" | "col_marginal" | "total_mass"
    index: tuple | int | None
    magnitude: float


@dataclass(frozen=True, eq=False)
class OtResult:
    """Transport cost, one optimal (or converged) plan and a subgradient.

    ``cost`` is always <flow, D>.  For Sinkhorn results ``reg_cost`` holds
    the entropic objective value (the quantity whose exact gradient w.r.t.
    the source histogram is the returned dual potential) and ``converged``
    reports whether the marginal residuals reached tolerance.
    """

    cost: float
    plan: TransportPlan
    grad_source: np.ndarray
    converged: bool = True
    iterations: int = 0
    reg_cost: float | None = None


def validate_plan(plan: TransportPlan, tol: float = PLAN_TOL) -> list[PlanViolation]:
    """Check the four transport constraints; empty list means all hold.

    Returns at most one violation per constraint, carrying the worst
    offender's index and excess magnitude.
    """
    flow = np.asarray(plan.flow, dtype=float)
    s = np.asarray(plan.source, dtype=float).ravel()
    t = np.asarray(plan.target, dtype=float).ravel()
    out: list[PlanViolation] = []
    if flow.min(initial=0.0) < -tol:
        idx = np.unravel_index(int(np.argmin(flow)), flow.shape)
        out.append(PlanViolation("negative", tuple(int(i) for i in idx), float(-flow.min())))
    row_excess = flow.sum(axis=1) - s
    if row_excess.max(initial=0.0) > tol:
        i = int(np.argmax(row_excess))
        out.append(PlanViolation("row_marginal", i, float(row_excess[i])))
    col_excess = flow.sum(axis=0) - t
    if col_excess.max(initial=0.0) > tol:
        j = int(np.argmax(col_excess))
        out.append(PlanViolation("col_marginal", j, float(col_excess[j])))
    gap = abs(flow.sum() - min(s.sum(), t.sum()))
    if gap > tol:
        out.append(PlanViolation("total_mass", None, float(gap)))
    return out


# ---------------------------------------------------------------------------
# Exact solver: transportation simplex on the bipartite class graph
# ---------------------------------------------------------------------------


def _northwest_corner(s: np.ndarray, t: np.ndarray):
    """Initial basic feasible solution with exactly n+m-1 basis cells."""
    n, m = s.size, t.size
    flow = np.zeros((n, m))
    basis = np.zeros((n, m), dtype=bool)
    supply = s.copy()
    demand = t.copy()
    i = j = 0
    while True:
        basis[i, j] = True
        q = max(min(supply[i], demand[j]), 0.0)
        flow[i, j] = q
        supply[i] -= q
        demand[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if i < n - 1 and (supply[i] <= demand[j] or j == m - 1):
            i += 1
        else:
            j += 1
    return flow, basis


def _tree_duals(basis: np.ndarray, costs: np.ndarray):
    """Solve u_i + v_j = c_ij over the basis spanning tree (u_0 = 0)."""
    n, m = basis.shape
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    stack = [(True, 0)]
    while stack:
        is_row, idx = stack.pop()
        if is_row:
            for j in np.nonzero(basis[idx])[0]:
                if np.isnan(v[j]):
                    v[j] = costs[idx, j] - u[idx]
                    stack.append((False, int(j)))
        else:
            for i in np.nonzero(basis[:, idx])[0]:
                if np.isnan(u[i]):
                    u[i] = costs[i, idx] - v[idx]
                    stack.append((True, int(i)))
    return u, v


def _basis_cycle(basis: np.ndarray, entering: tuple[int, int]):
    """Alternating cycle closed by the entering cell; even cells gain flow."""
    ei, ej = entering
    start = ("r", ei)
    goal = ("c", ej)
    parent: dict = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        kind, idx = node
        if kind == "r":
            neighbors = (("c", int(j)) for j in np.nonzero(basis[idx])[0])
        else:
            neighbors = (("r", int(i)) for i in np.nonzero(basis[:, idx])[0])
        for nb in neighbors:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    # walk goal -> start; consecutive node pairs are basis cells
    nodes = [goal]
    while nodes[-1] != start:
        nodes.append(parent[nodes[-1]])
    cells = [entering]
    for a, b in zip(nodes, nodes[1:]):
        (ka, ia), (kb, ib) = a, b
        cells.append((ia, ib) if ka == "r" else (ib, ia))
    return cells


def _transportation_simplex(s: np.ndarray, t: np.ndarray, costs: np.ndarray, max_pivots: int = 200000):
    """Minimum-cost flow for the balanced transportation problem.

    Pivot rule: most-negative reduced cost with lowest row-major index on
    ties; after a run of degenerate pivots it falls back to Bland's rule
    (lowest-index negative cell), which guarantees termination.
    """
    flow, basis = _northwest_corner(s, t)
    n, m = basis.shape
    stall = 0
    bland = False
    for _ in range(max_pivots):
        u, v = _tree_duals(basis, costs)
        reduced = costs - u[:, None] - v[None, :]
        reduced[basis] = 0.0
        if bland:
            candidates = np.nonzero(reduced.ravel() < -_REDUCED_COST_TOL)[0]
            if candidates.size == 0:
                return flow, u, v
            entering_flat = int(candidates[0])
        else:
            entering_flat = int(np.argmin(reduced))
            if reduced.ravel()[entering_flat] >= -_REDUCED_COST_TOL:
                return flow, u, v
        entering = (entering_flat // m, entering_flat % m)
        cycle = _basis_cycle(basis, entering)
        gives = cycle[1::2]
        theta = min(flow[c] for c in gives)
        leaving = min(c for c in gives if flow[c] == theta)
        for k, cell in enumerate(cycle):
            if k % 2 == 0:
                flow[cell] += theta
            else:
                flow[cell] -= theta
        flow[leaving] = 0.0
        np.maximum(flow, 0.0, out=flow)
        basis[entering] = True
        basis[leaving] = False
        if theta <= 0.0:
            stall += 1
            if stall > n * m:
                bland = True
        else:
            stall = 0
    raise RuntimeError("transportation simplex did not terminate")


def exact_wasserstein(s, t, D, rescale: bool = True) -> OtResult:
    """Globally optimal transport cost between two histograms.

    A mass mismatch up to 1e-6 is repaired by rescaling ``t`` to the mass of
    ``s`` when ``rescale`` is set; larger mismatches (or any mismatch with
    rescaling disabled) are rejected.  The returned subgradient is the dual
    row potential, centered to zero mean.
    """
    s = _as_hist(s, "source histogram")
    t = _as_hist(t, "target histogram")
    if s.size != t.size:
        raise OtError(f"dimension mismatch: {s.size} vs {t.size}")
    costs = _as_costs(D, s.size)
    ms, mt = s.sum(), t.sum()
    if rescale:
        if abs(ms - mt) > MASS_TOL:
            raise OtError(f"total mass mismatch {abs(ms - mt):.3g} exceeds {MASS_TOL}")
        if mt > 0:
            t = t * (ms / mt)
    elif abs(ms - mt) > 1e-12:
        raise OtError("total masses differ and rescaling is disabled")
    flow, u, _ = _transportation_simplex(s, t, costs)
    cost = float((flow * costs).sum())
    grad = u - u.mean()
    return OtResult(cost=cost, plan=TransportPlan(flow, s, t), grad_source=grad)


def onehot_wasserstein(s, j_star: int, D_f) -> OtResult:
    """O(N) closed form for a one-hot target: all mass flows to column j*.

    ``D_f`` must already carry the metric transform.  The subgradient w.r.t.
    the source is exactly the j* column of the cost table.
    """
    s = _as_hist(s, "source histogram")
    n = s.size
    if not (0 <= j_star < n):
        raise OtError(f"class index {j_star} out of range for {n} classes")
    costs = _as_costs(D_f, n)
    col = costs[:, j_star].copy()
    cost = float(s @ col)
    flow = np.zeros((n, n))
    flow[:, j_star] = s
    target = np.zeros(n)
    target[j_star] = s.sum()
    return OtResult(cost=cost, plan=TransportPlan(flow, s, target), grad_source=col)


def l1_wasserstein(s, t) -> float:
    """Transport cost under the step ground metric: half the l1 distance."""
    s = _as_hist(s, "source histogram")
    t = _as_hist(t, "target histogram")
    if s.size != t.size:
        raise OtError(f"dimension mismatch: {s.size} vs {t.size}")
    if abs(s.sum() - t.sum()) > MASS_TOL:
        raise OtError("total masses differ beyond tolerance")
    return float(0.5 * np.abs(s - t).sum())


# ---------------------------------------------------------------------------
# Entropic approximation
# ---------------------------------------------------------------------------


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    hi = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - hi), axis=axis, keepdims=True)) + hi
    return np.squeeze(out, axis=axis)


def sinkhorn(
    s,
    t,
    D,
    epsilon: float,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = SINKHORN_TOL,
) -> OtResult:
    """Entropic-regularized transport via alternating marginal scalings.

    Iterates until both marginal l1 residuals drop below ``tol`` or
    ``max_iter`` is hit (the result is then flagged non-converged but still
    returned).  Runs in the log domain when epsilon < 1e-2 * max(D) to avoid
    kernel underflow; zero histogram entries are floored at 1e-30 inside the
    iteration only.  grad_source is the converged source dual potential,
    centered to zero mean.
    """
    if epsilon <= 0:
        raise OtError("epsilon must be strictly positive")
    s = _as_hist(s, "source histogram")
    t = _as_hist(t, "target histogram")
    if s.size != t.size:
        raise OtError(f"dimension mismatch: {s.size} vs {t.size}")
    if abs(s.sum() - 1.0) > MASS_TOL or abs(t.sum() - 1.0) > MASS_TOL:
        raise OtError("sinkhorn requires normalized histograms")
    costs = _as_costs(D, s.size)
    s = s / s.sum()
    t = t / t.sum()
    s_pos = np.maximum(s, _SINKHORN_FLOOR)
    t_pos = np.maximum(t, _SINKHORN_FLOOR)

    log_domain = epsilon < 1e-2 * costs.max(initial=0.0)
    converged = False
    iterations = 0
    if log_domain:
        log_s = np.log(s_pos)
        log_t = np.log(t_pos)
        f = np.zeros(s.size)
        g = np.zeros(t.size)
        for iterations in range(1, max_iter + 1):
            f = epsilon * (log_s - _logsumexp((g[None, :] - costs) / epsilon, axis=1))
            g = epsilon * (log_t - _logsumexp((f[:, None] - costs) / epsilon, axis=0))
            plan = np.exp((f[:, None] + g[None, :] - costs) / epsilon)
            if _marginals_ok(plan, s, t, tol):
                converged = True
                break
    else:
        kernel = np.exp(-costs / epsilon)
        u = np.ones(s.size)
        v = np.ones(t.size)
        for iterations in range(1, max_iter + 1):
            u = s_pos / (kernel @ v)
            v = t_pos / (kernel.T @ u)
            plan = u[:, None] * kernel * v[None, :]
            if _marginals_ok(plan, s, t, tol):
                converged = True
                break
        f = epsilon * np.log(u)
        g = epsilon * np.log(v)

    cost = float((plan * costs).sum())
    reg_cost = float(f @ s + g @ t - epsilon * plan.sum())
    grad = f - f.mean()
    return OtResult(
        cost=cost,
        plan=TransportPlan(plan, s, t),
        grad_source=grad,
        converged=converged,
        iterations=iterations,
        reg_cost=reg_cost,
    )


def _marginals_ok(plan: np.ndarray, s: np.ndarray, t: np.ndarray, tol: float) -> bool:
    return (
        np.abs(plan.sum(axis=1) - s).sum() < tol
        and np.abs(plan.sum(axis=0) - t).sum() < tol
    )


def sinkhorn_potentials_batch(
    S,
    T,
    D,
    epsilon: float,
    max_iter: int = SINKHORN_MAX_ITER,
    tol: float = SINKHORN_TOL,
):
    """Log-domain Sinkhorn over a batch of histogram pairs sharing one D.

    S and T are (B, N) row-normalized histograms.  Returns (F, G, reg_cost,
    converged) where F, G are (B, N) dual potentials, reg_cost is the (B,)
    entropic objective and converged is a (B,) flag vector.  Used for
    pixel-batched training; agrees with :func:`sinkhorn` pair by pair.
    """
    S = np.asarray(S, dtype=float)
    T = np.asarray(T, dtype=float)
    if S.shape != T.shape or S.ndim != 2:
        raise OtError("batch histograms must share shape (B, N)")
    costs = _as_costs(D, S.shape[1])
    log_s = np.log(np.maximum(S, _SINKHORN_FLOOR))
    log_t = np.log(np.maximum(T, _SINKHORN_FLOOR))
    F = np.zeros_like(S)
    G = np.zeros_like(T)
    converged = np.zeros(S.shape[0], dtype=bool)
    check_every = 5
    for it in range(1, max_iter + 1):
        F = epsilon * (log_s - _logsumexp((G[:, None, :] - costs[None, :, :]) / epsilon, axis=2))
        G = epsilon * (log_t - _logsumexp((F[:, :, None] - costs[None, :, :]) / epsilon, axis=1))
        if it % check_every == 0 or it == max_iter:
            plan = np.exp((F[:, :, None] + G[:, None, :] - costs[None, :, :]) / epsilon)
            row_res = np.abs(plan.sum(axis=2) - S).sum(axis=1)
            col_res = np.abs(plan.sum(axis=1) - T).sum(axis=1)
            converged = (row_res < tol) & (col_res < tol)
            if converged.all():
                break
    reg = (F * S).sum(axis=1) + (G * T).sum(axis=1) - epsilon * plan.sum(axis=(1, 2))
    return F, G, reg, converged
