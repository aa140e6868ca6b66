"""Severity and importance ground matrices: construction, transforms,
adaptive (centroid-based) updates, and CSV persistence."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DIAGONAL_TOL = 1e-12

_TRANSFORM_KINDS = ("linear", "power", "huber", "step")


class GroundMatrixError(ValueError):
    """A cost table violates the ground-matrix invariants."""


@dataclass(frozen=True)
class MetricTransform:
    """Nondecreasing cost transform f with f(0) = 0.

    kind is one of "linear", "power", "huber", "step".  "power" needs
    rho > 1, "huber" needs tau > 0; the other kinds take no parameter.
    """

    kind: str
    rho: float | None = None
    tau: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "power" and (self.rho is None or self.rho <= 1.0):
            raise ValueError("power transform requires rho > 1")
        if self.kind == "huber" and (self.tau is None or self.tau <= 0.0):
            raise ValueError("huber transform requires tau > 0")

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if np.any(d < 0):
            raise ValueError("transform argument must be nonnegative")
        if self.kind == "linear":
            out = d.copy()
        elif self.kind == "power":
            out = d**self.rho
        elif self.kind == "huber":
            out = np.where(d <= self.tau, d * d, self.tau * (2.0 * d - self.tau))
        else:
            out = (d != 0).astype(float)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def linear(cls) -> MetricTransform:
        return cls("linear")

    @classmethod
    def power(cls, rho: float) -> MetricTransform:
        return cls("power", rho=rho)

    @classmethod
    def huber(cls, tau: float) -> MetricTransform:
        return cls("huber", tau=tau)

    @classmethod
    def step(cls) -> MetricTransform:
        return cls("step")


def apply_transform(transform: MetricTransform, d):
    """Apply the cost transform to a nonnegative distance (scalar or array)."""
    return transform(d)


@dataclass(frozen=True, eq=False)
class GroundMatrix:
    """N x N nonnegative cost table with a zero diagonal.

    Entry (i, j) is the severity of classifying a true class-i pixel as
    class j; asymmetry is allowed and meaningful.
    """

    costs: np.ndarray

    def __post_init__(self) -> None:
        costs = np.array(self.costs, dtype=float)
        if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
            raise GroundMatrixError(f"cost table must be square, got shape {costs.shape}")
        if not np.all(np.isfinite(costs)):
            raise GroundMatrixError("cost table contains non-finite entries")
        neg = np.argwhere(costs < 0)
        if neg.size:
            i, j = neg[0]
            raise GroundMatrixError(f"negative cost at row {i}, column {j}")
        bad = np.nonzero(np.abs(np.diag(costs)) > DIAGONAL_TOL)[0]
        if bad.size:
            raise GroundMatrixError(f"nonzero diagonal at row {bad[0]}")
        # clamp sub-tolerance numerical noise so the invariant is exact
        np.fill_diagonal(costs, 0.0)
        costs.flags.writeable = False
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    def __array__(self, dtype=None, copy=None):
        arr = self.costs
        return arr if dtype is None else arr.astype(dtype)

    def transformed(self, transform: MetricTransform) -> GroundMatrix:
        """Elementwise f(D); keeps the zero diagonal since f(0) = 0."""
        return GroundMatrix(transform(self.costs))

    def transposed(self) -> GroundMatrix:
        """Swap the row/column convention.

        A table whose rows index the true class (the severity-score layout)
        becomes one whose columns do, which is the orientation consumed by
        the one-hot transport loss.
        """
        return GroundMatrix(self.costs.T)


@dataclass(frozen=True)
class ImportanceGrouping:
    """Class-to-group assignment with one positive loss weight per group.

    group_of maps class index -> group id; weight_of maps group id -> weight.
    Group ids order the importance levels, so weights must be nondecreasing
    with the group id.
    """

    group_of: tuple[int, ...]
    weight_of: dict[int, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "group_of", tuple(int(g) for g in self.group_of))
        for k, g in enumerate(self.group_of):
            if g not in self.weight_of:
                raise ValueError(f"class {k} assigned to group {g} with no weight")
        groups = sorted(self.weight_of)
        weights = [float(self.weight_of[g]) for g in groups]
        if any(w <= 0 for w in weights):
            raise ValueError("group weights must be strictly positive")
        if any(b < a for a, b in zip(weights, weights[1:])):
            raise ValueError("group weights must be nondecreasing in importance level")

    def class_weight(self, k: int) -> float:
        return float(self.weight_of[self.group_of[k]])


def build_severity_matrix(n: int, entries, fill: float = 1.0) -> GroundMatrix:
    """Assemble a ground matrix from explicit (i, j, cost) severity entries.

    Off-diagonal cells not named in ``entries`` default to ``fill``; the
    diagonal is zero. Asymmetric entries are preserved.
    """
    if fill < 0:
        raise GroundMatrixError("fill value must be nonnegative")
    costs = np.full((n, n), float(fill))
    np.fill_diagonal(costs, 0.0)
    for i, j, cost in entries:
        if not (0 <= i < n and 0 <= j < n):
            raise GroundMatrixError(f"entry index ({i}, {j}) out of range for n={n}")
        if i == j:
            raise GroundMatrixError(f"diagonal entry ({i}, {j}) is not allowed")
        if cost < 0:
            raise GroundMatrixError(f"negative cost {cost} at ({i}, {j})")
        costs[i, j] = float(cost)
    return GroundMatrix(costs)


def build_importance_matrix(grouping: ImportanceGrouping) -> GroundMatrix:
    """Constant-column matrix that reproduces importance-weighted loss.

    Column j carries the weight of the true class j off the diagonal, so the
    one-hot transport loss reduces to w_{j*} * (1 - s_{j*}).
    """
    n = len(grouping.group_of)
    col = np.array([grouping.class_weight(j) for j in range(n)])
    costs = np.tile(col, (n, 1))
    np.fill_diagonal(costs, 0.0)
    return GroundMatrix(costs)


def class_centroids(features, labels, n: int, normalize: bool = True):
    """Per-class mean feature rows.

    features is (M, d), labels is (M,) with values < n.  Rows are
    l2-normalized before averaging when ``normalize`` is set (zero rows are
    left as-is).  Returns (centroids, present) where centroids is (n, d) and
    present flags classes with at least one sample; missing classes get a
    zero centroid and present=False.
    """
    feats = np.asarray(features, dtype=float)
    labs = np.asarray(labels)
    if feats.ndim != 2 or feats.shape[0] != labs.shape[0]:
        raise ValueError("features must be (M, d) with one label per row")
    if labs.size and (labs.min() < 0 or labs.max() >= n):
        raise ValueError("labels out of range")
    if normalize and feats.size:
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        feats = feats / np.where(norms > 0, norms, 1.0)
    centroids = np.zeros((n, feats.shape[1] if feats.size else 0))
    present = np.zeros(n, dtype=bool)
    for k in range(n):
        rows = feats[labs == k]
        if rows.shape[0]:
            centroids[k] = rows.mean(axis=0)
            present[k] = True
    return centroids, present


def centroid_distances(centroids, present=None) -> np.ndarray:
    """Pairwise l1 distances between class centroids.

    Entries touching a missing class are flagged with NaN; the diagonal of
    present classes is exactly zero and the table is symmetric.
    """
    cents = np.asarray(centroids, dtype=float)
    n = cents.shape[0]
    dbar = np.abs(cents[:, None, :] - cents[None, :, :]).sum(axis=2)
    np.fill_diagonal(dbar, 0.0)
    if present is not None:
        missing = ~np.asarray(present, dtype=bool)
        dbar[missing, :] = np.nan
        dbar[:, missing] = np.nan
    return dbar


def update_learned_matrix(
    predefined: GroundMatrix,
    centroid_d,
    alpha: float,
    transform: MetricTransform,
) -> GroundMatrix:
    """Mix feature-level distances into the predefined matrix.

    Elementwise (f(dbar) + alpha * f(d)) / (1 + alpha).  NaN entries in
    ``centroid_d`` (missing centroids) fall back to f(d); the diagonal is
    forced to zero.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    dbar = np.asarray(centroid_d, dtype=float)
    if dbar.shape != predefined.costs.shape:
        raise ValueError(
            f"size mismatch: centroid table {dbar.shape} vs predefined {predefined.costs.shape}"
        )
    fd = transform(predefined.costs)
    missing = ~np.isfinite(dbar)
    filled = dbar.copy()
    filled[missing] = 0.0
    mixed = (transform(filled) + alpha * fd) / (1.0 + alpha)
    mixed[missing] = fd[missing]
    np.fill_diagonal(mixed, 0.0)
    return GroundMatrix(mixed)


def save_matrix(matrix: GroundMatrix, path) -> None:
    """Write the cost table as headerless CSV at full float precision."""
    np.savetxt(path, matrix.costs, delimiter=",", fmt="%.17g")


def load_matrix(path) -> GroundMatrix:
    """Load and validate a ground-matrix CSV (square, nonnegative, zero diagonal)."""
    path = Path(path)
    try:
        costs = np.loadtxt(path, delimiter=",", ndmin=2)
    except Exception as exc:
        raise GroundMatrixError(f"malformed matrix CSV {path}: {exc}") from exc
    return GroundMatrix(costs)
