"""Classical allocators: equal weight, minimum-variance Markowitz on the
simplex, and Hierarchical Risk Parity.

These consume the entire (unbatched) training slice.  The MVO solver is
projected gradient descent with the exact Euclidean simplex projection, so
it stays dependency-free and can be validated against a brute-force grid.
HRP follows the canonical recipe: correlation distance, single-linkage
clustering, quasi-diagonalization, then recursive inverse-variance
bisection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComputeError, DataError, DegenerateSeriesError

MVO_MAX_ITERS = 50_000
MVO_STOP = 1e-10
_CLIP = 1e-12


@dataclass
class CovEstimate:
    """Symmetric N x N sample covariance of daily log-returns."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DataError(f"covariance must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("NaN in covariance")
        if not np.allclose(v, v.T, atol=1e-12, rtol=0.0):
            raise DataError("covariance not symmetric")
        if np.any(np.diag(v) < 0.0):
            raise DataError("negative variance on covariance diagonal")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class LinkageTree:
    """Single-linkage merge sequence and the resulting quasi-diagonal leaf
    order.  Leaves are 0..N-1; the cluster created by merge step s gets id
    N+s; each merge records (id_a, id_b, distance) with id_a < id_b."""

    merges: list[tuple[int, int, float]]
    leaf_order: list[int]


def equal_weights(n: int) -> np.ndarray:
    if n < 1:
        raise DataError(f"asset count must be >= 1, got {n}")
    return np.full(n, 1.0 / n)


def sample_covariance(values: np.ndarray) -> CovEstimate:
    """Unbiased (n-1) sample covariance of a rows-by-assets slice."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DataError("sample covariance needs at least 2 rows")
    cov = np.cov(values, rowvar=False, ddof=1)
    cov = 0.5 * (cov + cov.T)  # kill asymmetry at rounding level
    return CovEstimate(cov)


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    mask = u + (1.0 - css) / idx > 0.0
    rho = idx[mask][-1]
    tau = (1.0 - css[rho - 1]) / rho
    return np.maximum(v + tau, 0.0)


def _clean_weights(w: np.ndarray) -> np.ndarray:
    w = np.where(w < _CLIP, np.maximum(w, 0.0), w)
    return w / w.sum()


def mvo_min_variance(cov: CovEstimate | np.ndarray) -> np.ndarray:
    """argmin w'Sigma w on the simplex by projected gradient descent with
    step 1/(2 * Gershgorin bound on lambda_max)."""
    if not isinstance(cov, CovEstimate):
        cov = CovEstimate(cov)
    sigma = cov.values
    n = cov.n
    if n < 2:
        raise DataError("minimum-variance needs at least 2 assets")
    bound = np.abs(sigma).sum(axis=1).max()
    w = equal_weights(n)
    if bound <= 0.0:
        return w  # zero covariance: every simplex point is optimal
    step = 1.0 / (2.0 * bound)
    for _ in range(MVO_MAX_ITERS):
        w_next = project_to_simplex(w - step * 2.0 * (sigma @ w))
        if np.abs(w_next - w).max() < MVO_STOP:
            w = w_next
            break
        w = w_next
    return _clean_weights(w)


def single_linkage(dist: np.ndarray) -> LinkageTree:
    """Agglomerative single-linkage clustering of a symmetric distance
    matrix; ties break on the lowest (id_a, id_b) pair.  The leaf order is
    a pre-order walk visiting each merge's lower-id child first."""
    n = dist.shape[0]
    if dist.shape != (n, n) or n < 2:
        raise DataError("distance matrix must be square with n >= 2")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    children: dict[int, tuple[int, int]] = {}
    active = list(range(n))
    # cluster-to-cluster single-linkage distance, updated per merge
    d = {(i, j): float(dist[i, j]) for i in range(n) for j in range(i + 1, n)}
    merges: list[tuple[int, int, float]] = []
    for step in range(n - 1):
        best = min((d[key], key) for key in
                   ((a, b) for i, a in enumerate(active)
                    for b in active[i + 1:]))
        dist_ab, (a, b) = best
        new_id = n + step
        merges.append((a, b, dist_ab))
        children[new_id] = (a, b)
        members[new_id] = members[a] + members[b]
        active = [c for c in active if c not in (a, b)]
        for c in active:
            d[tuple(sorted((c, new_id)))] = min(
                d[tuple(sorted((c, a)))], d[tuple(sorted((c, b)))])
        active.append(new_id)
    order: list[int] = []

    def walk(node: int) -> None:
        if node < n:
            order.append(node)
        else:
            lo, hi = children[node]
            walk(lo)
            walk(hi)

    walk(2 * n - 2)
    return LinkageTree(merges, order)


def _cluster_variance(sigma: np.ndarray, idx: list[int]) -> float:
    """Variance of the inverse-variance-weighted portfolio of a cluster."""
    sub = sigma[np.ix_(idx, idx)]
    ivp = 1.0 / np.diag(sub)
    ivp = ivp / ivp.sum()
    return float(ivp @ sub @ ivp)


def hrp_allocate(values: np.ndarray) -> np.ndarray:
    """Hierarchical Risk Parity weights from a rows-by-assets return slice.

    Stages: sample covariance -> correlation -> distance
    sqrt((1 - rho)/2) -> single linkage -> quasi-diagonal leaf order ->
    recursive bisection splitting each ordered sublist at len//2 and
    allocating between halves by alpha = 1 - V_left/(V_left + V_right).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 2:
        raise DataError("HRP needs at least 2 assets")
    cov = sample_covariance(values)
    sigma = cov.values
    stds = np.sqrt(np.diag(sigma))
    if np.any(stds == 0.0):
        raise DegenerateSeriesError(
            f"degenerate asset: zero variance in column {int(np.argmin(stds))}")
    corr = sigma / np.outer(stds, stds)
    corr = np.clip(corr, -1.0, 1.0)
    dist = np.sqrt(np.clip(0.5 * (1.0 - corr), 0.0, None))
    np.fill_diagonal(dist, 0.0)
    tree = single_linkage(dist)
    n = sigma.shape[0]
    weights = np.ones(n)
    stack = [tree.leaf_order]
    while stack:
        items = stack.pop()
        if len(items) < 2:
            continue
        cut = len(items) // 2
        left, right = items[:cut], items[cut:]
        v_left = _cluster_variance(sigma, left)
        v_right = _cluster_variance(sigma, right)
        total = v_left + v_right
        if total <= 0.0:
            raise ComputeError("zero cluster variance in bisection")
        alpha = 1.0 - v_left / total
        weights[left] *= alpha
        weights[right] *= 1.0 - alpha
        stack.append(left)
        stack.append(right)
    return _clean_weights(weights)
