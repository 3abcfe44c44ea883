"""Fuzzy c-means on spectral embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateClusterError, ParameterError


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """Fuzzy partition of embedded points.

    ``correspondence[r]`` is the time slice row ``r`` belongs to (0 for the
    initial, 1 for the final snapshot); a cluster index means the same
    coherent set in every slice.
    """

    membership: np.ndarray
    hard_labels: np.ndarray
    centers: np.ndarray
    correspondence: np.ndarray
    iterations: int = 0
    converged: bool = True

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def labels_at(self, slice_index: int) -> np.ndarray:
        return self.hard_labels[self.correspondence == slice_index]

    def membership_at(self, slice_index: int) -> np.ndarray:
        return self.membership[self.correspondence == slice_index]

    def retention(self) -> float:
        """Fraction of particles whose label is the same in both slices.

        Only meaningful when row ``i`` of each slice is the same physical
        particle (ground-truth labels kept by the caller).
        """
        a, b = self.labels_at(0), self.labels_at(1)
        if a.shape != b.shape:
            raise ParameterError("slices have different sizes; no particle correspondence")
        return float(np.mean(a == b))


def memberships(X, centers, fuzzifier: float) -> np.ndarray:
    """Standard c-means memberships; a point on a center belongs to it fully."""
    d = cdist(X, centers)
    U = np.empty_like(d)
    hit = d == 0
    on_center = hit.any(axis=1)
    if on_center.any():
        h = hit[on_center].astype(np.float64)
        U[on_center] = h / h.sum(axis=1, keepdims=True)
    rest = ~on_center
    if rest.any():
        dr = d[rest]
        # u_ij = 1 / sum_l (d_ij / d_il)^(2/(m-1)), scaled by the row minimum
        # so the powers stay in range
        ratio = dr / dr.min(axis=1, keepdims=True)
        w = ratio ** (-2.0 / (fuzzifier - 1.0))
        U[rest] = w / w.sum(axis=1, keepdims=True)
    return U


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def fuzzy_cmeans(embedding, k: int, fuzzifier: float = 2.0, seed: int = 0,
                 tol: float = 1e-8, max_iter: int = 300, correspondence=None) -> ClusterResult:
    """Fuzzy c-means with k-means++ seeding.

    Iterates membership and center updates until no center moves by more
    than ``tol``. Deterministic for a fixed ``seed``.
    """
    X = np.asarray(embedding, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1:
        raise ParameterError(f"need at least one cluster, got k={k}")
    if not fuzzifier > 1:
        raise ParameterError(f"fuzzifier must exceed 1, got {fuzzifier}")
    n_distinct = np.unique(X, axis=0).shape[0]
    if k > n_distinct:
        raise DegenerateClusterError(f"k={k} exceeds the {n_distinct} distinct points")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        U = memberships(X, centers, fuzzifier)
        Um = U ** fuzzifier
        new = (Um.T @ X) / Um.sum(axis=0)[:, None]
        shift = np.abs(new - centers).max()
        centers = new
        if shift <= tol:
            converged = True
            break
    U = memberships(X, centers, fuzzifier)
    labels = np.argmax(U, axis=1)
    corr = np.zeros(len(X), dtype=np.int64) if correspondence is None else np.asarray(correspondence)
    return ClusterResult(U, labels, centers, corr, iterations=it, converged=converged)
