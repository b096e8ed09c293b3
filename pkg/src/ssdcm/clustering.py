"""Lloyd k-means with caller-supplied starting centroids and the two seed
constructions used by the adaptive cluster-and-label algorithms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "Partition",
    "kmeans_lloyd",
    "avg_within_distance",
    "split_seeds",
    "midpoint_seed",
    "within_ss",
]


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster assignment of points ``0..n-1`` to ids ``0..K-1``."""

    assignments: np.ndarray
    centroids: np.ndarray
    points: np.ndarray | None = None
    n_iter: int = 0
    converged: bool = True
    wcss_trace: tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def members(self, k: int) -> np.ndarray:
        if not 0 <= k < self.K:
            raise KeyError(f"unknown cluster id {k}")
        return np.flatnonzero(self.assignments == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)

    def labeled_counts(self, labeled_mask) -> np.ndarray:
        """``l(C_k)`` for every cluster."""
        return np.bincount(self.assignments, weights=np.asarray(labeled_mask, dtype=float), minlength=self.K).astype(int)


def _sq_dists(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def within_ss(points, assignments, centroids) -> float:
    return float(((points - centroids[assignments]) ** 2).sum())


def kmeans_lloyd(points, init_centroids, max_iter: int = 100, seed: int = 0) -> Partition:
    """Alternate nearest-centroid assignment and mean updates until stable.

    A cluster that empties out is re-seeded at the point farthest from its
    currently assigned centroid, so K stays fixed. Distance ties go to the
    lower cluster id. ``seed`` is accepted for API symmetry; re-seeding is
    deterministic.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    C = np.array(init_centroids, dtype=float)
    if C.ndim == 1:
        C = C[:, None] if X.shape[1] == 1 else C[None, :]
    if X.shape[0] == 0:
        raise ConfigError("kmeans_lloyd needs at least one point")
    if C.shape[0] == 0:
        raise ConfigError("kmeans_lloyd needs at least one initial centroid")
    if C.shape[1] != X.shape[1]:
        raise ConfigError("centroid and point dimensions differ")
    K = C.shape[0]
    if K > X.shape[0]:
        raise ConfigError(f"cannot form {K} non-empty clusters from {X.shape[0]} points")

    assign = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sq_dists(X, C), axis=1)
        new = _fill_empty(X, C, new, K)
        changed = assign is None or not np.array_equal(new, assign)
        assign = new
        C = _means(X, assign, K)
        trace.append(within_ss(X, assign, C))
        if not changed:
            converged = True
            break
    return Partition(assign, C, X, it, converged, tuple(trace))


def _means(X, assign, K):
    counts = np.bincount(assign, minlength=K).astype(float)
    sums = np.zeros((K, X.shape[1]))
    np.add.at(sums, assign, X)
    return sums / counts[:, None]


def _fill_empty(X, C, assign, K):
    counts = np.bincount(assign, minlength=K)
    while np.any(counts == 0):
        k = int(np.flatnonzero(counts == 0)[0])
        far = ((X - C[assign]) ** 2).sum(axis=1)
        far[counts[assign] <= 1] = -1.0  # never empty another cluster
        i = int(np.argmax(far))
        assign = assign.copy()
        assign[i] = k
        C[k] = X[i]
        counts = np.bincount(assign, minlength=K)
    return assign


def avg_within_distance(partition: Partition, k: int, points=None) -> float:
    """Mean Euclidean distance from members of cluster ``k`` to its centroid."""
    idx = partition.members(k)
    if idx.size == 0:
        raise ConfigError(f"cluster {k} is empty")
    X = np.asarray(partition.points if points is None else points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return float(np.linalg.norm(X[idx] - partition.centroids[k], axis=1).mean())


def mean_distance(points, centroid) -> float:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return float(np.linalg.norm(X - np.asarray(centroid, dtype=float), axis=1).mean())


def random_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit vector from a componentwise uniform[-1, 1] draw; near-zero draws are redrawn."""
    while True:
        g = rng.uniform(-1.0, 1.0, size=dim)
        norm = np.linalg.norm(g)
        if norm >= 1e-12:
            return g / norm


def split_seeds(centroid, u_bar: float, rng: np.random.Generator, direction=None):
    """Return ``(c + u_bar * g, c - u_bar * g)`` for a random unit direction ``g``."""
    if u_bar < 0:
        raise ConfigError("u_bar must be non-negative")
    c = np.asarray(centroid, dtype=float)
    if direction is None:
        g = random_direction(c.size, rng)
    else:
        g = np.asarray(direction, dtype=float)
        g = g / np.linalg.norm(g)
    return c + u_bar * g, c - u_bar * g


def midpoint_seed(c1, c2) -> np.ndarray:
    a = np.asarray(c1, dtype=float)
    b = np.asarray(c2, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"centroid shapes differ: {a.shape} vs {b.shape}")
    return 0.5 * (a + b)
