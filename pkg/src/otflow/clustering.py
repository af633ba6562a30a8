"""Label imputation for variable-label dynamics.

Clusters per-particle Gaussian label distributions, either with DBSCAN under
the Bures-Wasserstein metric (nonparametric, cluster count free to change)
or with fixed-k k-means on a Euclidean embedding of the (mean, sqrt-cov)
pairs. Both are deterministic given input order and seed.
"""

from dataclasses import dataclass

import numpy as np

from .gaussian import pairwise_bures_sq, spd_sqrt

NOISE = -1

# Nonparametric clustering defaults for the flow engine.
DEFAULT_EPS = 5.0
DEFAULT_MIN_PTS = 4


@dataclass
class ClusterAssignment:
    """Cluster ids per particle; -1 marks DBSCAN noise. Ids are contiguous
    0..k-1 in order of cluster creation."""

    labels: np.ndarray
    k: int


def bures_distance_matrix(dists) -> np.ndarray:
    """Pairwise sqrt-Bures distances between label distributions."""
    sq = pairwise_bures_sq(dists, dists)
    np.fill_diagonal(sq, 0.0)
    return np.sqrt(sq)


def dbscan_bures(dists, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> ClusterAssignment:
    """DBSCAN over the Bures-Wasserstein metric on (mean, cov) pairs.

    Standard density-based expansion with a fixed seed-point scan order
    (ascending particle index), so the assignment is deterministic for a
    given input order.
    """
    n = len(dists)
    dmat = bures_distance_matrix(dists)
    neighbors = [np.flatnonzero(dmat[i] <= eps) for i in range(n)]

    UNVISITED = -2
    labels = np.full(n, UNVISITED, dtype=int)
    cid = 0
    for i in range(n):
        if labels[i] != UNVISITED:
            continue
        if neighbors[i].size < min_pts:
            labels[i] = NOISE
            continue
        labels[i] = cid
        queue = list(neighbors[i])
        qi = 0
        while qi < len(queue):
            j = queue[qi]
            qi += 1
            if labels[j] == NOISE:
                labels[j] = cid  # border point reached from a core
            if labels[j] != UNVISITED:
                continue
            labels[j] = cid
            if neighbors[j].size >= min_pts:
                queue.extend(neighbors[j])
        cid += 1
    return ClusterAssignment(labels, cid)


def embed_distributions(dists) -> np.ndarray:
    """Euclidean embedding [mean ; vec(sqrt(cov))] per distribution."""
    rows = []
    for d in dists:
        rows.append(np.concatenate([d.mean, spd_sqrt(d.cov).ravel()]))
    return np.stack(rows)


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[j:] = points[first]
            break
        probs = closest / total
        idx = int(rng.choice(n, p=probs))
        centers[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def kmeans_embedded(dists, k: int, seed: int = 0, max_iter: int = 200) -> ClusterAssignment:
    """Fixed-size clustering of label distributions.

    Runs Lloyd's algorithm with k-means++ initialization on the embedded
    (mean, sqrt-cov) vectors; converged when assignments are stable.
    """
    n = len(dists)
    if k > n:
        raise ValueError(f"k={k} exceeds the number of distributions ({n})")
    points = embed_distributions(dists)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)

    assign = np.full(n, -1, dtype=int)
    for _ in range(max_iter):
        d2 = (
            np.sum(points**2, axis=1)[:, None]
            + np.sum(centers**2, axis=1)[None, :]
            - 2.0 * points @ centers.T
        )
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)

    # Renumber to contiguous ids in order of first appearance.
    remap = {}
    out = np.empty(n, dtype=int)
    for i, c in enumerate(assign):
        if c not in remap:
            remap[c] = len(remap)
        out[i] = remap[c]
    return ClusterAssignment(out, len(remap))
