"""Plain k-means (k-means++ seeding, Lloyd iterations) and the
label-constrained variant used for final class assignment.

Both run in float64, break nearest-centroid ties toward the lowest cluster
index, and repair empty clusters deterministically, so a (data, seed) pair
always yields the same model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import DatasetView, FeatureMatrix

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray          # (k, d) float64
    assignment: np.ndarray         # (n,) int64
    inertia: float
    iterations: int
    inertia_trace: list = field(default_factory=list)


def _as_array(m) -> np.ndarray:
    if isinstance(m, FeatureMatrix):
        return m.data.astype(np.float64)
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D data, got shape {arr.shape}")
    return arr


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeans_pp_init(m, k: int, seed) -> np.ndarray:
    """Choose k starting centroids by D^2-weighted sampling.

    Deterministic given the seed. Raises when fewer than k distinct rows
    exist.
    """
    x = _as_array(m)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    first = int(rng.integers(n))
    centroids = [x[first]]
    _pp_extend(x, centroids, k - len(centroids), rng)
    return np.array(centroids)


def _pp_extend(x, centroids: list, n_new: int, rng, candidates=None) -> None:
    """Append n_new centroids to ``centroids`` by D^2 weighting over
    ``candidates`` (row indices; all rows when None).

    Greedy variant: each step samples a few D^2-weighted candidates and
    keeps the one that most reduces the total potential.
    """
    if n_new <= 0:
        return
    cand = np.arange(x.shape[0]) if candidates is None else np.asarray(candidates)
    if cand.size == 0:
        raise ValueError("insufficient distinct points: no candidate rows")
    n_trials = 2 + int(np.log(len(centroids) + n_new))
    d2 = _sq_dists(x[cand], np.array(centroids)).min(axis=1)
    for _ in range(n_new):
        total = d2.sum()
        if total <= 0.0:
            raise ValueError("insufficient distinct points for k-means++ seeding")
        picks = rng.choice(cand.size, size=n_trials, p=d2 / total)
        best_d2, best_pick = None, None
        for pick in picks:
            trial = np.minimum(d2, _sq_dists(x[cand], x[cand[pick]][None, :])[:, 0])
            if best_d2 is None or trial.sum() < best_d2.sum():
                best_d2, best_pick = trial, int(pick)
        centroids.append(x[cand[best_pick]])
        d2 = best_d2


def _repair_empty(x, centroids, assignment, point_d2, empty_clusters) -> None:
    """Move each empty cluster's centroid onto the point currently farthest
    from its assigned centroid (distinct point per repaired cluster)."""
    taken = set()
    order = np.argsort(point_d2)[::-1]
    for c in sorted(empty_clusters):
        for i in order:
            i = int(i)
            if i not in taken:
                centroids[c] = x[i]
                taken.add(i)
                break


def kmeans(m, k: int, seed, max_iter: int = DEFAULT_MAX_ITER,
           tol: float = DEFAULT_TOL) -> ClusterModel:
    """Lloyd's algorithm from a k-means++ start.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iter`` update rounds; the recorded per-iteration inertia is
    non-increasing. Empty clusters are repaired, never an error.
    """
    x = _as_array(m)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for n={n}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    centroids = kmeans_pp_init(x, k, seed)
    trace: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        assignment = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), assignment]
        trace.append(float(point_d2.sum()))
        new_centroids = centroids.copy()
        for c in range(k):
            members = assignment == c
            if members.any():
                new_centroids[c] = x[members].mean(axis=0)
        empty = [c for c in range(k) if not (assignment == c).any()]
        if empty:
            _repair_empty(x, new_centroids, assignment, point_d2, empty)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        iterations += 1
        if shift < tol:
            break
    d2 = _sq_dists(x, centroids)
    assignment = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignment].sum())
    trace.append(inertia)
    return ClusterModel(k=k, centroids=centroids, assignment=assignment.astype(np.int64),
                        inertia=inertia, iterations=iterations, inertia_trace=trace)


def semi_supervised_kmeans(m, view: DatasetView, k: int, seed,
                           max_iter: int = DEFAULT_MAX_ITER,
                           tol: float = DEFAULT_TOL) -> ClusterModel:
    """k-means that pins every labeled row to the cluster bound to its class.

    Clusters 0..|seen|-1 are bound to the sorted seen classes and seeded at
    each class's labeled mean; the remaining clusters are seeded by
    k-means++ over unlabeled rows. Labeled rows are forced to their bound
    cluster in every iteration regardless of distance.
    """
    x = _as_array(m)
    n = x.shape[0]
    seen = sorted(view.seen_classes)
    if not seen:
        raise ValueError("semi-supervised k-means needs labeled rows")
    if k < len(seen):
        raise ValueError(f"k below seen-class count: k={k} < {len(seen)}")
    if k > n:
        raise ValueError(f"k={k} out of range for n={n}")
    rng = np.random.default_rng(seed)
    class_to_cluster = {c: j for j, c in enumerate(seen)}
    forced = np.full(n, -1, dtype=np.int64)
    lab = view.labeled_mask
    for i in np.flatnonzero(lab):
        forced[i] = class_to_cluster[int(view.labels[i])]
    centroids_list = [x[lab & (forced == j)].mean(axis=0) for j in range(len(seen))]
    unlabeled_idx = np.flatnonzero(~lab)
    _pp_extend(x, centroids_list, k - len(seen), rng, candidates=unlabeled_idx)
    centroids = np.array(centroids_list)

    trace: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        assignment = d2.argmin(axis=1)
        assignment[lab] = forced[lab]
        point_d2 = d2[np.arange(n), assignment]
        trace.append(float(point_d2.sum()))
        new_centroids = centroids.copy()
        for c in range(k):
            members = assignment == c
            if members.any():
                new_centroids[c] = x[members].mean(axis=0)
        empty = [c for c in range(k) if not (assignment == c).any()]
        if empty:
            # only unlabeled points may seed a repair: labeled rows stay bound
            unl_d2 = np.where(~lab, point_d2, -1.0)
            _repair_empty(x, new_centroids, assignment, unl_d2, empty)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        iterations += 1
        if shift < tol:
            break
    d2 = _sq_dists(x, centroids)
    assignment = d2.argmin(axis=1)
    assignment[lab] = forced[lab]
    inertia = float(d2[np.arange(n), assignment].sum())
    trace.append(inertia)
    return ClusterModel(k=k, centroids=centroids, assignment=assignment.astype(np.int64),
                        inertia=inertia, iterations=iterations, inertia_trace=trace)
