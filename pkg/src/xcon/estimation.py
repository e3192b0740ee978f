"""Estimate how many classes the unlabeled data contains.

A held-out probe of labeled rows scores each candidate cluster count: run
plain k-means on all features, match clusters to probe classes with the
assignment solver, and take the fraction of probe rows that land in their
class's matched cluster. The candidate maximizing that score wins (smallest
k on ties). The search is a coarse grid pass followed by a step-1 pass
around the best coarse candidate.

On full-scale fine-grained image benchmarks, probe-scored estimators of
this family tend to overshoot the true class count by roughly 10-20%
(e.g. estimating ~236 when 200 classes exist); treat k_hat as an upper-ish
bound rather than an exact count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import kmeans
from .evaluation import hungarian
from .rng import stage_rng, stage_seed
from .store import DatasetView, FeatureMatrix


@dataclass
class KSearchResult:
    k_hat: int
    ks: list               # every candidate evaluated, ascending
    scores: list           # probe accuracy per candidate, aligned with ks
    probe_fraction: float


PROBE_FRACTION = 0.2


def _stratified_probe(view: DatasetView, rng: np.random.Generator) -> np.ndarray:
    """Hold out ~20% of labeled rows, at least one per class where possible."""
    probe: list[int] = []
    labeled_idx = np.flatnonzero(view.labeled_mask)
    for cls in sorted(view.seen_classes):
        rows = labeled_idx[view.labels[labeled_idx] == cls]
        n_hold = max(1, int(round(PROBE_FRACTION * rows.size)))
        n_hold = min(n_hold, rows.size)
        probe.extend(rng.choice(rows, size=n_hold, replace=False).tolist())
    return np.array(sorted(probe), dtype=np.int64)


def _probe_accuracy(pred: np.ndarray, view: DatasetView, probe: np.ndarray) -> float:
    p = pred[probe]
    t = view.labels[probe]
    classes = np.unique(t)
    col = {int(c): j for j, c in enumerate(classes)}
    counts = np.zeros((int(p.max()) + 1, classes.size), dtype=np.int64)
    for ci, ti in zip(p, t):
        counts[ci, col[int(ti)]] += 1
    pairs, _ = hungarian(counts.max() - counts)
    matched = sum(int(counts[i, j]) for i, j in pairs)
    return matched / probe.size


def estimate_num_classes(m: FeatureMatrix, view: DatasetView, k_min: int, k_max: int,
                         seed) -> KSearchResult:
    """Search [k_min, k_max] for the class count best explaining the probe.

    Deterministic given the seed; requires k_min >= |seen classes| and at
    least 10 labeled rows.
    """
    n_seen = len(view.seen_classes)
    if k_min < n_seen:
        raise ValueError(f"k below seen-class count: k_min={k_min} < {n_seen}")
    if k_max < k_min:
        raise ValueError(f"k_max={k_max} < k_min={k_min}")
    if view.n_labeled < 10:
        raise ValueError(f"need >= 10 labeled rows, have {view.n_labeled}")
    root = seed if isinstance(seed, int) else int(seed)
    probe = _stratified_probe(view, stage_rng(root, "estimate.probe"))

    scores: dict[int, float] = {}

    def score(k: int) -> float:
        if k not in scores:
            model = kmeans(m, k, stage_seed(root, f"estimate.k{k}"))
            scores[k] = _probe_accuracy(model.assignment, view, probe)
        return scores[k]

    step = max(1, (k_max - k_min) // 20)
    coarse = list(range(k_min, k_max + 1, step))
    if coarse[-1] != k_max:
        coarse.append(k_max)
    for k in coarse:
        score(k)
    best_coarse = min((k for k in coarse), key=lambda k: (-scores[k], k))
    for k in range(max(k_min, best_coarse - step + 1), min(k_max, best_coarse + step - 1) + 1):
        score(k)

    ks = sorted(scores)
    k_hat = min(ks, key=lambda k: (-scores[k], k))
    return KSearchResult(k_hat=k_hat, ks=ks, scores=[scores[k] for k in ks],
                         probe_fraction=PROBE_FRACTION)


def default_k_max(view: DatasetView) -> int:
    return 2 * len(view.seen_classes) + 10
