"""Clustering accuracy with optimal cluster-to-class matching.

Accuracy is the fraction of rows whose predicted cluster maps onto their
ground-truth class under the best injective relabeling, found by solving a
linear assignment on the cluster/class contingency table. One matching is
computed on the full unlabeled set and reused for the seen-class and
unseen-class subsets, which keeps the count decomposition
``n_all * acc_all == n_old * acc_old + n_new * acc_new`` exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .store import SubsetMasks


@dataclass
class EvalReport:
    acc_all: float
    acc_old: float
    acc_new: float
    permutation: dict           # cluster index -> class label
    contingency: np.ndarray     # clusters x classes counts on the All set
    classes: np.ndarray         # class labels indexing contingency columns
    n_all: int
    n_old: int
    n_new: int


def hungarian(cost) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost injective assignment of min(r, c) rows to columns.

    Rectangular inputs are padded to square with a constant exceeding the
    largest entry, so pad cells never displace a real optimum. Returns the
    (row, column) pairs sorted by row and the total cost over real cells.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("non-finite entry in cost matrix")
    r, c = cost.shape
    size = max(r, c)
    pad_value = cost.max() + 1.0
    padded = np.full((size, size), pad_value)
    padded[:r, :c] = cost
    rows, cols = linear_sum_assignment(padded)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if i < r and j < c]
    pairs.sort()
    total = float(sum(cost[i, j] for i, j in pairs))
    return pairs, total


def clustering_accuracy(pred, truth, masks: SubsetMasks) -> EvalReport:
    """Score predicted clusters against ground truth on All / Old / New.

    ``pred`` and ``truth`` are per-row arrays over the whole dataset; only
    rows under ``masks`` are scored. Clusters left unmatched (more clusters
    than classes) count as wrong.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    sel = masks.all_mask
    if not sel.any():
        raise ValueError("empty evaluation set")
    if truth[sel].min() < 0:
        raise ValueError("missing ground-truth label in evaluation set")
    p = pred[sel]
    t = truth[sel]
    classes = np.unique(t)
    n_clusters = int(p.max()) + 1
    class_col = {int(c): j for j, c in enumerate(classes)}
    contingency = np.zeros((n_clusters, classes.size), dtype=np.int64)
    for ci, ti in zip(p, t):
        contingency[ci, class_col[int(ti)]] += 1

    # maximize matches == minimize (max_count - count)
    pairs, _ = hungarian(contingency.max() - contingency)
    permutation = {ci: int(classes[cj]) for ci, cj in pairs}

    cluster_to_class = np.full(n_clusters, -1, dtype=np.int64)
    for ci, label in permutation.items():
        cluster_to_class[ci] = label
    hit = cluster_to_class[pred] == truth

    def _acc(mask):
        total = int(mask.sum())
        return (float((hit & mask).sum() / total) if total else 0.0), total

    acc_all, n_all = _acc(masks.all_mask)
    acc_old, n_old = _acc(masks.old_mask)
    acc_new, n_new = _acc(masks.new_mask)
    return EvalReport(acc_all=acc_all, acc_old=acc_old, acc_new=acc_new,
                      permutation=permutation, contingency=contingency,
                      classes=classes, n_all=n_all, n_old=n_old, n_new=n_new)


def report_text(report: EvalReport) -> str:
    """Flat key=value block for the report file."""
    perm = ",".join(f"{c}->{report.permutation[c]}"
                    for c in sorted(report.permutation))
    lines = [
        f"acc_all={report.acc_all!r}",
        f"acc_old={report.acc_old!r}",
        f"acc_new={report.acc_new!r}",
        f"n_all={report.n_all}",
        f"n_old={report.n_old}",
        f"n_new={report.n_new}",
        f"n_clusters={report.contingency.shape[0]}",
        f"n_classes={report.contingency.shape[1]}",
        f"permutation={perm}",
    ]
    return "\n".join(lines) + "\n"


def write_report_csv(path, dataset: str, seed: int, report: EvalReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["dataset", "seed", "acc_all", "acc_old", "acc_new"])
        w.writerow([dataset, seed, repr(report.acc_all), repr(report.acc_old),
                    repr(report.acc_new)])


def write_contingency_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cluster"] + [f"class_{int(c)}" for c in report.classes])
        for ci in range(report.contingency.shape[0]):
            w.writerow([ci] + [int(v) for v in report.contingency[ci]])
