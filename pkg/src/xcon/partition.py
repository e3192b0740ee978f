"""Split the dataset into K expert sub-datasets by k-means on the raw
(normalized) self-supervised features. The partition is a preprocess: it is
computed once and frozen before training.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import kmeans
from .store import DatasetView, FeatureMatrix


@dataclass
class PartitionResult:
    K: int
    membership: np.ndarray   # (n,) int64, sub-dataset index per row
    sizes: np.ndarray        # (K,) row counts


def partition_dataset(m: FeatureMatrix, K: int, seed) -> PartitionResult:
    """Assign every row to one of K sub-datasets via plain k-means.

    Requires normalized features and 1 <= K <= n/2. A sub-dataset with fewer
    than 2 rows (no in-group negative for contrastive pairs) raises
    "degenerate partition"; callers may retry with a smaller K.
    """
    if not m.normalized:
        raise ValueError("features must be L2-normalized before partitioning")
    if not 1 <= K <= m.n // 2:
        raise ValueError(f"K={K} out of range for n={m.n} (need 1 <= K <= n/2)")
    model = kmeans(m, K, seed)
    sizes = np.bincount(model.assignment, minlength=K)
    if sizes.min() < 2:
        bad = int(sizes.argmin())
        raise ValueError(
            f"degenerate partition: K={K} leaves sub-dataset {bad} with "
            f"{int(sizes.min())} row(s); retry with a smaller K")
    return PartitionResult(K=K, membership=model.assignment, sizes=sizes)


def trivial_partition(n: int) -> PartitionResult:
    """Single sub-dataset holding every row (used when the fine path is off)."""
    return PartitionResult(K=1, membership=np.zeros(n, dtype=np.int64),
                           sizes=np.array([n]))


def partition_report(p: PartitionResult, view: DatasetView) -> list[dict]:
    """Per-sub-dataset summary: size, labeled fraction, class histogram.

    The histogram covers rows whose ground-truth label is known; it is empty
    when no truth is available.
    """
    rows = []
    for k in range(p.K):
        members = p.membership == k
        size = int(members.sum())
        labeled = int((members & view.labeled_mask).sum())
        known = members & (view.labels >= 0)
        hist: dict[int, int] = {}
        for c in np.unique(view.labels[known]):
            hist[int(c)] = int((known & (view.labels == c)).sum())
        rows.append({
            "subdataset": k,
            "size": size,
            "labeled_fraction": labeled / size if size else 0.0,
            "class_histogram": hist,
        })
    return rows


def format_partition_report(rows: list[dict]) -> str:
    out = ["subdataset\tsize\tlabeled_fraction\tclass_histogram"]
    for r in rows:
        hist = ",".join(f"{c}:{n}" for c, n in sorted(r["class_histogram"].items()))
        out.append(f"{r['subdataset']}\t{r['size']}\t{r['labeled_fraction']:.4f}\t{hist}")
    return "\n".join(out) + "\n"


def save_partition(path, p: PartitionResult, view: DatasetView) -> None:
    """Persist as one "id<TAB>subdataset_index" line per row."""
    lines = [f"{view.ids[i]}\t{int(p.membership[i])}" for i in range(view.n)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_partition(path, view: DatasetView) -> PartitionResult:
    """Read a persisted partition and align it to ``view`` row order."""
    by_id = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>index'")
        by_id[parts[0]] = int(parts[1])
    missing = [rid for rid in view.ids if rid not in by_id]
    if missing:
        raise ValueError(f"{path}: no partition entry for id {missing[0]!r}")
    membership = np.array([by_id[rid] for rid in view.ids], dtype=np.int64)
    K = int(membership.max()) + 1
    sizes = np.bincount(membership, minlength=K)
    return PartitionResult(K=K, membership=membership, sizes=sizes)
