"""Report artifacts: the 2-D PCA projection CSV and the rendered figures
that accompany every delimited output."""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine.train import TraceRow
from .evaluation import EvalReport
from .store import DatasetView


def pca_project(x: np.ndarray) -> np.ndarray:
    """Project rows onto the top-2 principal components, deterministic sign
    (largest-magnitude loading of each component is positive)."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def write_pca_csv(path, view: DatasetView, coords: np.ndarray,
                  clusters: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "pc1", "pc2", "cluster", "label", "labeled"])
        for i in range(view.n):
            label = "" if view.labels[i] < 0 else int(view.labels[i])
            w.writerow([view.ids[i], repr(float(coords[i, 0])), repr(float(coords[i, 1])),
                        int(clusters[i]), label, "L" if view.labeled_mask[i] else "U"])


def save_pca_figure(path, coords: np.ndarray, clusters: np.ndarray, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    sc = ax.scatter(coords[:, 0], coords[:, 1], c=clusters, cmap="tab20", s=12, alpha=0.8)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    fig.colorbar(sc, ax=ax, label="cluster")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trace_figure(path, trace: list[TraceRow]) -> None:
    steps = [r.step for r in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r.loss_total for r in trace], label="total", lw=1.2)
    ax.plot(steps, [r.loss_coarse for r in trace], label="coarse", lw=0.9)
    ax.plot(steps, [r.loss_fine for r in trace], label="fine", lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_contingency_figure(path, report: EvalReport) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(report.contingency, cmap="viridis", aspect="auto")
    ax.set_xlabel("class")
    ax.set_ylabel("cluster")
    ax.set_title(f"acc_all={report.acc_all:.3f}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_partition_figure(path, sizes: np.ndarray) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(np.arange(len(sizes)), sizes)
    ax.set_xlabel("sub-dataset")
    ax.set_ylabel("rows")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(path, axis: str, values: list, table: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("acc_all", "acc_old", "acc_new"):
        ys = [row[key] for row in table]
        ax.plot(values, ys, marker="o", label=key)
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_kcurve_figure(path, ks: list, scores: list, k_hat: int) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, scores, marker="o")
    ax.axvline(k_hat, color="red", ls="--", label=f"k_hat={k_hat}")
    ax.set_xlabel("candidate k")
    ax.set_ylabel("probe accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
