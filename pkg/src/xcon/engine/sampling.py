"""Batch sampling and view generation for training.

Every optimizer step consumes one coarse batch drawn from the full dataset
plus one batch per expert sub-dataset. Positive pairs are two views of the
same row: either the two stored views from the feature file, or two
independent feature-space jitters when the file has a single view.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..partition import PartitionResult
from ..store import DatasetView, FeatureMatrix

log = logging.getLogger(__name__)

VIEW_MODES = ("stored_views", "feature_jitter")


@dataclass
class RawBatch:
    """Feature-space batch (pre-head): paired views plus label info.

    Labels are only exposed for rows the training split marks as labeled;
    held-out ground truth never reaches the sampler output.
    """
    anchors: np.ndarray
    partners: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray
    indices: np.ndarray

    @property
    def b(self) -> int:
        return self.anchors.shape[0]


def feature_jitter(x: np.ndarray, rng: np.random.Generator,
                   sigma: float = 0.05, drop_prob: float = 0.1) -> np.ndarray:
    """Additive Gaussian noise then dimension dropout, renormalized.

    Rows that a dropout draw would zero out entirely keep their noisy
    (undropped) version instead.
    """
    out = x + rng.normal(0.0, sigma, size=x.shape)
    if drop_prob > 0.0:
        keep = rng.random(x.shape) >= drop_prob
        dropped = out * keep
        norms = np.linalg.norm(dropped, axis=1)
        dead = norms < 1e-12
        if dead.any():
            dropped[dead] = out[dead]
        out = dropped
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _batch_views(m: FeatureMatrix, idx: np.ndarray, mode: str,
                 rng: np.random.Generator, sigma: float, drop_prob: float):
    if mode == "stored_views":
        if m.n_views < 2:
            raise ValueError("stored_views mode needs a feature file with >= 2 views")
        return (m.view(0)[idx].astype(np.float64), m.view(1)[idx].astype(np.float64))
    if mode == "feature_jitter":
        base = m.data[idx].astype(np.float64)
        return (feature_jitter(base, rng, sigma, drop_prob),
                feature_jitter(base, rng, sigma, drop_prob))
    raise ValueError(f"unknown view_mode {mode!r}; expected one of {VIEW_MODES}")


def _training_labels(view: DatasetView, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = view.labeled_mask[idx]
    labels = np.where(mask, view.labels[idx], -1)
    return labels, mask


def sample_coarse_batch(m: FeatureMatrix, view: DatasetView, batch_size: int,
                        mode: str, rng: np.random.Generator,
                        sigma: float = 0.05, drop_prob: float = 0.1) -> RawBatch:
    """Uniform draw from the whole dataset, capped at n (without replacement)."""
    size = min(batch_size, m.n)
    idx = rng.choice(m.n, size=size, replace=False)
    anchors, partners = _batch_views(m, idx, mode, rng, sigma, drop_prob)
    labels, mask = _training_labels(view, idx)
    return RawBatch(anchors=anchors, partners=partners, labels=labels,
                    labeled_mask=mask, indices=idx)


def sample_fine_batches(m: FeatureMatrix, view: DatasetView, part: PartitionResult,
                        batch_size: int, mode: str, rng: np.random.Generator,
                        sigma: float = 0.05, drop_prob: float = 0.1) -> list[RawBatch]:
    """One batch per sub-dataset, drawn within that sub-dataset.

    Sub-datasets smaller than the batch size are sampled with replacement
    (logged once per call site).
    """
    batches = []
    for k in range(part.K):
        rows = np.flatnonzero(part.membership == k)
        replace = rows.size < batch_size
        if replace:
            log.warning("sub-dataset %d has %d rows < fine batch %d: sampling with replacement",
                        k, rows.size, batch_size)
        idx = rng.choice(rows, size=batch_size, replace=replace)
        anchors, partners = _batch_views(m, idx, mode, rng, sigma, drop_prob)
        labels, mask = _training_labels(view, idx)
        batches.append(RawBatch(anchors=anchors, partners=partners, labels=labels,
                                labeled_mask=mask, indices=idx))
    return batches


def sample_batches(m: FeatureMatrix, view: DatasetView, part: PartitionResult,
                   config, rng: np.random.Generator):
    """Draw one coarse batch and one batch per sub-dataset from a single
    generator (convenience wrapper; the trainer keeps separate streams)."""
    coarse = sample_coarse_batch(m, view, config.coarse_batch, config.view_mode, rng,
                                 config.jitter_sigma, config.jitter_drop)
    fine = sample_fine_batches(m, view, part, config.fine_batch, config.view_mode, rng,
                               config.jitter_sigma, config.jitter_drop)
    return coarse, fine
