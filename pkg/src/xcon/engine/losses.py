"""Contrastive losses over unit-norm embeddings, with analytic gradients.

Conventions (pinned by the unit tests):

* Unsupervised loss: two-view in-batch contrast. For a batch of b rows the
  2b embeddings [Z; Z_hat] all act as anchors; the positive of anchor i is
  its other view and the denominator runs over the remaining 2b-1
  embeddings (positive included). Loss is the mean over the 2b anchors.
* Supervised loss: single-view, over labeled rows only. Positives of an
  anchor are the other same-label rows in the batch; the denominator runs
  over the other b-1 rows. Anchors without a positive are skipped; the loss
  is the mean over anchors that have one.
* Combined: (1 - lambda) * unsupervised + lambda * supervised, each term a
  per-anchor mean so lambda stays meaningful across batch sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    """Embedded two-view batch: unit-norm anchors, their paired views, and
    per-row label info (-1 for unlabeled)."""
    z: np.ndarray
    z_hat: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.z_hat.shape:
            raise ValueError("z and z_hat must have the same shape")
        if self.z.shape[0] != self.labels.shape[0]:
            raise ValueError("labels length must match batch size")

    @property
    def b(self) -> int:
        return self.z.shape[0]


def _log_softmax_off_diagonal(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-softmax and softmax of a similarity matrix with the
    diagonal (self-similarity) excluded."""
    s = s.copy()
    np.fill_diagonal(s, -np.inf)
    row_max = s.max(axis=1, keepdims=True)
    e = np.exp(s - row_max)
    denom = e.sum(axis=1, keepdims=True)
    logp = s - row_max - np.log(denom)
    return logp, e / denom


def unsup_contrastive_loss(z: np.ndarray, z_hat: np.ndarray, tau: float):
    """Two-view instance-discrimination loss.

    Returns (loss, dloss/dz, dloss/dz_hat), the gradients covering every
    embedding's role as anchor and as negative.
    """
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    b = z.shape[0]
    if b < 2:
        raise ValueError("no negatives: unsupervised loss needs batch size >= 2")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    w = np.vstack([z, z_hat])
    m = 2 * b
    s = (w @ w.T) / tau
    logp, p = _log_softmax_off_diagonal(s)
    pos = np.concatenate([np.arange(b, m), np.arange(0, b)])
    idx = np.arange(m)
    loss = float(-logp[idx, pos].mean())
    g = p / m
    g[idx, pos] -= 1.0 / m
    dw = ((g + g.T) @ w) / tau
    return loss, dw[:b], dw[b:]


def sup_contrastive_loss(z: np.ndarray, labels: np.ndarray, tau: float):
    """Multi-positive supervised contrastive loss over one view.

    Anchors with no same-label partner in the batch are skipped; raises
    "no positive pairs" when every anchor lacks one. Returns (loss, dloss/dz).
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = z.shape[0]
    if b < 2:
        raise ValueError("no positive pairs: batch size < 2")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    n_pos = same.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        raise ValueError("no positive pairs in batch")
    s = (z @ z.T) / tau
    logp, p = _log_softmax_off_diagonal(s)
    n_valid = int(valid.sum())
    pos_logp = np.where(same, logp, 0.0)   # keep the -inf diagonal out
    per_anchor = -pos_logp.sum(axis=1)[valid] / n_pos[valid]
    loss = float(per_anchor.sum() / n_valid)
    g = np.zeros_like(s)
    g[valid] = (p[valid] - same[valid] / n_pos[valid, None]) / n_valid
    dz = ((g + g.T) @ z) / tau
    return loss, dz


def coarse_loss(batch_u: Batch, batch_l: Batch, tau: float, lam: float):
    """Combined objective over the full batch: unsupervised term on the
    union of both batches, supervised term on the labeled batch.

    A labeled batch without any positive pair contributes 0 to the
    supervised term. Returns (loss, (dz_u, dz_hat_u, dz_l, dz_hat_l)).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    bu = batch_u.b
    dz_u = np.zeros_like(batch_u.z)
    dzh_u = np.zeros_like(batch_u.z_hat)
    dz_l = np.zeros_like(batch_l.z)
    dzh_l = np.zeros_like(batch_l.z_hat)
    loss = 0.0
    if lam < 1.0:
        z = np.vstack([batch_u.z, batch_l.z])
        z_hat = np.vstack([batch_u.z_hat, batch_l.z_hat])
        lu, dz, dzh = unsup_contrastive_loss(z, z_hat, tau)
        loss += (1.0 - lam) * lu
        dz_u += (1.0 - lam) * dz[:bu]
        dz_l += (1.0 - lam) * dz[bu:]
        dzh_u += (1.0 - lam) * dzh[:bu]
        dzh_l += (1.0 - lam) * dzh[bu:]
    if lam > 0.0 and batch_l.b >= 2:
        lbl = batch_l.labels
        same = lbl[:, None] == lbl[None, :]
        np.fill_diagonal(same, False)
        if same.any():
            ls, dz = sup_contrastive_loss(batch_l.z, lbl, tau)
            loss += lam * ls
            dz_l += lam * dz
    return float(loss), (dz_u, dzh_u, dz_l, dzh_l)


def split_labeled(batch: Batch) -> tuple[Batch, Batch, np.ndarray, np.ndarray]:
    """Split a mixed batch into its unlabeled and labeled parts, returning
    the original row indices of each part as well."""
    mask = batch.labeled_mask.astype(bool)
    idx_l = np.flatnonzero(mask)
    idx_u = np.flatnonzero(~mask)
    bl = Batch(z=batch.z[idx_l], z_hat=batch.z_hat[idx_l],
               labels=batch.labels[idx_l], labeled_mask=mask[idx_l])
    bu = Batch(z=batch.z[idx_u], z_hat=batch.z_hat[idx_u],
               labels=batch.labels[idx_u], labeled_mask=mask[idx_u])
    return bu, bl, idx_u, idx_l


def mixed_batch_loss(batch: Batch, tau: float, lam: float):
    """coarse_loss on a mixed batch, with gradients re-assembled in the
    batch's own row order. Returns (loss, dz, dz_hat)."""
    bu, bl, idx_u, idx_l = split_labeled(batch)
    loss, (dz_u, dzh_u, dz_l, dzh_l) = coarse_loss(bu, bl, tau, lam)
    dz = np.zeros_like(batch.z)
    dzh = np.zeros_like(batch.z_hat)
    dz[idx_u], dz[idx_l] = dz_u, dz_l
    dzh[idx_u], dzh[idx_l] = dzh_u, dzh_l
    return loss, dz, dzh


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
