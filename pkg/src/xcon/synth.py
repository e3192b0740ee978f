"""Synthetic benchmark generator.

Produces embedding datasets where a strong class-irrelevant factor (the
"background") dominates the geometry and the class signal lives in smaller
within-background offsets. Every sample is

    normalize(background_centroid + fine_class_offset + gaussian_noise)

Half of each background's fine classes are seen; a configurable fraction of
each seen class's rows is labeled, the rest keep their labels as held-out
ground truth for evaluation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import DatasetView, FeatureMatrix

log = logging.getLogger(__name__)


@dataclass
class GeneratorSpec:
    n_backgrounds: int = 2
    n_fine_classes: int = 4          # fine classes per background
    samples_per_class: int = 50
    d: int = 32
    background_scale: float = 1.0
    class_scale: float = 0.3
    noise_sigma: float = 0.1
    seen_fraction: float = 0.5
    labeled_fraction: float = 0.5
    fine_subspace_dim: int = 8       # class offsets share this subspace (0 = full space)
    nuisance_dim: int = 0            # per-sample "pose" variation subspace (0 = none)
    nuisance_scale: float = 0.3      # typical norm of the per-sample nuisance offset
    seed: int = 0

    def validate(self) -> None:
        if self.n_backgrounds * self.n_fine_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.samples_per_class < 1 or self.d < 2:
            raise ValueError("degenerate sample count or dimension")
        if min(self.background_scale, self.class_scale, self.noise_sigma) <= 0:
            raise ValueError("scales must be positive")
        if self.background_scale <= self.class_scale:
            raise ValueError("background_scale must dominate class_scale")
        if self.class_scale <= self.noise_sigma:
            # allowed for degenerate chance-floor studies, but not the intended regime
            log.warning("class_scale %.3g <= noise_sigma %.3g: classes are not separable",
                        self.class_scale, self.noise_sigma)
        if not 0.0 <= self.seen_fraction <= 1.0 or not 0.0 <= self.labeled_fraction <= 1.0:
            raise ValueError("fractions must be in [0, 1]")
        if self.fine_subspace_dim < 0 or self.fine_subspace_dim > self.d:
            raise ValueError("fine_subspace_dim must be in [0, d]")
        if self.nuisance_dim < 0 or self.fine_subspace_dim + self.nuisance_dim > self.d:
            raise ValueError("fine_subspace_dim + nuisance_dim must fit in d")
        if self.nuisance_dim and not 0 < self.nuisance_scale < self.background_scale:
            raise ValueError("nuisance_scale must be positive and below background_scale")


@dataclass
class GroundTruthFactors:
    background: np.ndarray   # (n,) background index per row
    class_id: np.ndarray     # (n,) global class index per row


def _unit_rows(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate(spec: GeneratorSpec) -> tuple[FeatureMatrix, DatasetView, GroundTruthFactors]:
    """Build the dataset described by ``spec``; identical spec yields
    identical output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_bg, n_fine, per = spec.n_backgrounds, spec.n_fine_classes, spec.samples_per_class
    n = n_bg * n_fine * per

    bg_centroids = _unit_rows(rng, (n_bg, spec.d)) * spec.background_scale
    shared_dim = spec.fine_subspace_dim + spec.nuisance_dim
    if shared_dim:
        basis, _ = np.linalg.qr(rng.standard_normal((spec.d, shared_dim)))
    if spec.fine_subspace_dim:
        # all fine-class offsets live in one shared subspace: the
        # discriminative trait directions are common across classes; within
        # a background the offsets are orthonormal so every class pair is
        # separated by the same margin
        if n_fine > spec.fine_subspace_dim:
            raise ValueError("fine_subspace_dim must be >= n_fine_classes")
        fine_basis = basis[:, :spec.fine_subspace_dim]
        class_offsets = np.empty((n_bg, n_fine, spec.d))
        for b in range(n_bg):
            frame, _ = np.linalg.qr(rng.standard_normal((spec.fine_subspace_dim, n_fine)))
            class_offsets[b] = (fine_basis @ frame[:, :n_fine]).T * spec.class_scale
    else:
        class_offsets = _unit_rows(rng, (n_bg, n_fine, spec.d)) * spec.class_scale
    # per-sample class-irrelevant variation ("pose"): its variance rivals the
    # class signal, so unsupervised geometry alone cannot separate the two
    nuisance_basis = basis[:, spec.fine_subspace_dim:] if spec.nuisance_dim else None

    data = np.empty((n, spec.d))
    background = np.empty(n, dtype=np.int64)
    class_id = np.empty(n, dtype=np.int64)
    row = 0
    for b in range(n_bg):
        for c in range(n_fine):
            noise = rng.normal(0.0, spec.noise_sigma, size=(per, spec.d))
            x = bg_centroids[b] + class_offsets[b, c] + noise
            if spec.nuisance_dim:
                u = rng.normal(0.0, spec.nuisance_scale / np.sqrt(spec.nuisance_dim),
                               size=(per, spec.nuisance_dim))
                x = x + u @ nuisance_basis.T
            data[row:row + per] = x
            background[row:row + per] = b
            class_id[row:row + per] = b * n_fine + c
            row += per
    data /= np.linalg.norm(data, axis=1, keepdims=True)

    # seen classes: the first fraction of fine classes within every background
    n_seen_fine = int(round(n_fine * spec.seen_fraction))
    seen_classes = {b * n_fine + c for b in range(n_bg) for c in range(n_seen_fine)}

    labeled_mask = np.zeros(n, dtype=bool)
    for cls in sorted(seen_classes):
        rows = np.flatnonzero(class_id == cls)
        n_lab = int(round(spec.labeled_fraction * rows.size))
        chosen = rng.choice(rows, size=n_lab, replace=False)
        labeled_mask[chosen] = True

    ids = [f"synth{i:05d}" for i in range(n)]
    view = DatasetView.build(ids, class_id, labeled_mask)
    matrix = FeatureMatrix(view_data=data.astype(np.float32)[:, None, :], normalized=True)
    return matrix, view, GroundTruthFactors(background=background, class_id=class_id)


def save_factors(path, view: DatasetView, factors: GroundTruthFactors) -> None:
    """Metadata-format file with an extra background column."""
    lines = []
    for i in range(view.n):
        label = "-" if view.labels[i] < 0 else str(int(view.labels[i]))
        flag = "L" if view.labeled_mask[i] else "U"
        lines.append(f"{view.ids[i]}\t{label}\t{flag}\t{int(factors.background[i])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
