"""Embedding files, dataset metadata, and the views every other module consumes.

On-disk layout is a pair of sibling files:

* ``<base>.bin``  -- little-endian binary: magic ``XCONFEAT`` (8 bytes),
  version u32, row count n as u64, dimension d as u32, view count V as u32,
  then ``n * V * d`` float32 values, image-major / view-minor.
* ``<base>.meta`` -- one line per image, tab separated:
  ``id<TAB>label<TAB>flag`` where label is an integer or ``-`` when unknown
  and flag is ``L`` (labeled) or ``U`` (unlabeled).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"XCONFEAT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQII")  # magic, version, n, d, views


class FeatureFileError(ValueError):
    """A feature or metadata file violates the on-disk format."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """Immutable embedding table with one or more stored views per row.

    ``view_data`` has shape (n, V, d) and dtype float32; ``data`` exposes the
    canonical first view as an (n, d) array. Instances are validated once and
    safe to share across threads.
    """

    view_data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.view_data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, None, :]
        if arr.ndim != 3:
            raise ValueError(f"expected (n, V, d) views, got shape {arr.shape}")
        n, v, d = arr.shape
        if n < 1 or d < 1 or v < 1:
            raise ValueError(f"degenerate feature matrix: n={n}, V={v}, d={d}")
        if not np.isfinite(arr).all():
            raise ValueError("non-finite values in feature matrix")
        if self.normalized:
            norms = np.linalg.norm(arr.astype(np.float64), axis=2)
            if np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError("normalized flag set but rows are not unit norm")
        object.__setattr__(self, "view_data", _freeze(arr))

    @property
    def n(self) -> int:
        return self.view_data.shape[0]

    @property
    def n_views(self) -> int:
        return self.view_data.shape[1]

    @property
    def d(self) -> int:
        return self.view_data.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Canonical (n, d) features: the first stored view."""
        return self.view_data[:, 0, :]

    def view(self, j: int) -> np.ndarray:
        return self.view_data[:, j, :]


@dataclass(frozen=True)
class DatasetView:
    """Per-row metadata: ids, optional class labels, and the labeled mask.

    ``labels`` uses -1 for unknown. ``seen_classes`` is exactly the label set
    of labeled rows. Evaluation data may carry ground-truth labels on
    unlabeled rows as well.
    """

    ids: tuple
    labels: np.ndarray
    labeled_mask: np.ndarray
    seen_classes: frozenset

    @classmethod
    def build(cls, ids, labels, labeled_mask) -> "DatasetView":
        ids = tuple(str(i) for i in ids)
        labels = np.asarray(labels, dtype=np.int64)
        labeled_mask = np.asarray(labeled_mask, dtype=bool)
        if not (len(ids) == labels.shape[0] == labeled_mask.shape[0]):
            raise ValueError("ids, labels, labeled_mask must have equal length")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate row ids")
        if labeled_mask.any() and labels[labeled_mask].min() < 0:
            raise ValueError("labeled row without a label")
        seen = frozenset(int(c) for c in np.unique(labels[labeled_mask]))
        view = cls(ids=ids, labels=_freeze(labels), labeled_mask=_freeze(labeled_mask),
                   seen_classes=seen)
        return view

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_mask.sum())


@dataclass(frozen=True)
class SubsetMasks:
    """Evaluation subsets over the unlabeled rows: everything / seen / unseen."""

    all_mask: np.ndarray
    old_mask: np.ndarray
    new_mask: np.ndarray


def l2_normalize(m: FeatureMatrix) -> FeatureMatrix:
    """Scale every stored view row to unit L2 norm.

    Raises ValueError("zero vector") for any row with norm below 1e-12.
    """
    arr = m.view_data.astype(np.float64)
    norms = np.linalg.norm(arr, axis=2, keepdims=True)
    if norms.min() < 1e-12:
        i = int(np.argwhere(norms[..., 0] < 1e-12)[0][0])
        raise ValueError(f"zero vector at row {i}: cannot normalize")
    out = (arr / norms).astype(np.float32)
    return FeatureMatrix(view_data=out, normalized=True)


def build_subset_masks(view: DatasetView) -> SubsetMasks:
    """Split the unlabeled rows into All / Old (seen classes) / New (unseen).

    Requires ground-truth labels on every unlabeled row.
    """
    all_mask = ~view.labeled_mask
    missing = all_mask & (view.labels < 0)
    if missing.any():
        i = int(np.argmax(missing))
        raise ValueError(f"unlabeled row {view.ids[i]} has no ground-truth label")
    seen = np.array(sorted(view.seen_classes), dtype=np.int64)
    in_seen = np.isin(view.labels, seen)
    old_mask = all_mask & in_seen
    new_mask = all_mask & ~in_seen
    return SubsetMasks(all_mask=_freeze(all_mask), old_mask=_freeze(old_mask),
                       new_mask=_freeze(new_mask))


def _paths(path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".bin", ".meta"):
        base = base.with_suffix("")
    return base.with_suffix(".bin"), base.with_suffix(".meta")


def save_features(path, m: FeatureMatrix, view: DatasetView) -> None:
    """Write the <base>.bin / <base>.meta pair for a matrix and its metadata."""
    if m.n != view.n:
        raise ValueError(f"matrix has {m.n} rows but metadata has {view.n}")
    bin_path, meta_path = _paths(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, m.n, m.d, m.n_views)
    payload = np.ascontiguousarray(m.view_data, dtype="<f4").tobytes()
    bin_path.write_bytes(header + payload)
    lines = []
    for i in range(view.n):
        label = "-" if view.labels[i] < 0 else str(int(view.labels[i]))
        flag = "L" if view.labeled_mask[i] else "U"
        lines.append(f"{view.ids[i]}\t{label}\t{flag}")
    meta_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_metadata(meta_path) -> DatasetView:
    """Parse a metadata file on its own (the feature loader calls this)."""
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise FeatureFileError(f"missing metadata file {meta_path}")
    ids, labels, flags = [], [], []
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FeatureFileError(f"{meta_path}:{lineno}: expected 3 tab-separated fields")
        rid, label_s, flag = parts
        if flag not in ("L", "U"):
            raise FeatureFileError(f"{meta_path}:{lineno}: flag must be L or U, got {flag!r}")
        if label_s == "-":
            if flag == "L":
                raise FeatureFileError(f"{meta_path}:{lineno}: labeled row without a label")
            label = -1
        else:
            try:
                label = int(label_s)
            except ValueError:
                raise FeatureFileError(f"{meta_path}:{lineno}: bad label {label_s!r}") from None
            if label < 0:
                raise FeatureFileError(f"{meta_path}:{lineno}: negative label")
        ids.append(rid)
        labels.append(label)
        flags.append(flag == "L")
    if not ids:
        raise FeatureFileError(f"{meta_path}: empty metadata file")
    try:
        return DatasetView.build(ids, labels, flags)
    except ValueError as e:
        raise FeatureFileError(f"{meta_path}: {e}") from None


def load_features(path, meta_path=None) -> tuple[FeatureMatrix, DatasetView]:
    """Load and validate a feature/metadata pair.

    ``path`` may be the base path or either sibling file; metadata row order
    matches matrix row order. ``meta_path`` overrides the sibling location.
    """
    bin_path, default_meta = _paths(path)
    meta_path = Path(meta_path) if meta_path else default_meta
    if not bin_path.exists():
        raise FeatureFileError(f"missing feature file {bin_path}")
    raw = bin_path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{bin_path}: truncated header")
    magic, version, n, d, views = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{bin_path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{bin_path}: unsupported version {version}")
    if n == 0:
        raise FeatureFileError(f"{bin_path}: empty feature file (n=0)")
    if d == 0 or views == 0:
        raise FeatureFileError(f"{bin_path}: degenerate header (d={d}, views={views})")
    expected = n * views * d * 4
    body = raw[_HEADER.size:]
    if len(body) < expected:
        raise FeatureFileError(
            f"{bin_path}: truncated payload: header declares {n}x{views}x{d} "
            f"({expected} bytes) but {len(body)} bytes present")
    if len(body) > expected:
        raise FeatureFileError(f"{bin_path}: {len(body) - expected} trailing bytes after payload")
    arr = np.frombuffer(body, dtype="<f4").reshape(n, views, d).copy()
    if not np.isfinite(arr).all():
        raise FeatureFileError(f"{bin_path}: non-finite values in payload")
    view = load_metadata(meta_path)
    if view.n != n:
        raise FeatureFileError(
            f"{meta_path}: metadata has {view.n} rows but feature file declares {n}")
    norms = np.linalg.norm(arr.astype(np.float64), axis=2)
    normalized = bool(np.abs(norms - 1.0).max() <= 1e-5)
    return FeatureMatrix(view_data=arr, normalized=normalized), view
