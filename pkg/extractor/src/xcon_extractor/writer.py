"""Writer for the xcon feature/metadata file pair.

Binary layout (little-endian): magic ``XCONFEAT`` (8 bytes), version u32=1,
row count u64, dimension u32, view count u32, then n * V * d float32
values, image-major / view-minor. Metadata: one ``id<TAB>label<TAB>flag``
line per image (label ``-`` when unknown; flag ``L`` or ``U``).
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"XCONFEAT"
VERSION = 1
_HEADER = struct.Struct("<8sIQII")


def write_feature_pair(base_path, features: np.ndarray, ids, labels, labeled_flags,
                       comment: str = "") -> tuple[Path, Path]:
    """Atomically write <base>.bin and <base>.meta.

    ``features`` is (n, V, d) float32; ``labels`` uses None or -1 for
    unknown. Files are written to temporaries and renamed into place.
    """
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 3:
        raise ValueError(f"expected (n, V, d) features, got shape {features.shape}")
    n, views, d = features.shape
    if not (n == len(ids) == len(labels) == len(labeled_flags)):
        raise ValueError("ids, labels, flags must match feature rows")
    if not np.isfinite(features).all():
        raise ValueError("non-finite values in features")

    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    bin_path = base.with_suffix(".bin")
    meta_path = base.with_suffix(".meta")

    tmp_bin = bin_path.with_suffix(".bin.tmp")
    with open(tmp_bin, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, d, views))
        f.write(features.tobytes())
    os.replace(tmp_bin, bin_path)

    lines = []
    for rid, label, flag in zip(ids, labels, labeled_flags):
        label_s = "-" if label is None or int(label) < 0 else str(int(label))
        lines.append(f"{rid}\t{label_s}\t{'L' if flag else 'U'}")
    tmp_meta = meta_path.with_suffix(".meta.tmp")
    text = "\n".join(lines) + "\n"
    tmp_meta.write_text(text, encoding="utf-8")
    os.replace(tmp_meta, meta_path)
    if comment:
        # provenance note kept next to the pair; the meta format itself has
        # no comment syntax
        base.with_suffix(".provenance.txt").write_text(comment + "\n", encoding="utf-8")
    return bin_path, meta_path
