"""Seed plumbing: one root seed, independent named streams per stage."""
from __future__ import annotations

import zlib

import numpy as np


def stage_seed(root_seed: int, stage: str) -> int:
    """Derive a stable 32-bit seed for a named stage from the root seed."""
    tag = zlib.crc32(stage.encode("utf-8"))
    return int(np.random.SeedSequence([int(root_seed), tag]).generate_state(1)[0])


def stage_rng(root_seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(root_seed, stage))
