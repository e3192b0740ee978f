"""Joint coarse/fine training: objective assembly, SGD with momentum and a
cosine learning-rate schedule, the per-step trace, and checkpoint I/O.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from ..partition import PartitionResult, trivial_partition
from ..rng import stage_rng, stage_seed
from ..store import DatasetView, FeatureMatrix
from .losses import Batch, cosine_lr, mixed_batch_loss
from .model import TrainableModel
from .sampling import RawBatch, VIEW_MODES, sample_coarse_batch, sample_fine_batches

CKPT_MAGIC = b"XCONCKPT"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    tau: float = 0.07
    lam: float = 0.35            # supervised-vs-unsupervised mix
    alpha: float = 0.1           # fine-vs-coarse mix
    k_partitions: int = 8
    coarse_batch: int = 256
    fine_batch: int = 32
    epochs: int = 200
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    view_mode: str = "feature_jitter"
    jitter_sigma: float = 0.05
    jitter_drop: float = 0.1
    hidden_dim: int = 2048
    proj_dim: int = 128

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.coarse_batch < 2 or self.fine_batch < 2:
            raise ValueError("batch sizes must be >= 2")
        if self.epochs < 1 or self.base_lr <= 0:
            raise ValueError("epochs must be >= 1 and base_lr positive")
        if self.view_mode not in VIEW_MODES:
            raise ValueError(f"view_mode must be one of {VIEW_MODES}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TraceRow:
    step: int
    lr: float
    loss_coarse: float
    loss_fine: float
    loss_total: float


def _embed_pair(model: TrainableModel, head: int, raw: RawBatch):
    """Run both views of a raw batch through one head in a single pass."""
    stacked = np.vstack([raw.anchors, raw.partners])
    z_all, cache = model.forward_head(head, stacked)
    b = raw.b
    batch = Batch(z=z_all[:b], z_hat=z_all[b:], labels=raw.labels,
                  labeled_mask=raw.labeled_mask)
    return batch, cache


def coarse_objective(model: TrainableModel, raw: RawBatch, tau: float, lam: float,
                     grads: dict | None = None, scale: float = 1.0):
    """Combined contrastive loss of a mixed batch through the coarse head,
    accumulating parameter gradients when ``grads`` is given."""
    batch, cache = _embed_pair(model, 0, raw)
    loss, dz, dzh = mixed_batch_loss(batch, tau, lam)
    if grads is not None:
        model.backward_head(0, cache, np.vstack([dz, dzh]), grads, scale=scale)
    return loss


def fine_loss(model: TrainableModel, sub_batches: list[RawBatch], tau: float, lam: float,
              grads: dict | None = None, scale: float = 1.0):
    """Sum of per-sub-dataset combined losses, each through its expert head.

    Sub-dataset k (0-based here) is embedded by expert head k+1. Sub-batches
    without a labeled positive pair contribute only the unsupervised term.
    """
    if len(sub_batches) != model.n_experts:
        raise ValueError(f"got {len(sub_batches)} sub-batches for {model.n_experts} experts")
    total = 0.0
    for k, raw in enumerate(sub_batches, start=1):
        if raw.b < 2:
            raise ValueError(f"sub-batch {k - 1} smaller than 2 rows")
        batch, cache = _embed_pair(model, k, raw)
        loss, dz, dzh = mixed_batch_loss(batch, tau, lam)
        total += loss
        if grads is not None:
            model.backward_head(k, cache, np.vstack([dz, dzh]), grads, scale=scale)
    return total


def total_loss(model: TrainableModel, coarse_raw: RawBatch,
               sub_batches: list[RawBatch], config: TrainConfig,
               with_grads: bool = True):
    """Full objective: coarse + alpha * fine.

    Returns (total, coarse, fine, grads). The adapter accumulates gradient
    from both paths; the coarse head only from the coarse term, each expert
    head only from its own sub-batch. With alpha == 0 the fine path is
    skipped entirely and expert heads receive exactly zero gradient.
    """
    grads = model.zero_grads() if with_grads else None
    lc = coarse_objective(model, coarse_raw, config.tau, config.lam, grads)
    lf = 0.0
    if config.alpha > 0.0:
        lf = fine_loss(model, sub_batches, config.tau, config.lam, grads,
                       scale=config.alpha)
    return lc + config.alpha * lf, lc, lf, grads


def train(m: FeatureMatrix, view: DatasetView, part: PartitionResult | None,
          config: TrainConfig) -> tuple[TrainableModel, list[TraceRow]]:
    """SGD over the joint objective; deterministic given config.seed.

    Random streams for model init, coarse sampling, and fine sampling are
    derived independently from the seed, so an alpha=0 run is bit-identical
    to one with the fine path removed.
    """
    config.validate()
    if part is None:
        part = trivial_partition(m.n)
    if config.alpha > 0.0 and part.K != config.k_partitions:
        raise ValueError(f"partition has K={part.K} but config expects {config.k_partitions}")
    model = TrainableModel.init(m.d, config.hidden_dim, config.proj_dim,
                                config.k_partitions,
                                stage_seed(config.seed, "train.init"))
    rng_coarse = stage_rng(config.seed, "train.coarse")
    rng_fine = stage_rng(config.seed, "train.fine")

    steps_per_epoch = max(1, math.ceil(m.n / config.coarse_batch))
    total_steps = config.epochs * steps_per_epoch
    velocity = model.zero_grads()
    trace: list[TraceRow] = []
    for step in range(total_steps):
        lr = cosine_lr(step, total_steps, config.base_lr)
        coarse_raw = sample_coarse_batch(m, view, config.coarse_batch, config.view_mode,
                                         rng_coarse, config.jitter_sigma, config.jitter_drop)
        sub_batches: list[RawBatch] = []
        if config.alpha > 0.0:
            sub_batches = sample_fine_batches(m, view, part, config.fine_batch,
                                              config.view_mode, rng_fine,
                                              config.jitter_sigma, config.jitter_drop)
        lt, lc, lf, grads = total_loss(model, coarse_raw, sub_batches, config)
        if not np.isfinite(lt):
            raise RuntimeError(
                f"non-finite loss at step {step}: coarse={lc}, fine={lf}, total={lt}")
        for key in model.params:
            g = grads[key] + config.weight_decay * model.params[key]
            velocity[key] = config.momentum * velocity[key] - lr * g
            model.params[key] += velocity[key]
        trace.append(TraceRow(step=step, lr=lr, loss_coarse=lc, loss_fine=lf, loss_total=lt))
    if not model.check_finite():
        raise RuntimeError("non-finite parameters after training")
    return model, trace


def write_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "loss_coarse", "loss_fine", "loss_total"])
        for row in trace:
            w.writerow([row.step, repr(row.lr), repr(row.loss_coarse),
                        repr(row.loss_fine), repr(row.loss_total)])


# checkpoint format: magic, version u32, config block (u32 length + utf-8
# key=value lines), tensor count u32, then per tensor: name (u32 length +
# utf-8), ndim u32, dims u64 each, float32 little-endian payload.

def save_checkpoint(path, model: TrainableModel, config: TrainConfig) -> None:
    cfg_text = "\n".join(f"{k}={v}" for k, v in sorted(config.to_dict().items()))
    cfg_bytes = cfg_text.encode("utf-8")
    meta = f"d={model.d}\nhidden={model.hidden}\nproj={model.proj}\nexperts={model.n_experts}"
    blob = cfg_bytes + b"\n--\n" + meta.encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION),
           struct.pack("<I", len(blob)), blob,
           struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_checkpoint(path) -> tuple[TrainableModel, str]:
    """Load a checkpoint; parameters come back float64 (rounded through the
    float32 storage). Returns the model and the stored config text."""
    with open(path, "rb") as f:
        raw = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(8) != CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", take(4))
    blob = take(blob_len).decode("utf-8")
    cfg_text, _, meta_text = blob.partition("\n--\n")
    meta = dict(line.split("=", 1) for line in meta_text.splitlines() if line)
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(size * 4), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float64)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    model = TrainableModel(d=int(meta["d"]), hidden=int(meta["hidden"]),
                           proj=int(meta["proj"]), n_experts=int(meta["experts"]),
                           params=params)
    return model, cfg_text
