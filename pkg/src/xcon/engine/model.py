"""Trainable representation model: a shared linear adapter over the frozen
input features plus K+1 projection heads (index 0 = the shared coarse head,
1..K = per-sub-dataset expert heads).

Each head is a 3-layer MLP (d -> H, H -> H, H -> P) with GELU after the
first two layers and an L2-normalized output. All math is float64 and the
backward pass is hand-derived; gradients are audited against central finite
differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..rng import stage_rng

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


@dataclass
class HeadCache:
    """Forward intermediates needed by the backward pass."""
    v: np.ndarray        # model input
    a: np.ndarray        # adapter output
    x1: np.ndarray       # pre-activation, layer 1
    h1: np.ndarray
    x2: np.ndarray       # pre-activation, layer 2
    h2: np.ndarray
    y: np.ndarray        # pre-normalization output
    z: np.ndarray        # unit-norm embedding
    norms: np.ndarray    # row norms of y


class TrainableModel:
    """Parameter container plus forward/backward for every head path.

    Parameters live in a flat dict keyed ``adapter.w``, ``adapter.b``,
    ``head<i>.<layer>.w`` and ``head<i>.<layer>.b``; gradients use the same
    keys, which keeps SGD, checkpointing, and finite-difference audits
    trivially aligned.
    """

    def __init__(self, d: int, hidden: int, proj: int, n_experts: int,
                 params: dict[str, np.ndarray]):
        self.d = d
        self.hidden = hidden
        self.proj = proj
        self.n_experts = n_experts
        self.params = params

    @property
    def n_heads(self) -> int:
        return self.n_experts + 1

    @classmethod
    def init(cls, d: int, hidden: int, proj: int, n_experts: int, seed: int) -> "TrainableModel":
        """Identity adapter; head layers uniform in +-1/sqrt(fan_in).

        Each head draws from its own stream derived from ``seed``, so adding
        or removing expert heads never perturbs the other heads' parameters.
        """
        params: dict[str, np.ndarray] = {
            "adapter.w": np.eye(d),
            "adapter.b": np.zeros(d),
        }
        dims = [(d, hidden), (hidden, hidden), (hidden, proj)]
        for i in range(n_experts + 1):
            rng = stage_rng(seed, f"init.head{i}")
            for layer, (fan_in, fan_out) in enumerate(dims, start=1):
                bound = 1.0 / np.sqrt(fan_in)
                params[f"head{i}.{layer}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                params[f"head{i}.{layer}.b"] = rng.uniform(-bound, bound, size=fan_out)
        return cls(d, hidden, proj, n_experts, params)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def check_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    # forward / backward -------------------------------------------------

    def forward_head(self, head_index: int, v: np.ndarray) -> tuple[np.ndarray, HeadCache]:
        """Embed rows ``v`` through the adapter and head ``head_index``.

        Returns unit-norm embeddings plus the cache for ``backward_head``.
        """
        if not 0 <= head_index <= self.n_experts:
            raise ValueError(f"head index {head_index} out of range [0, {self.n_experts}]")
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.d:
            raise ValueError(f"expected (b, {self.d}) input, got {v.shape}")
        p = self.params
        h = f"head{head_index}"
        a = v @ p["adapter.w"] + p["adapter.b"]
        x1 = a @ p[f"{h}.1.w"] + p[f"{h}.1.b"]
        h1 = gelu(x1)
        x2 = h1 @ p[f"{h}.2.w"] + p[f"{h}.2.b"]
        h2 = gelu(x2)
        y = h2 @ p[f"{h}.3.w"] + p[f"{h}.3.b"]
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        if norms.min() < 1e-12:
            raise ValueError("collapsed embedding: zero-norm head output")
        z = y / norms
        return z, HeadCache(v=v, a=a, x1=x1, h1=h1, x2=x2, h2=h2, y=y, z=z, norms=norms)

    def backward_head(self, head_index: int, cache: HeadCache, dz: np.ndarray,
                      grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
        """Accumulate ``scale * dLoss/dparam`` into ``grads`` given
        ``dz = dLoss/dZ`` for a forward pass through ``head_index``."""
        p = self.params
        h = f"head{head_index}"
        # through z = y / ||y||
        dot = (dz * cache.z).sum(axis=1, keepdims=True)
        dy = (dz - cache.z * dot) / cache.norms
        grads[f"{h}.3.w"] += scale * (cache.h2.T @ dy)
        grads[f"{h}.3.b"] += scale * dy.sum(axis=0)
        dh2 = dy @ p[f"{h}.3.w"].T
        dx2 = dh2 * gelu_grad(cache.x2)
        grads[f"{h}.2.w"] += scale * (cache.h1.T @ dx2)
        grads[f"{h}.2.b"] += scale * dx2.sum(axis=0)
        dh1 = dx2 @ p[f"{h}.2.w"].T
        dx1 = dh1 * gelu_grad(cache.x1)
        grads[f"{h}.1.w"] += scale * (cache.a.T @ dx1)
        grads[f"{h}.1.b"] += scale * dx1.sum(axis=0)
        da = dx1 @ p[f"{h}.1.w"].T
        grads["adapter.w"] += scale * (cache.v.T @ da)
        grads["adapter.b"] += scale * da.sum(axis=0)

    def embed_adapter(self, v: np.ndarray) -> np.ndarray:
        """Adapter output space (heads discarded), L2-normalized per row."""
        v = np.asarray(v, dtype=np.float64)
        a = v @ self.params["adapter.w"] + self.params["adapter.b"]
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        if norms.min() < 1e-12:
            raise ValueError("collapsed embedding: zero-norm adapter output")
        return a / norms


def forward_head(model: TrainableModel, head_index: int, v: np.ndarray):
    """Function-style alias for :meth:`TrainableModel.forward_head`."""
    return model.forward_head(head_index, v)
