"""Backbone registry.

The ``dino_*`` entries pull pretrained self-supervised ViTs from torch hub
(network or a warm local cache required). ``toy_cnn`` is a small
fixed-weight convolutional encoder for offline smoke runs and tests; it is
deterministic but not pretrained, so use it only to exercise the pipeline.
"""
from __future__ import annotations

import torch
from torch import nn

HUB_BACKBONES = {
    "dino_vitb16": ("facebookresearch/dino:main", "dino_vitb16", 768),
    "dino_vits16": ("facebookresearch/dino:main", "dino_vits16", 384),
}


class ToyCNN(nn.Module):
    """Fixed-seed conv encoder: 3x224x224 -> 64-d embedding."""

    DIM = 64

    def __init__(self):
        super().__init__()
        torch.manual_seed(1234)
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=7, stride=4, padding=3),
            nn.GELU(),
            nn.Conv2d(16, 32, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(32, self.DIM, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool2d(1),
        )
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.net(x).flatten(1)


def load_backbone(name: str, device: str = "cpu") -> tuple[nn.Module, int]:
    """Return (model in eval mode, embedding dimension)."""
    if name == "toy_cnn":
        model, dim = ToyCNN(), ToyCNN.DIM
    elif name in HUB_BACKBONES:
        repo, entry, dim = HUB_BACKBONES[name]
        model = torch.hub.load(repo, entry, pretrained=True)
    else:
        known = ["toy_cnn", *HUB_BACKBONES]
        raise ValueError(f"unknown backbone {name!r}; available: {known}")
    model.eval()
    return model.to(device), dim
