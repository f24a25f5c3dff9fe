"""Compact temporal-convolution keyword classifier with an expandable head.

The backbone treats the 40 MFCC coefficients as input channels of a 1-D
convolution over the 98 frames: a kernel-3 stem, then three residual blocks
(kernel 9, stride 2, channels 24/32/48, batch norm + ReLU, 1x1
convolutional shortcut), global average pooling, and a linear head with one
output per learned keyword. At 12 classes this counts 65,180 trainable
parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import dsp

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    channel_plan: tuple[int, ...] = (16, 24, 32, 48)
    n_coefficients: int = dsp.N_MFCC
    n_frames: int = dsp.N_FRAMES

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if len(self.channel_plan) != 4:
            raise ValueError("channel_plan must have exactly four stages")


class _ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 9, stride=stride, padding=4, bias=False)
        self.bn1 = nn.BatchNorm1d(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 9, padding=4, bias=False)
        self.bn2 = nn.BatchNorm1d(c_out)
        self.shortcut = nn.Conv1d(c_in, c_out, 1, stride=stride, bias=False)
        self.bn_shortcut = nn.BatchNorm1d(c_out)

    def forward(self, x):
        residual = self.bn_shortcut(self.shortcut(x))
        y = torch.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return torch.relu(y + residual)


class KeywordClassifier(nn.Module):
    """Backbone + linear head sized to the current number of keywords."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        c = config.channel_plan
        self.stem = nn.Conv1d(config.n_coefficients, c[0], 3, padding=1, bias=False)
        self.bn_stem = nn.BatchNorm1d(c[0])
        self.blocks = nn.Sequential(
            _ResidualBlock(c[0], c[1], 2),
            _ResidualBlock(c[1], c[2], 2),
            _ResidualBlock(c[2], c[3], 2),
        )
        self.head = nn.Linear(c[3], config.num_classes)
        for module in self.modules():
            if isinstance(module, nn.Conv1d):
                nn.init.kaiming_normal_(module.weight, nonlinearity="relu")

    @property
    def num_classes(self) -> int:
        return self.head.out_features

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        """Penultimate embedding: globally pooled final-block activations."""
        if features.dim() != 3 or features.shape[1:] != (
            self.config.n_coefficients,
            self.config.n_frames,
        ):
            raise ValueError(
                f"expected features (B, {self.config.n_coefficients}, "
                f"{self.config.n_frames}), got {tuple(features.shape)}"
            )
        y = torch.relu(self.bn_stem(self.stem(features)))
        y = self.blocks(y)
        return y.mean(dim=2)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(features))


def build_model(num_classes: int, seed: int = 0) -> KeywordClassifier:
    """Construct a classifier with seeded weight initialization."""
    torch.manual_seed(seed)
    return KeywordClassifier(ClassifierConfig(num_classes=num_classes))


def predict_proba(logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Tempered softmax over the class axis; rows sum to 1."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return torch.softmax(logits / temperature, dim=-1)


def expand_head(model: KeywordClassifier, new_class_count: int) -> KeywordClassifier:
    """Grow the head in place; old rows are kept bit-exactly, new rows are zero.

    Zero initialization means new-class logits are exactly 0 until trained,
    and old-class logits are unchanged for any input.
    """
    old = model.head
    if new_class_count <= old.out_features:
        raise ValueError(
            f"new class count {new_class_count} must exceed current {old.out_features}"
        )
    new = nn.Linear(old.in_features, new_class_count, dtype=old.weight.dtype)
    with torch.no_grad():
        new.weight.zero_()
        new.bias.zero_()
        new.weight[: old.out_features] = old.weight
        new.bias[: old.out_features] = old.bias
    model.head = new
    model.config = ClassifierConfig(
        num_classes=new_class_count,
        channel_plan=model.config.channel_plan,
        n_coefficients=model.config.n_coefficients,
        n_frames=model.config.n_frames,
    )
    return model


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def snapshot(model: KeywordClassifier) -> KeywordClassifier:
    """Deep, frozen copy in eval mode; used as the distillation teacher."""
    frozen = copy.deepcopy(model)
    frozen.eval()
    for p in frozen.parameters():
        p.requires_grad_(False)
    return frozen


def features_to_tensor(features: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Numpy MFCC batch (B, 40, 98) or single (40, 98) to a torch tensor."""
    arr = np.asarray(features)
    if arr.ndim == 2:
        arr = arr[None]
    return torch.as_tensor(arr, dtype=dtype)


def save_checkpoint(model: KeywordClassifier, path: str | Path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "num_classes": model.num_classes,
        "state_dict": model.state_dict(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> KeywordClassifier:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    model = KeywordClassifier(ClassifierConfig(num_classes=payload["num_classes"]))
    model.load_state_dict(payload["state_dict"])
    return model
