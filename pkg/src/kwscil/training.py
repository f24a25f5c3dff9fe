"""Loss functions and the per-task teacher-student training loop.

The total objective blends cross-entropy over all seen keywords with a
distillation term that matches the student's tempered distribution over old
keywords to the frozen teacher's. The blend weight is
``sqrt(1 - n_old / n_current)``: pure cross-entropy on the first task,
shifting toward distillation as the share of old keywords grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Mapping, Sequence

import numpy as np
import torch

from . import dsp, model as model_mod
from .dataset import UtteranceRecord
from .memory import ExemplarStore, WaveformLoader, _default_loader


@dataclass(frozen=True)
class KDConfig:
    temperature: float = 2.0
    enabled: bool = True
    # Conventional T^2 gradient rescaling; off because the loss is defined
    # without it.
    scale_by_t_squared: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.algorithm != "adam":
            raise ValueError(f"unsupported optimizer {self.algorithm!r}")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("optimizer fields must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    ce: torch.Tensor
    kd: torch.Tensor
    lam: float
    total: torch.Tensor


def ce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean soft-label cross-entropy: -sum_i y_i log softmax(o)_i."""
    if logits.shape != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    log_probs = torch.log_softmax(logits, dim=1)
    return -(targets * log_probs).sum(dim=1).mean()


def kd_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    temperature: float,
    old_class_count: int,
    scale_by_t_squared: bool = False,
) -> torch.Tensor:
    """Tempered cross-entropy of the student against the frozen teacher over
    the first ``old_class_count`` classes. Returns 0 when there is no teacher."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if old_class_count == 0:
        return torch.zeros((), dtype=student_logits.dtype)
    if old_class_count > min(student_logits.shape[1], teacher_logits.shape[1]):
        raise ValueError(
            f"old_class_count {old_class_count} exceeds logit width "
            f"{student_logits.shape[1]}/{teacher_logits.shape[1]}"
        )
    teacher_probs = torch.softmax(
        teacher_logits[:, :old_class_count].detach() / temperature, dim=1
    )
    student_log_probs = torch.log_softmax(
        student_logits[:, :old_class_count] / temperature, dim=1
    )
    loss = -(teacher_probs * student_log_probs).sum(dim=1).mean()
    if scale_by_t_squared:
        loss = loss * temperature**2
    return loss


def mixing_coefficient(old_class_count: int, new_class_count: int) -> float:
    """Cross-entropy weight sqrt(1 - n_old / n_new); 1 with no old classes,
    0 when no classes are new."""
    if new_class_count <= 0:
        raise ValueError(f"new_class_count must be positive, got {new_class_count}")
    if not 0 <= old_class_count <= new_class_count:
        raise ValueError(
            f"old_class_count {old_class_count} outside [0, {new_class_count}]"
        )
    return sqrt(1.0 - old_class_count / new_class_count)


def total_loss(
    features: torch.Tensor,
    targets: torch.Tensor,
    student: model_mod.KeywordClassifier,
    teacher: model_mod.KeywordClassifier | None,
    kd_config: KDConfig,
) -> LossBreakdown:
    """Blended objective for one batch. With distillation disabled or no
    teacher the breakdown degenerates to pure cross-entropy."""
    student_logits = student(features)
    ce = ce_loss(student_logits, targets)
    if not kd_config.enabled or teacher is None or teacher.num_classes == 0:
        zero = torch.zeros((), dtype=ce.dtype)
        return LossBreakdown(ce=ce, kd=zero, lam=1.0, total=ce)
    with torch.no_grad():
        teacher_logits = teacher(features)
    kd = kd_loss(
        student_logits,
        teacher_logits,
        kd_config.temperature,
        teacher.num_classes,
        kd_config.scale_by_t_squared,
    )
    lam = mixing_coefficient(teacher.num_classes, student.num_classes)
    total = lam * ce + (1.0 - lam) * kd
    return LossBreakdown(ce=ce, kd=kd, lam=lam, total=total)


def _spec_augment(
    features: np.ndarray, rng: np.random.Generator, max_masks: int = 2
) -> np.ndarray:
    """Feature-domain masking: zero one time stripe and one coefficient
    stripe per example."""
    out = features.copy()
    n_coeff, n_frames = out.shape[1], out.shape[2]
    for i in range(out.shape[0]):
        t_width = int(rng.integers(1, max(2, n_frames // 8)))
        t_start = int(rng.integers(0, n_frames - t_width + 1))
        out[i, :, t_start : t_start + t_width] = 0.0
        f_width = int(rng.integers(1, max(2, n_coeff // 8)))
        f_start = int(rng.integers(0, n_coeff - f_width + 1))
        out[i, f_start : f_start + f_width, :] = 0.0
    return out


def _batch_features_and_targets(
    waveforms: np.ndarray,
    labels: np.ndarray,
    augment: str,
    mixup_alpha: float,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    if augment == "mixup":
        lam = float(rng.beta(mixup_alpha, mixup_alpha))
        partner = rng.permutation(len(waveforms))
        waveforms = lam * waveforms + (1.0 - lam) * waveforms[partner]
        labels = lam * labels + (1.0 - lam) * labels[partner]
        features = dsp.compute_mfcc_batch(waveforms)
    elif augment == "specaugment":
        features = _spec_augment(dsp.compute_mfcc_batch(waveforms), rng)
    elif augment == "none":
        features = dsp.compute_mfcc_batch(waveforms)
    else:
        raise ValueError(f"unknown augmentation {augment!r}")
    return (
        model_mod.features_to_tensor(features),
        torch.as_tensor(labels, dtype=torch.float32),
    )


@torch.no_grad()
def _train_accuracy(
    student: model_mod.KeywordClassifier,
    features: torch.Tensor,
    class_indices: np.ndarray,
    batch_size: int,
) -> float:
    was_training = student.training
    student.eval()
    hits = 0
    for start in range(0, len(features), batch_size):
        logits = student(features[start : start + batch_size])
        pred = logits.argmax(dim=1).numpy()
        hits += int((pred == class_indices[start : start + batch_size]).sum())
    if was_training:
        student.train()
    return hits / len(features)


def train_task(
    student: model_mod.KeywordClassifier,
    teacher: model_mod.KeywordClassifier | None,
    task_train_data: Sequence[UtteranceRecord],
    exemplar_store: ExemplarStore,
    optimizer_config: OptimizerConfig,
    kd_config: KDConfig,
    augment: str = "mixup",
    *,
    class_to_index: Mapping[str, int],
    task_index: int = 0,
    mixup_alpha: float = 0.2,
    loader: WaveformLoader | None = None,
) -> list[dict]:
    """Train the student on the task stream plus the exemplar store.

    Returns one log row per epoch with the loss breakdown and the accuracy
    on the clean (unaugmented) training set. The teacher is never updated.
    """
    loader = loader or _default_loader
    records = list(task_train_data) + list(exemplar_store.records)
    if not records:
        raise ValueError("empty training set")
    records.sort(key=lambda r: r.id)

    waveforms = np.stack([loader(r) for r in records])
    class_indices = np.array([class_to_index[r.keyword] for r in records], dtype=np.int64)
    num_classes = student.num_classes
    onehot = np.zeros((len(records), num_classes), dtype=np.float64)
    onehot[np.arange(len(records)), class_indices] = 1.0
    clean_features = model_mod.features_to_tensor(dsp.compute_mfcc_batch(waveforms))

    optimizer = torch.optim.Adam(student.parameters(), lr=optimizer_config.learning_rate)
    rng = np.random.default_rng([optimizer_config.seed, task_index])
    batch_size = optimizer_config.batch_size

    log: list[dict] = []
    for epoch in range(optimizer_config.epochs):
        student.train()
        order = rng.permutation(len(records))
        sums = {"ce": 0.0, "kd": 0.0, "total": 0.0}
        lam = 1.0
        n_batches = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            features, targets = _batch_features_and_targets(
                waveforms[batch], onehot[batch], augment, mixup_alpha, rng
            )
            breakdown = total_loss(features, targets, student, teacher, kd_config)
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            sums["ce"] += float(breakdown.ce.detach())
            sums["kd"] += float(breakdown.kd.detach())
            sums["total"] += float(breakdown.total.detach())
            lam = breakdown.lam
            n_batches += 1
        train_acc = _train_accuracy(student, clean_features, class_indices, batch_size)
        log.append(
            {
                "task": task_index,
                "epoch": epoch,
                "ce": sums["ce"] / n_batches,
                "kd": sums["kd"] / n_batches,
                "lambda": lam,
                "total": sums["total"] / n_batches,
                "train_acc": train_acc,
            }
        )
    student.eval()
    return log
