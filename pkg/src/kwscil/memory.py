"""Budgeted exemplar store and its samplers.

The diversity sampler groups candidates by keyword, scores each candidate's
prediction uncertainty under five waveform perturbations, and keeps members
at evenly spaced ranks of the per-class uncertainty ordering so the stored
set spans the whole confidence spectrum. Random and closest-to-class-mean
samplers are provided as baselines; ``none`` keeps the store empty.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch

from . import dsp, model as model_mod
from .dataset import Manifest, UtteranceRecord
from .errors import ConfigError, DataError

SAMPLER_KINDS = ("rainbow", "random", "mean_closest", "none")

#: Maps a record to its normalized waveform; default decodes from disk.
WaveformLoader = Callable[[UtteranceRecord], np.ndarray]


def _default_loader(record: UtteranceRecord) -> np.ndarray:
    return dsp.load_wav(record.path)


@dataclass(frozen=True)
class ExemplarEntry:
    record: UtteranceRecord
    uncertainty: float
    task_added: int


@dataclass(frozen=True)
class ExemplarStore:
    budget: int
    entries: tuple[ExemplarEntry, ...] = ()

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if len(self.entries) > self.budget:
            raise ValueError(f"{len(self.entries)} entries exceed budget {self.budget}")
        ids = [e.record.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate record ids in exemplar store")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def records(self) -> tuple[UtteranceRecord, ...]:
        return tuple(e.record for e in self.entries)


@dataclass(frozen=True)
class ClassGroup:
    keyword: str
    members: tuple[UtteranceRecord, ...]


def group_by_keyword(candidates: Iterable[UtteranceRecord]) -> list[ClassGroup]:
    """Partition candidates into one group per keyword, keyword-sorted."""
    buckets: dict[str, list[UtteranceRecord]] = {}
    for rec in candidates:
        buckets.setdefault(rec.keyword, []).append(rec)
    return [
        ClassGroup(keyword=kw, members=tuple(buckets[kw])) for kw in sorted(buckets)
    ]


def _true_class_probabilities(
    net: model_mod.KeywordClassifier,
    waveforms: np.ndarray,
    class_indices: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """P(true class | waveform) under a temperature-1 softmax, eval mode."""
    was_training = net.training
    net.eval()
    probs = np.empty(len(waveforms), dtype=np.float64)
    with torch.no_grad():
        for start in range(0, len(waveforms), batch_size):
            chunk = slice(start, start + batch_size)
            feats = model_mod.features_to_tensor(dsp.compute_mfcc_batch(waveforms[chunk]))
            p = model_mod.predict_proba(net(feats))
            idx = torch.as_tensor(class_indices[chunk], dtype=torch.long)
            probs[chunk] = p[torch.arange(len(idx)), idx].numpy().astype(np.float64)
    if was_training:
        net.train()
    return probs


def estimate_uncertainty(
    net: model_mod.KeywordClassifier,
    record: UtteranceRecord,
    class_index: int,
    seed: int = 0,
    loader: WaveformLoader | None = None,
) -> float:
    """One minus the mean true-class probability over the five perturbations.

    The five variants use per-(record, strategy) seeds derived from ``seed``
    so scores do not depend on evaluation order.
    """
    if not 0 <= class_index < net.num_classes:
        raise ValueError(
            f"class index {class_index} outside model head of size {net.num_classes}"
        )
    loader = loader or _default_loader
    variants = dsp.perturb_all(loader(record), seed, record.id)
    probs = _true_class_probabilities(
        net, variants, np.full(len(variants), class_index, dtype=np.int64)
    )
    return float(1.0 - probs.mean())


def estimate_uncertainties(
    net: model_mod.KeywordClassifier,
    records: Sequence[UtteranceRecord],
    class_indices: Sequence[int],
    seed: int = 0,
    loader: WaveformLoader | None = None,
) -> dict[str, float]:
    """Batched uncertainty per record id; equals per-record estimates exactly."""
    loader = loader or _default_loader
    k = len(dsp.PERTURBATION_STRATEGIES)
    waveforms = np.empty((len(records) * k, dsp.CLIP_SAMPLES), dtype=np.float32)
    indices = np.empty(len(records) * k, dtype=np.int64)
    for i, (rec, cls) in enumerate(zip(records, class_indices)):
        if not 0 <= cls < net.num_classes:
            raise ValueError(
                f"class index {cls} outside model head of size {net.num_classes}"
            )
        waveforms[i * k : (i + 1) * k] = dsp.perturb_all(loader(rec), seed, rec.id)
        indices[i * k : (i + 1) * k] = cls
    probs = _true_class_probabilities(net, waveforms, indices)
    per_record = probs.reshape(len(records), k).mean(axis=1)
    return {rec.id: float(1.0 - p) for rec, p in zip(records, per_record)}


def _class_quotas(pool_sizes: Mapping[str, int], budget: int) -> dict[str, int]:
    """Per-class slot counts: floor(budget / classes) each, remainder and any
    surplus from small pools going to the largest pools first."""
    if not pool_sizes or budget <= 0:
        return {kw: 0 for kw in pool_sizes}
    n_classes = len(pool_sizes)
    if budget < n_classes:
        warnings.warn(
            f"budget {budget} is below the class count {n_classes}; "
            "filling one exemplar per class for the largest pools"
        )
    by_size = sorted(pool_sizes, key=lambda kw: (-pool_sizes[kw], kw))
    base, remainder = divmod(budget, n_classes)
    quotas = {kw: base + (1 if i < remainder else 0) for i, kw in enumerate(by_size)}
    quotas = {kw: min(q, pool_sizes[kw]) for kw, q in quotas.items()}
    leftover = budget - sum(quotas.values())
    while leftover > 0:
        open_classes = [kw for kw in by_size if quotas[kw] < pool_sizes[kw]]
        if not open_classes:
            break
        target = max(open_classes, key=lambda kw: (pool_sizes[kw] - quotas[kw], kw))
        quotas[target] += 1
        leftover -= 1
    return quotas


def _spread_ranks(pool_size: int, quota: int) -> list[int]:
    """Evenly spaced rank indices round(i * pool / quota), deduplicated by
    advancing to the next unselected rank."""
    taken: set[int] = set()
    ranks: list[int] = []
    for i in range(quota):
        r = min(round(i * pool_size / quota), pool_size - 1)
        while r in taken:
            r += 1
            if r >= pool_size:
                r = 0
        taken.add(r)
        ranks.append(r)
    return ranks


def diversity_select(
    groups: Sequence[ClassGroup],
    uncertainties: Mapping[str, float],
    budget: int,
    task_added: Mapping[str, int] | None = None,
) -> ExemplarStore:
    """Select per-class quotas at evenly spaced ranks of descending uncertainty.

    Within a class, members sort by uncertainty descending (ties broken by
    record id) and ranks ``round(i * pool / quota)`` are kept, so both very
    uncertain and very confident members survive.
    """
    task_added = task_added or {}
    quotas = _class_quotas({g.keyword: len(g.members) for g in groups}, budget)
    entries: list[ExemplarEntry] = []
    for group in groups:
        quota = quotas[group.keyword]
        if quota == 0:
            continue
        ordered = sorted(group.members, key=lambda r: (-uncertainties[r.id], r.id))
        for rank in _spread_ranks(len(ordered), quota):
            rec = ordered[rank]
            entries.append(
                ExemplarEntry(
                    record=rec,
                    uncertainty=uncertainties[rec.id],
                    task_added=task_added.get(rec.id, 0),
                )
            )
    entries.sort(key=lambda e: e.record.id)
    return ExemplarStore(budget=budget, entries=tuple(entries))


def random_select(
    candidates: Sequence[UtteranceRecord],
    budget: int,
    seed: int,
    task_added: Mapping[str, int] | None = None,
) -> ExemplarStore:
    """Uniform sample without replacement: id-sorted candidates, one seeded
    permutation, first min(budget, n) kept."""
    task_added = task_added or {}
    ordered = sorted(candidates, key=lambda r: r.id)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    chosen = [ordered[i] for i in perm[: min(budget, len(ordered))]]
    entries = tuple(
        ExemplarEntry(record=r, uncertainty=float("nan"), task_added=task_added.get(r.id, 0))
        for r in sorted(chosen, key=lambda r: r.id)
    )
    return ExemplarStore(budget=budget, entries=entries)


def mean_closest_select(
    candidates: Sequence[UtteranceRecord],
    embeddings: Mapping[str, np.ndarray],
    budget: int,
    task_added: Mapping[str, int] | None = None,
) -> ExemplarStore:
    """Per class, keep the quota members closest to the class embedding mean.

    Ties in distance break toward the lowest record id, which also makes the
    result invariant to candidate input order.
    """
    task_added = task_added or {}
    groups = group_by_keyword(candidates)
    quotas = _class_quotas({g.keyword: len(g.members) for g in groups}, budget)
    entries: list[ExemplarEntry] = []
    for group in groups:
        quota = quotas[group.keyword]
        if quota == 0:
            continue
        vectors = np.stack([np.asarray(embeddings[r.id], dtype=np.float64) for r in group.members])
        center = vectors.mean(axis=0)
        distances = np.linalg.norm(vectors - center, axis=1)
        ranked = sorted(
            zip(group.members, distances), key=lambda pair: (pair[1], pair[0].id)
        )
        for rec, _ in ranked[:quota]:
            entries.append(
                ExemplarEntry(
                    record=rec,
                    uncertainty=float("nan"),
                    task_added=task_added.get(rec.id, 0),
                )
            )
    entries.sort(key=lambda e: e.record.id)
    return ExemplarStore(budget=budget, entries=tuple(entries))


def compute_embeddings(
    net: model_mod.KeywordClassifier,
    records: Sequence[UtteranceRecord],
    loader: WaveformLoader | None = None,
    batch_size: int = 256,
) -> dict[str, np.ndarray]:
    """Penultimate-layer embedding per record id, eval mode."""
    loader = loader or _default_loader
    was_training = net.training
    net.eval()
    out: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            waves = np.stack([loader(r) for r in chunk])
            feats = model_mod.features_to_tensor(dsp.compute_mfcc_batch(waves))
            emb = net.embed(feats).numpy()
            for rec, vec in zip(chunk, emb):
                out[rec.id] = vec.astype(np.float64)
    if was_training:
        net.train()
    return out


def update_memory(
    store: ExemplarStore,
    incoming: Sequence[UtteranceRecord],
    net: model_mod.KeywordClassifier,
    kind: str,
    budget: int,
    class_to_index: Mapping[str, int],
    task_index: int,
    seed: int = 0,
    loader: WaveformLoader | None = None,
) -> ExemplarStore:
    """Replace the store with a fresh selection over old exemplars + incoming.

    Selection runs after training on the task, so uncertainty and embedding
    scores reflect the newest model.
    """
    if kind not in SAMPLER_KINDS:
        raise ConfigError(f"unknown sampler kind {kind!r}; expected one of {SAMPLER_KINDS}")
    if kind == "none":
        return ExemplarStore(budget=budget)

    task_added = {e.record.id: e.task_added for e in store.entries}
    candidates: list[UtteranceRecord] = list(store.records)
    seen = set(task_added)
    for rec in incoming:
        if rec.id not in seen:
            candidates.append(rec)
            task_added[rec.id] = task_index
            seen.add(rec.id)

    if kind == "random":
        return random_select(candidates, budget, seed, task_added)
    if kind == "mean_closest":
        embeddings = compute_embeddings(net, candidates, loader)
        return mean_closest_select(candidates, embeddings, budget, task_added)

    class_indices = [class_to_index[rec.keyword] for rec in candidates]
    uncertainties = estimate_uncertainties(net, candidates, class_indices, seed, loader)
    groups = group_by_keyword(candidates)
    return diversity_select(groups, uncertainties, budget, task_added)


STORE_HEADER = ("id", "keyword", "relative_path", "uncertainty", "task_added")


def save_store(store: ExemplarStore, path: str | Path, source_root: str | Path) -> None:
    path = Path(path)
    source_root = Path(source_root)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STORE_HEADER)
        for e in store.entries:
            rel = e.record.path.relative_to(source_root).as_posix()
            writer.writerow(
                [e.record.id, e.record.keyword, rel, repr(e.uncertainty), e.task_added]
            )


def load_store(path: str | Path, manifest: Manifest, budget: int) -> ExemplarStore:
    """Rebuild a store from its manifest, resolving records by id."""
    path = Path(path)
    by_id = {r.id: r for r in manifest.records}
    entries: list[ExemplarEntry] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != STORE_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(STORE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            rec_id, _, _, uncertainty, task_added = row
            if rec_id not in by_id:
                raise DataError(f"{path}:{lineno}: record {rec_id!r} not in manifest")
            entries.append(
                ExemplarEntry(
                    record=by_id[rec_id],
                    uncertainty=float(uncertainty),
                    task_added=int(task_added),
                )
            )
    return ExemplarStore(budget=budget, entries=tuple(entries))
