"""Corpus scanning, train/test splitting, and incremental task stream construction.

Expected corpus layout is one directory per keyword containing 16 kHz PCM
WAV clips: ``<root>/<keyword>/<clip>.wav``. A manifest is persisted as CSV
with the columns ``id, keyword, relative_path, split``.
"""

from __future__ import annotations

import csv
import wave
import warnings
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class UtteranceRecord:
    """One labeled audio clip. ``id`` is the posix path relative to the corpus root."""

    id: str
    keyword: str
    path: Path
    duration_s: float = 1.0
    split: str = TRAIN


@dataclass(frozen=True)
class Manifest:
    records: tuple[UtteranceRecord, ...]
    keywords: tuple[str, ...]
    source_root: Path
    skipped: int = 0

    def __post_init__(self):
        known = set(self.keywords)
        for rec in self.records:
            if rec.keyword not in known:
                raise ConfigError(f"record {rec.id!r} has unknown keyword {rec.keyword!r}")

    def by_keyword(self, keyword: str) -> tuple[UtteranceRecord, ...]:
        return tuple(r for r in self.records if r.keyword == keyword)

    def split_records(self, split: str) -> tuple[UtteranceRecord, ...]:
        return tuple(r for r in self.records if r.split == split)


@dataclass(frozen=True)
class TaskSpec:
    """One incremental task: index 0 is the pretrain task."""

    index: int
    new_keywords: tuple[str, ...]
    cumulative_classes: int


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[TaskSpec, ...]
    train_records: tuple[tuple[UtteranceRecord, ...], ...]
    test_records: tuple[tuple[UtteranceRecord, ...], ...]
    seed: int

    @property
    def class_order(self) -> tuple[str, ...]:
        """All keywords in head-index order (task introduction order)."""
        out: list[str] = []
        for task in self.tasks:
            out.extend(task.new_keywords)
        return tuple(out)

    @property
    def class_to_index(self) -> dict[str, int]:
        return {kw: i for i, kw in enumerate(self.class_order)}

    def num_classes_after(self, task_index: int) -> int:
        return self.tasks[task_index].cumulative_classes


def _probe_wav_duration(path: Path) -> float:
    """Duration in seconds from the WAV header; raises DataError if unreadable."""
    try:
        with wave.open(str(path), "rb") as fh:
            rate = fh.getframerate()
            frames = fh.getnframes()
    except (wave.Error, EOFError, OSError) as exc:
        raise DataError(f"cannot read WAV header of {path}: {exc}") from exc
    if rate <= 0:
        raise DataError(f"invalid sample rate in {path}")
    return frames / rate


def scan_dataset(root: str | Path) -> Manifest:
    """Scan a keyword-per-directory corpus into a Manifest.

    Keywords are the subdirectory names, sorted lexicographically. Unreadable
    audio files are skipped and counted in ``Manifest.skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")

    keywords = sorted(p.name for p in root.iterdir() if p.is_dir())
    records: list[UtteranceRecord] = []
    kept_keywords: list[str] = []
    skipped = 0
    for keyword in keywords:
        files = sorted((root / keyword).glob("*.wav"))
        kept: list[UtteranceRecord] = []
        for f in files:
            try:
                duration = _probe_wav_duration(f)
            except DataError as exc:
                warnings.warn(f"skipping unreadable clip: {exc}")
                skipped += 1
                continue
            rel = f.relative_to(root).as_posix()
            kept.append(UtteranceRecord(id=rel, keyword=keyword, path=f, duration_s=duration))
        if kept:
            kept_keywords.append(keyword)
            records.extend(kept)

    if not kept_keywords:
        raise ConfigError(f"no keywords found under {root}")
    return Manifest(
        records=tuple(records),
        keywords=tuple(kept_keywords),
        source_root=root,
        skipped=skipped,
    )


def _keyword_rng(seed: int, keyword: str) -> np.random.Generator:
    # Stable per-keyword stream so the split does not depend on keyword order.
    return np.random.default_rng([seed, zlib.crc32(keyword.encode("utf-8"))])


def split_train_test(manifest: Manifest, test_fraction: float, seed: int) -> Manifest:
    """Assign a stratified train/test split, deterministic per seed.

    Per keyword, records are sorted by id, shuffled by a keyword-specific
    generator seeded with ``[seed, crc32(keyword)]``, and the first
    ``round(test_fraction * n)`` go to test.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")

    assigned: dict[str, str] = {}
    for keyword in manifest.keywords:
        recs = sorted(manifest.by_keyword(keyword), key=lambda r: r.id)
        if len(recs) < 2:
            warnings.warn(f"keyword {keyword!r} has fewer than 2 records; all assigned to train")
            for r in recs:
                assigned[r.id] = TRAIN
            continue
        n_test = min(round(test_fraction * len(recs)), len(recs) - 1)
        perm = _keyword_rng(seed, keyword).permutation(len(recs))
        test_ids = {recs[i].id for i in perm[:n_test]}
        for r in recs:
            assigned[r.id] = TEST if r.id in test_ids else TRAIN

    records = tuple(replace(r, split=assigned[r.id]) for r in manifest.records)
    return replace(manifest, records=records)


def build_task_stream(
    manifest: Manifest,
    pretrain_count: int,
    task_count: int,
    keywords_per_task: int,
    seed: int,
) -> TaskStream:
    """Build the pretrain task plus ``task_count`` incremental tasks.

    Keyword-to-task assignment shuffles the lexicographic keyword order once
    with the given seed, then deals keywords out in order.
    """
    if pretrain_count < 1 or task_count < 0 or (task_count > 0 and keywords_per_task < 1):
        raise ConfigError("pretrain_count must be >= 1 and task sizes positive")
    needed = pretrain_count + task_count * keywords_per_task
    if needed > len(manifest.keywords):
        raise ConfigError(
            f"need {needed} keywords (pretrain {pretrain_count} + {task_count} x "
            f"{keywords_per_task}) but manifest has {len(manifest.keywords)}"
        )

    ordered = sorted(manifest.keywords)
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]

    tasks: list[TaskSpec] = []
    cursor = 0
    cumulative = 0
    for t in range(task_count + 1):
        width = pretrain_count if t == 0 else keywords_per_task
        new = tuple(shuffled[cursor : cursor + width])
        cursor += width
        cumulative += width
        tasks.append(TaskSpec(index=t, new_keywords=new, cumulative_classes=cumulative))

    train_sets = []
    test_sets = []
    for task in tasks:
        members = set(task.new_keywords)
        train_sets.append(
            tuple(r for r in manifest.records if r.split == TRAIN and r.keyword in members)
        )
        test_sets.append(
            tuple(r for r in manifest.records if r.split == TEST and r.keyword in members)
        )

    return TaskStream(
        tasks=tuple(tasks),
        train_records=tuple(train_sets),
        test_records=tuple(test_sets),
        seed=seed,
    )


MANIFEST_HEADER = ("id", "keyword", "relative_path", "split")


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            rel = rec.path.relative_to(manifest.source_root).as_posix()
            writer.writerow([rec.id, rec.keyword, rel, rec.split])


def read_manifest(path: str | Path, source_root: str | Path) -> Manifest:
    """Load a manifest CSV written by :func:`write_manifest`.

    Durations are not stored in the file; loaded records carry the normalized
    1.0 s duration.
    """
    path = Path(path)
    source_root = Path(source_root)
    if not path.is_file():
        raise ConfigError(f"manifest {path} does not exist")
    records: list[UtteranceRecord] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            rec_id, keyword, rel, split = row
            if split not in (TRAIN, TEST):
                raise DataError(f"{path}:{lineno}: bad split {split!r}")
            records.append(
                UtteranceRecord(
                    id=rec_id, keyword=keyword, path=source_root / rel, split=split
                )
            )
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise DataError(f"duplicate record id {rec.id!r} in {path}")
        seen.add(rec.id)
    keywords = tuple(sorted({r.keyword for r in records}))
    return Manifest(records=tuple(records), keywords=keywords, source_root=source_root)
