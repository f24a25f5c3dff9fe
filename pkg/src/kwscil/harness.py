"""Experiment orchestration, ACC/BWT/resource metrics, and report rendering.

A run writes four artifacts into its output directory:

- ``config.yaml``  - the resolved configuration that produced the run
- ``matrix.csv``   - accuracy matrix row per task: per-task and pooled accuracy
- ``epochs.csv``   - per-epoch loss breakdown and training accuracy
- ``metrics.csv``  - final ACC, BWT, parameter count, and exemplar memory
- ``store.csv``    - exemplar manifest (ids, uncertainties, task added)

Floats are serialized with ``repr`` so identical runs produce byte-identical
files.
"""

from __future__ import annotations

import csv
import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import yaml

from . import dataset as dataset_mod
from . import dsp
from . import memory as memory_mod
from . import model as model_mod
from . import training as training_mod
from .errors import ConfigError, DataError

#: Bytes per stored 1 s clip: 16000 16-bit samples plus the 44-byte header.
BYTES_PER_CLIP = dsp.CLIP_SAMPLES * 2 + 44

AUGMENT_KINDS = ("mixup", "specaugment", "none")


@dataclass
class ExperimentConfig:
    dataset_root: str
    seed: int = 0
    test_fraction: float = 0.2
    pretrain_count: int = 15
    task_count: int = 5
    keywords_per_task: int = 3
    memory_size: int = 500
    sampler: str = "rainbow"
    augment: str = "mixup"
    kd: bool = True
    kd_temperature: float = 2.0
    mixup_alpha: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    pretrain_epochs: int | None = None
    output_dir: str | None = None

    def validate(self) -> None:
        if self.sampler not in memory_mod.SAMPLER_KINDS:
            raise ConfigError(f"sampler must be one of {memory_mod.SAMPLER_KINDS}")
        if self.augment not in AUGMENT_KINDS:
            raise ConfigError(f"augment must be one of {AUGMENT_KINDS}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.memory_size < 0:
            raise ConfigError("memory_size must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size, and learning_rate must be positive")
        if self.kd_temperature <= 0 or self.mixup_alpha <= 0:
            raise ConfigError("kd_temperature and mixup_alpha must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset_root" not in data:
            raise ConfigError("config requires dataset_root")
        return cls(**data)


@dataclass
class MetricsReport:
    acc: float
    bwt: float | None
    param_count: int
    memory_bytes: int
    pooled_accuracy: list[float] = field(default_factory=list)
    final_row: list[float] = field(default_factory=list)


def evaluate(
    net: model_mod.KeywordClassifier,
    test_sets: Sequence[Sequence[dataset_mod.UtteranceRecord]],
    class_to_index: Mapping[str, int],
    loader: memory_mod.WaveformLoader | None = None,
    feature_cache: dict[str, np.ndarray] | None = None,
    batch_size: int = 256,
) -> tuple[list[float], float]:
    """Accuracy per task test set plus pooled accuracy over all of them.

    Decisions are a single argmax over every class the head knows; task
    identity is never consulted.
    """
    loader = loader or memory_mod._default_loader
    records = [r for task_set in test_sets for r in task_set]
    if not records:
        raise ValueError("empty test set")
    if feature_cache is None:
        feature_cache = {}
    missing = [r for r in records if r.id not in feature_cache]
    for start in range(0, len(missing), batch_size):
        chunk = missing[start : start + batch_size]
        waves = np.stack([loader(r) for r in chunk])
        feats = dsp.compute_mfcc_batch(waves)
        for rec, f in zip(chunk, feats):
            feature_cache[rec.id] = f

    net.eval()
    correct: dict[int, int] = {}
    totals: dict[int, int] = {}
    pooled_hits = 0
    flat: list[tuple[int, dataset_mod.UtteranceRecord]] = [
        (t, r) for t, task_set in enumerate(test_sets) for r in task_set
    ]
    with torch.no_grad():
        for start in range(0, len(flat), batch_size):
            chunk = flat[start : start + batch_size]
            feats = model_mod.features_to_tensor(
                np.stack([feature_cache[r.id] for _, r in chunk])
            )
            pred = net(feats).argmax(dim=1).numpy()
            truth = np.array([class_to_index[r.keyword] for _, r in chunk])
            hits = pred == truth
            pooled_hits += int(hits.sum())
            for (t, _), hit in zip(chunk, hits):
                totals[t] = totals.get(t, 0) + 1
                correct[t] = correct.get(t, 0) + int(hit)
    for t in range(len(test_sets)):
        if t not in totals:
            raise ValueError(f"task {t} has an empty test set")
    per_task = [correct.get(t, 0) / totals[t] for t in range(len(test_sets))]
    return per_task, pooled_hits / len(flat)


def compute_acc(matrix: Sequence[Sequence[float]]) -> float:
    """Mean of the final row: accuracy averaged over all tasks at the end."""
    if not matrix:
        raise ValueError("empty accuracy matrix")
    final = matrix[-1]
    if len(final) != len(matrix):
        raise ValueError(
            f"final row has {len(final)} entries for {len(matrix)} tasks; incomplete"
        )
    return float(np.mean(final))


def compute_bwt(matrix: Sequence[Sequence[float]]) -> float | None:
    """Mean change of prior-task accuracy between learning time and the end.

    Returns None for a single-task run, where backward transfer is undefined.
    """
    horizon = len(matrix) - 1
    if horizon < 1:
        return None
    final = matrix[-1]
    if len(final) != len(matrix):
        raise ValueError("incomplete final row")
    deltas = [final[j] - matrix[j][j] for j in range(horizon)]
    return float(np.mean(deltas))


def memory_footprint(store: memory_mod.ExemplarStore) -> int:
    """Raw audio bytes held by the store: count x bytes per 1 s clip."""
    return len(store) * BYTES_PER_CLIP


def _write_matrix(path: Path, matrix: list[list[float]], pooled: list[float]) -> None:
    n_tasks = len(matrix)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "pooled"] + [f"acc_task_{j}" for j in range(n_tasks)])
        for t, row in enumerate(matrix):
            padded = [repr(v) for v in row] + [""] * (n_tasks - len(row))
            writer.writerow([t, repr(pooled[t])] + padded)


def read_matrix(path: str | Path) -> tuple[list[list[float]], list[float]]:
    """Parse ``matrix.csv`` back into (matrix rows, pooled accuracy curve)."""
    path = Path(path)
    matrix: list[list[float]] = []
    pooled: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["task", "pooled"]:
            raise DataError(f"{path}:1: expected matrix header, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pooled.append(float(row[1]))
                matrix.append([float(v) for v in row[2:] if v != ""])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed matrix row: {exc}") from exc
    return matrix, pooled


def _write_metrics(path: Path, report: MetricsReport) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["acc", "bwt", "param_count", "memory_bytes"])
        bwt = "" if report.bwt is None else repr(report.bwt)
        writer.writerow([repr(report.acc), bwt, report.param_count, report.memory_bytes])


def read_metrics(path: str | Path) -> dict:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        try:
            row = next(reader)
        except StopIteration:
            raise DataError(f"{path}:2: missing metrics row") from None
    try:
        return {
            "acc": float(row["acc"]),
            "bwt": None if row["bwt"] == "" else float(row["bwt"]),
            "param_count": int(row["param_count"]),
            "memory_bytes": int(row["memory_bytes"]),
        }
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}:2: malformed metrics row: {exc}") from exc


def _write_epochs(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "epoch", "ce", "kd", "lambda", "total", "train_acc"])
        for r in rows:
            writer.writerow(
                [
                    r["task"],
                    r["epoch"],
                    repr(r["ce"]),
                    repr(r["kd"]),
                    repr(r["lambda"]),
                    repr(r["total"]),
                    repr(r["train_acc"]),
                ]
            )


class _CachingLoader:
    """Decode each clip once; later lookups return the cached waveform."""

    def __init__(self):
        self._waves: dict[str, np.ndarray] = {}

    def __call__(self, record: dataset_mod.UtteranceRecord) -> np.ndarray:
        wave = self._waves.get(record.id)
        if wave is None:
            wave = dsp.load_wav(record.path)
            self._waves[record.id] = wave
        return wave


def _stage(name: str):
    """Context manager tagging failures with the pipeline stage."""

    class _Stage:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, (ConfigError, DataError)):
                raise RuntimeError(f"[{name}] {exc}") from exc
            return False

    return _Stage()


def run_experiment(config: ExperimentConfig, out_dir: str | Path) -> MetricsReport:
    """Run the full incremental protocol and write results files.

    Pretrain on task 0, then for each task: snapshot the teacher, expand the
    head, train on the stream plus the exemplar store, reselect the store,
    and evaluate on every seen task's test set. Deterministic per seed.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "config.yaml").open("w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)

    with _stage("dataset"):
        manifest = dataset_mod.scan_dataset(config.dataset_root)
        manifest = dataset_mod.split_train_test(manifest, config.test_fraction, config.seed)
        stream = dataset_mod.build_task_stream(
            manifest,
            config.pretrain_count,
            config.task_count,
            config.keywords_per_task,
            config.seed,
        )
        dataset_mod.write_manifest(manifest, out_dir / "manifest.csv")

    class_to_index = stream.class_to_index
    loader = _CachingLoader()
    eval_cache: dict[str, np.ndarray] = {}
    kd_config = training_mod.KDConfig(temperature=config.kd_temperature, enabled=config.kd)

    torch.manual_seed(config.seed)
    net = model_mod.build_model(stream.num_classes_after(0), seed=config.seed)
    store = memory_mod.ExemplarStore(budget=config.memory_size)

    matrix: list[list[float]] = []
    pooled_curve: list[float] = []
    epoch_rows: list[dict] = []

    def flush_partial():
        _write_matrix(out_dir / "matrix.csv", matrix, pooled_curve)
        _write_epochs(out_dir / "epochs.csv", epoch_rows)

    try:
        for task in stream.tasks:
            t = task.index
            with _stage(f"task{t}-train"):
                teacher = None
                if t > 0:
                    teacher = model_mod.snapshot(net)
                    model_mod.expand_head(net, task.cumulative_classes)
                epochs = config.epochs
                if t == 0 and config.pretrain_epochs is not None:
                    epochs = config.pretrain_epochs
                opt_config = training_mod.OptimizerConfig(
                    learning_rate=config.learning_rate,
                    batch_size=config.batch_size,
                    epochs=epochs,
                    seed=config.seed,
                )
                epoch_rows.extend(
                    training_mod.train_task(
                        net,
                        teacher,
                        stream.train_records[t],
                        store,
                        opt_config,
                        kd_config,
                        augment=config.augment,
                        class_to_index=class_to_index,
                        task_index=t,
                        mixup_alpha=config.mixup_alpha,
                        loader=loader,
                    )
                )
            with _stage(f"task{t}-memory"):
                store = memory_mod.update_memory(
                    store,
                    stream.train_records[t],
                    net,
                    config.sampler,
                    config.memory_size,
                    class_to_index,
                    task_index=t,
                    seed=config.seed,
                    loader=loader,
                )
                assert len(store) <= config.memory_size
            with _stage(f"task{t}-evaluate"):
                row, pooled = evaluate(
                    net,
                    stream.test_records[: t + 1],
                    class_to_index,
                    loader=loader,
                    feature_cache=eval_cache,
                )
                matrix.append(row)
                pooled_curve.append(pooled)
    except Exception:
        flush_partial()
        raise

    with _stage("report"):
        acc = compute_acc(matrix)
        bwt = compute_bwt(matrix)
        report = MetricsReport(
            acc=acc,
            bwt=bwt,
            param_count=model_mod.count_params(net),
            memory_bytes=memory_footprint(store),
            pooled_accuracy=pooled_curve,
            final_row=list(matrix[-1]),
        )
        flush_partial()
        _write_metrics(out_dir / "metrics.csv", report)
        memory_mod.save_store(store, out_dir / "store.csv", manifest.source_root)
    return report


@dataclass
class ReportBundle:
    curves: dict[str, list[float]]
    summary: list[dict]
    figure_path: Path
    summary_path: Path


def render_report(run_dirs: Sequence[str | Path], out_dir: str | Path) -> ReportBundle:
    """Render pooled-accuracy curves and a summary table for finished runs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    curves: dict[str, list[float]] = {}
    summary: list[dict] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        if not (run_dir / "matrix.csv").is_file():
            raise DataError(f"{run_dir} has no matrix.csv")
        _, pooled = read_matrix(run_dir / "matrix.csv")
        metrics = read_metrics(run_dir / "metrics.csv")
        label = run_dir.name
        curves[label] = pooled
        summary.append({"run": label, **metrics})

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pooled in curves.items():
        ax.plot(range(len(pooled)), pooled, marker="o", label=label)
    ax.set_xlabel("task index")
    ax.set_ylabel("pooled accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    figure_path = out_dir / "accuracy_curves.png"
    fig.savefig(figure_path, dpi=150, bbox_inches="tight")
    plt.close(fig)

    summary_path = out_dir / "summary.csv"
    with summary_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "acc", "bwt", "param_count", "memory_bytes"])
        for row in summary:
            bwt = "" if row["bwt"] is None else repr(row["bwt"])
            writer.writerow(
                [row["run"], repr(row["acc"]), bwt, row["param_count"], row["memory_bytes"]]
            )
    return ReportBundle(
        curves=curves, summary=summary, figure_path=figure_path, summary_path=summary_path
    )
