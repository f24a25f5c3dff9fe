"""Shared fixtures: synthetic corpora and the desk-scale benchmark grid."""

import json
from pathlib import Path

import numpy as np
import pytest

from kwscil import harness, synth

ACCEPTANCE_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Path:
    """4 keywords x 12 clips; enough for fast pipeline tests."""
    root = tmp_path_factory.mktemp("tiny") / "corpus"
    synth.make_corpus(root, keywords=4, clips_per_keyword=12, seed=0)
    return root


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory) -> Path:
    """The desk-scale benchmark corpus: 10 keywords x 80 clips."""
    root = tmp_path_factory.mktemp("mini") / "corpus"
    synth.make_corpus(root, keywords=10, clips_per_keyword=80, seed=123)
    return root


def benchmark_config(corpus: Path, **overrides) -> harness.ExperimentConfig:
    """Mini benchmark defaults: pretrain 4 keywords, then 3 tasks x 2."""
    base = dict(
        dataset_root=str(corpus),
        seed=0,
        pretrain_count=4,
        task_count=3,
        keywords_per_task=2,
        memory_size=100,
        sampler="rainbow",
        augment="mixup",
        kd=True,
        learning_rate=1e-3,
        batch_size=128,
        epochs=15,
    )
    base.update(overrides)
    return harness.ExperimentConfig(**base)


class BenchmarkGrid:
    """Runs benchmark variants on demand and caches their reports."""

    def __init__(self, corpus: Path, out_root: Path):
        self.corpus = corpus
        self.out_root = out_root
        self._reports: dict[str, harness.MetricsReport] = {}

    def run_dir(self, name: str) -> Path:
        return self.out_root / name

    def report(self, name: str, **overrides) -> harness.MetricsReport:
        if name not in self._reports:
            config = benchmark_config(self.corpus, **overrides)
            self._reports[name] = harness.run_experiment(config, self.run_dir(name))
        return self._reports[name]

    def per_seed(self, prefix: str, **overrides) -> list[harness.MetricsReport]:
        return [
            self.report(f"{prefix}_seed{s}", seed=s, **overrides)
            for s in ACCEPTANCE_SEEDS
        ]


@pytest.fixture(scope="session")
def benchmark_grid(mini_corpus, tmp_path_factory) -> BenchmarkGrid:
    return BenchmarkGrid(mini_corpus, tmp_path_factory.mktemp("bench"))


_CRITERION_LABELS = {
    "test_criterion_1_property_suite": "criterion 1 (property suite)",
    "test_criterion_2_metric_oracles": "criterion 2 (metric oracles)",
    "test_criterion_3_parameter_accounting": "criterion 3 (parameter accounting)",
    "test_criterion_4a_rainbow_beats_naive_rehearsal": "criterion 4a (RK > NR by >= 5 pts ACC)",
    "test_criterion_4b_finetune_forgets_more": "criterion 4b (fine-tune BWT worse by >= 0.10)",
    "test_criterion_4c_kd_improves_bwt": "criterion 4c (KD improves BWT, 2/3 seeds)",
    "test_criterion_4d_mixup_does_not_hurt": "criterion 4d (mixup helps, 2/3 seeds)",
    "test_criterion_4e_larger_memory_helps": "criterion 4e (ACC monotone in memory)",
    "test_criterion_5_determinism": "criterion 5 (bit-identical reruns)",
}


def pytest_terminal_summary(terminalreporter):
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            name = rep.nodeid.split("::")[-1]
            label = _CRITERION_LABELS.get(name)
            if label:
                lines.append((label, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for label, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {label}")
