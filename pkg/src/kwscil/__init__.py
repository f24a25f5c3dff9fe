"""Class-incremental keyword spotting toolkit.

Diversity-aware exemplar memory, waveform mixup, and teacher-student
distillation for learning new keywords without forgetting old ones, plus a
benchmark harness with average-accuracy and backward-transfer metrics.
"""

from .dataset import (
    Manifest,
    TaskSpec,
    TaskStream,
    UtteranceRecord,
    build_task_stream,
    read_manifest,
    scan_dataset,
    split_train_test,
    write_manifest,
)
from .dsp import (
    PERTURBATION_STRATEGIES,
    PerturbationSpec,
    compute_mfcc,
    load_wav,
    mixup,
    perturb,
)
from .errors import ConfigError, DataError
from .harness import (
    ExperimentConfig,
    MetricsReport,
    compute_acc,
    compute_bwt,
    evaluate,
    memory_footprint,
    render_report,
    run_experiment,
)
from .memory import (
    ExemplarEntry,
    ExemplarStore,
    diversity_select,
    estimate_uncertainty,
    group_by_keyword,
    mean_closest_select,
    random_select,
    update_memory,
)
from .model import (
    KeywordClassifier,
    build_model,
    count_params,
    expand_head,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    snapshot,
)
from .training import (
    KDConfig,
    LossBreakdown,
    OptimizerConfig,
    ce_loss,
    kd_loss,
    mixing_coefficient,
    total_loss,
    train_task,
)

__version__ = "0.1.0"
