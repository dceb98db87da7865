"""Sequential task training with rehearsal and frozen per-task checkpoints.

Each task trains the running model on the union of its own data and the
episodic memory, minimizing cross-entropy plus the weighted distillation term
against the frozen previous checkpoint. When the task finishes, the model is
snapshotted into an immutable checkpoint, the memory absorbs a sample of the
task's data, and the next task warm-starts from the current parameters.

Two ablation axes are exposed: the classifier can be the fixed simplex (the
proper procedure) or a trainable per-class weight matrix grown at every task
(the plain experience-replay baseline), and the distillation term can cover
memory samples only, the whole batch, or be switched off.
"""

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_memory, save_model, save_prototypes
from .data import Task, TaskSequence
from .errors import ConfigError, DataError, DivergenceError
from .geometry import SimplexPrototypes, build_simplex
from .losses import (
    LossReport,
    ce_trainable_loss,
    combined_loss,
    feature_distillation_loss,
    lambda_for_task,
)
from .memory import EpisodicMemory, build_training_set, iter_minibatches, update_memory
from .network import (
    FeatureExtractorState,
    ModelConfig,
    TrainingHyperparams,
    apply_gradients,
    backprop_feature_grads,
    extract_features,
    forward_features,
    init_model,
    sgd_update,
)

CLASSIFIER_MODES = ("fixed_simplex", "trainable")
FD_MODES = ("memory_only", "full_batch", "off")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a training run needs besides the task sequence itself."""

    model: ModelConfig
    hyperparams: TrainingHyperparams
    memory_per_class: int
    classifier_mode: str = "fixed_simplex"
    fd_mode: str = "memory_only"
    train_seed: int = 0
    normalize_features: bool = False
    output_dir: Path | None = None

    def __post_init__(self):
        if self.classifier_mode not in CLASSIFIER_MODES:
            raise ConfigError(
                f"classifier_mode must be one of {CLASSIFIER_MODES}, got {self.classifier_mode!r}"
            )
        if self.fd_mode not in FD_MODES:
            raise ConfigError(f"fd_mode must be one of {FD_MODES}, got {self.fd_mode!r}")
        if self.memory_per_class < 0:
            raise ConfigError(f"memory_per_class must be >= 0, got {self.memory_per_class}")


@dataclass(frozen=True)
class EpochLog:
    """One row of the per-epoch training log CSV."""

    task: int
    epoch: int
    ce: float
    fd: float
    lambda_weight: float
    total: float


class TrainableClassifier:
    """Per-class weight rows for the experience-replay baseline.

    Rows are appended with seeded random values when a task introduces new
    classes and are updated by the same SGD rule as the feature extractor.
    """

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim
        self.weights = np.zeros((0, feature_dim), dtype=np.float64)
        self.velocity = np.zeros((0, feature_dim), dtype=np.float64)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def grow(self, new_class_count: int, rng: np.random.Generator) -> None:
        limit = np.sqrt(6.0 / (self.feature_dim + 1))
        fresh = rng.uniform(-limit, limit, size=(new_class_count, self.feature_dim))
        self.weights = np.concatenate([self.weights, fresh])
        self.velocity = np.concatenate(
            [self.velocity, np.zeros((new_class_count, self.feature_dim))]
        )

    def apply_gradients(self, grads: np.ndarray, hyperparams: TrainingHyperparams, epoch: int):
        if not np.all(np.isfinite(grads)):
            raise DivergenceError("non-finite gradient in classifier weights")
        sgd_update(
            self.weights,
            grads,
            self.velocity,
            hyperparams.effective_lr(epoch),
            hyperparams.momentum,
            hyperparams.weight_decay,
        )

    def snapshot(self) -> np.ndarray:
        frozen = self.weights.copy()
        frozen.setflags(write=False)
        return frozen


@dataclass
class ModelTimeline:
    """Outcome of a full sequence: frozen checkpoints plus the shared classifier."""

    checkpoints: list[FeatureExtractorState] = field(default_factory=list)
    prototypes: SimplexPrototypes | None = None
    classifier_snapshots: list[np.ndarray] | None = None
    logs: list[list[EpochLog]] = field(default_factory=list)
    final_memory: EpisodicMemory | None = None
    task_seconds: list[float] = field(default_factory=list)

    def all_log_rows(self) -> list[EpochLog]:
        return [row for task_rows in self.logs for row in task_rows]


def _train_batch_trainable(
    state: FeatureExtractorState,
    batch,
    previous: FeatureExtractorState | None,
    classifier: TrainableClassifier,
    lambda_weight: float,
    fd_scope: str,
    normalize_features: bool,
):
    features, cache = forward_features(state, batch.inputs)
    ce_value, dfeatures, dweights = ce_trainable_loss(
        features, batch.labels, classifier.weights, normalize_features=normalize_features
    )
    fd_value = 0.0
    fd_count = 0
    if lambda_weight > 0:
        mask = batch.from_memory if fd_scope == "memory" else np.ones(len(batch), dtype=bool)
        if mask.any():
            old = extract_features(previous, batch.inputs[mask])
            fd_value, dfd = feature_distillation_loss(features[mask], old)
            fd_count = int(mask.sum())
            dfeatures[mask] += lambda_weight * dfd
    grads = backprop_feature_grads(state, cache, dfeatures)
    report = LossReport(
        ce_value=ce_value,
        fd_value=fd_value,
        lambda_weight=lambda_weight,
        total=ce_value + lambda_weight * fd_value,
        ce_count=len(batch),
        fd_count=fd_count,
    )
    return report, grads, dweights


def run_task(
    state: FeatureExtractorState,
    task: Task,
    previous: FeatureExtractorState | None,
    memory: EpisodicMemory,
    classifier,
    config: ExperimentConfig,
) -> tuple[FeatureExtractorState, EpisodicMemory, list[EpochLog]]:
    """Train one task and return (frozen checkpoint, updated memory, log rows).

    ``classifier`` is the shared SimplexPrototypes in fixed mode or the
    TrainableClassifier in baseline mode. The distillation weight comes from
    the new-to-old class ratio and is zero on the first task or when the
    distillation mode is off.
    """
    hp = config.hyperparams
    training_set = build_training_set(memory, task.data)
    new_class_count = len(task.classes)
    old_class_count = memory.class_count()
    if config.fd_mode == "off" or previous is None:
        lambda_weight = 0.0
    else:
        lambda_weight = lambda_for_task(hp.lambda_base, new_class_count, old_class_count)
    fd_scope = "all" if config.fd_mode == "full_batch" else "memory"
    fixed_mode = isinstance(classifier, SimplexPrototypes)

    rows: list[EpochLog] = []
    for epoch in range(hp.epochs_per_task):
        rng = np.random.default_rng([config.train_seed, task.index, epoch])
        ce_sum = 0.0
        ce_n = 0
        fd_sum = 0.0
        fd_n = 0
        for batch in iter_minibatches(training_set, hp.batch_size, rng):
            try:
                if fixed_mode:
                    report, grads = combined_loss(
                        batch,
                        state,
                        previous,
                        classifier,
                        lambda_weight,
                        fd_scope=fd_scope,
                        normalize_features=config.normalize_features,
                    )
                else:
                    report, grads, dweights = _train_batch_trainable(
                        state,
                        batch,
                        previous,
                        classifier,
                        lambda_weight,
                        fd_scope,
                        config.normalize_features,
                    )
                if not np.isfinite(report.total):
                    raise DivergenceError("non-finite loss")
                apply_gradients(state, grads, hp, epoch)
                if not fixed_mode:
                    classifier.apply_gradients(dweights, hp, epoch)
            except DivergenceError as exc:
                raise DivergenceError(f"task {task.index}, epoch {epoch}: {exc}") from None
            ce_sum += report.ce_value * report.ce_count
            ce_n += report.ce_count
            fd_sum += report.fd_value * report.fd_count
            fd_n += report.fd_count
        if not state.all_finite():
            raise DivergenceError(
                f"non-finite parameters after task {task.index}, epoch {epoch}"
            )
        ce_epoch = ce_sum / ce_n if ce_n else 0.0
        fd_epoch = fd_sum / fd_n if fd_n else 0.0
        rows.append(
            EpochLog(
                task=task.index,
                epoch=epoch,
                ce=ce_epoch,
                fd=fd_epoch,
                lambda_weight=lambda_weight,
                total=ce_epoch + lambda_weight * fd_epoch,
            )
        )

    checkpoint = state.copy().freeze()
    new_memory = update_memory(memory, task.data, task.index, config.memory_per_class)
    return checkpoint, new_memory, rows


def run_sequence(config: ExperimentConfig, sequence: TaskSequence) -> ModelTimeline:
    """Fold task training over the whole sequence and collect the timeline.

    Each task's model starts from the previous task's final parameters
    (incremental fine-tuning); momentum buffers are cleared at task
    boundaries so every task starts its schedule fresh. When the config
    carries an output directory, checkpoints, prototypes, the final memory
    snapshot, and the training log are persisted there.
    """
    fixed_mode = config.classifier_mode == "fixed_simplex"
    if fixed_mode:
        if config.model.feature_dim != sequence.total_classes - 1:
            raise ConfigError(
                f"fixed-classifier runs need feature_dim == capacity - 1: "
                f"{config.model.feature_dim} != {sequence.total_classes} - 1"
            )
        classifier = build_simplex(sequence.total_classes)
    else:
        classifier = TrainableClassifier(config.model.feature_dim)

    state = init_model(config.model, sequence.total_classes if fixed_mode else None)
    memory = EpisodicMemory(
        per_class_budget=config.memory_per_class,
        rng_seed=config.train_seed,
    )
    timeline = ModelTimeline(
        prototypes=classifier if fixed_mode else None,
        classifier_snapshots=None if fixed_mode else [],
    )
    previous: FeatureExtractorState | None = None
    for task in sequence.tasks:
        started = time.perf_counter()
        if not fixed_mode:
            grow_rng = np.random.default_rng([config.train_seed, 7919, task.index])
            classifier.grow(len(task.classes), grow_rng)
            if max(task.classes) >= classifier.num_classes:
                raise DataError(
                    f"task {task.index} labels exceed the grown classifier "
                    f"({classifier.num_classes} rows)"
                )
        state.reset_optimizer()
        checkpoint, memory, rows = run_task(state, task, previous, memory, classifier, config)
        timeline.checkpoints.append(checkpoint)
        timeline.logs.append(rows)
        timeline.task_seconds.append(time.perf_counter() - started)
        if not fixed_mode:
            timeline.classifier_snapshots.append(classifier.snapshot())
        previous = checkpoint
    timeline.final_memory = memory

    if config.output_dir is not None:
        persist_timeline(timeline, config.output_dir)
    return timeline


def write_training_log(rows: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "epoch", "ce", "fd", "lambda", "total"])
        for row in rows:
            writer.writerow(
                [
                    row.task,
                    row.epoch,
                    repr(row.ce),
                    repr(row.fd),
                    repr(row.lambda_weight),
                    repr(row.total),
                ]
            )


def persist_timeline(timeline: ModelTimeline, output_dir) -> list[Path]:
    """Write checkpoints, prototypes, memory, and the training log; return paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for i, checkpoint in enumerate(timeline.checkpoints, start=1):
        path = out / f"checkpoint_task_{i:03d}.ckpt"
        save_model(checkpoint, path)
        written.append(path)
    if timeline.prototypes is not None:
        path = out / "prototypes.ckpt"
        save_prototypes(timeline.prototypes, path)
        written.append(path)
    if timeline.final_memory is not None:
        path = out / "memory_final.ckpt"
        save_memory(timeline.final_memory, path)
        written.append(path)
    log_path = out / "training_log.csv"
    write_training_log(timeline.all_log_rows(), log_path)
    written.append(log_path)
    return written
