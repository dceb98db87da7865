"""Desk-scale datasets: synthetic clusters, task splits, verification pairs.

Synthetic data stands in for image benchmarks: each class is a Gaussian
cluster around a mean drawn on the unit sphere. Classes are split into a
held-out evaluation set (never trained on, mirroring the open-set protocol)
and a sequence of disjoint tasks. Externally prepared vectors come in through
a small CSV schema: a header row, then one label column followed by the input
columns.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .evalkit import VerificationPairSet


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable array-backed dataset: inputs (n, D) and integer labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise DataError(f"inputs must be a 2-d array, got shape {inputs.shape}")
        if labels.ndim != 1 or len(labels) != len(inputs):
            raise DataError(
                f"labels must be 1-d with one entry per input row, got {labels.shape}"
            )
        if inputs.size and not np.all(np.isfinite(inputs)):
            raise DataError("dataset inputs contain non-finite values")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def class_ids(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))


@dataclass(frozen=True)
class Task:
    """One step of a task sequence: its data and the classes it introduces."""

    index: int
    data: LabeledDataset
    classes: tuple[int, ...]


@dataclass(frozen=True)
class TaskSequence:
    """Ordered disjoint tasks plus the total classifier capacity."""

    tasks: tuple[Task, ...]
    total_classes: int

    def __post_init__(self):
        seen: set[int] = set()
        for task in self.tasks:
            overlap = seen.intersection(task.classes)
            if overlap:
                raise DataError(f"task {task.index} reuses classes {sorted(overlap)}")
            seen.update(task.classes)
        if len(seen) > self.total_classes:
            raise DataError(
                f"{len(seen)} classes exceed the declared capacity {self.total_classes}"
            )

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a clustered synthetic dataset.

    ``intrinsic_dim`` confines the class means to a random low-dimensional
    subsphere of the input space (noise stays full-dimensional). This mimics
    natural data, where classes share structure: with a shared subspace,
    representations trained on some classes carry over to unseen ones.
    ``None`` spreads the means over the whole sphere.
    """

    num_classes: int
    samples_per_class: int
    input_dim: int
    cluster_sigma: float
    mean_seed: int = 0
    noise_seed: int = 1
    intrinsic_dim: int | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError(f"need at least 2 classes, got {self.num_classes}")
        if self.samples_per_class < 1:
            raise DataError(f"samples_per_class must be positive, got {self.samples_per_class}")
        if self.input_dim < 1:
            raise DataError(f"input_dim must be positive, got {self.input_dim}")
        if self.cluster_sigma <= 0:
            raise DataError(f"cluster_sigma must be positive, got {self.cluster_sigma}")
        if self.intrinsic_dim is not None and not 1 <= self.intrinsic_dim <= self.input_dim:
            raise DataError(
                f"intrinsic_dim must be in [1, {self.input_dim}], got {self.intrinsic_dim}"
            )


def make_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Clustered samples: unit-sphere class means plus Gaussian noise, seeded."""
    mean_rng = np.random.default_rng(spec.mean_seed)
    if spec.intrinsic_dim is None:
        means = mean_rng.standard_normal((spec.num_classes, spec.input_dim))
    else:
        # Orthonormal basis of a random subspace, then means inside it.
        gauss = mean_rng.standard_normal((spec.input_dim, spec.intrinsic_dim))
        basis, _ = np.linalg.qr(gauss)
        coords = mean_rng.standard_normal((spec.num_classes, spec.intrinsic_dim))
        means = coords @ basis.T
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    noise_rng = np.random.default_rng(spec.noise_seed)
    n_total = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.samples_per_class)
    noise = noise_rng.standard_normal((n_total, spec.input_dim))
    inputs = means[labels] + spec.cluster_sigma * noise
    return LabeledDataset(inputs=inputs, labels=labels)


def split_tasks(
    dataset: LabeledDataset,
    num_tasks: int,
    eval_class_count: int,
    seed: int = 0,
) -> tuple[TaskSequence, LabeledDataset]:
    """Hold out evaluation classes, then partition the rest into disjoint tasks.

    Evaluation classes are removed first and never appear in any task. The
    remaining classes are shuffled (seeded) and split into ``num_tasks``
    near-equal groups whose sizes differ by at most one. Training labels are
    remapped to contiguous ids in arrival order, so task 1 owns the lowest
    ids; the held-out dataset keeps its original labels.
    """
    if num_tasks < 1:
        raise DataError(f"num_tasks must be >= 1, got {num_tasks}")
    if eval_class_count < 2:
        raise DataError(f"eval_class_count must be >= 2, got {eval_class_count}")
    all_classes = np.unique(dataset.labels)
    train_count = len(all_classes) - eval_class_count
    if train_count < num_tasks:
        raise DataError(
            f"{len(all_classes)} classes cannot supply {eval_class_count} evaluation "
            f"classes and {num_tasks} nonempty tasks"
        )
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(all_classes)
    eval_classes = set(int(c) for c in shuffled[:eval_class_count])
    train_order = [int(c) for c in shuffled[eval_class_count:]]

    remap = {c: i for i, c in enumerate(train_order)}
    base, extra = divmod(train_count, num_tasks)
    tasks = []
    cursor = 0
    for t in range(num_tasks):
        size = base + (1 if t < extra else 0)
        group = train_order[cursor : cursor + size]
        cursor += size
        mask = np.isin(dataset.labels, group)
        new_labels = np.array([remap[int(c)] for c in dataset.labels[mask]], dtype=np.int64)
        tasks.append(
            Task(
                index=t + 1,
                data=LabeledDataset(inputs=dataset.inputs[mask], labels=new_labels),
                classes=tuple(remap[c] for c in group),
            )
        )
    eval_mask = np.isin(dataset.labels, sorted(eval_classes))
    eval_dataset = LabeledDataset(inputs=dataset.inputs[eval_mask], labels=dataset.labels[eval_mask])
    return TaskSequence(tasks=tuple(tasks), total_classes=train_count), eval_dataset


def generate_pairs(
    dataset: LabeledDataset,
    num_pairs: int,
    seed: int = 0,
    provenance: str = "eval",
) -> VerificationPairSet:
    """Balanced verification pairs sampled without replacement, seeded.

    Half the pairs are genuine (two distinct samples of one class), half are
    impostor (samples of two different classes). Pair identities are sample
    index pairs; no unordered pair repeats.
    """
    if num_pairs < 2 or num_pairs % 2 != 0:
        raise DataError(
            f"num_pairs must be an even number >= 2 for a balanced set, got {num_pairs}"
        )
    n = len(dataset)
    if len(dataset.class_ids()) < 2:
        raise DataError("pair generation needs at least two classes")
    want = num_pairs // 2

    i_idx, j_idx = np.triu_indices(n, k=1)
    same = dataset.labels[i_idx] == dataset.labels[j_idx]
    genuine_candidates = np.stack([i_idx[same], j_idx[same]], axis=1)
    impostor_candidates = np.stack([i_idx[~same], j_idx[~same]], axis=1)
    if len(genuine_candidates) < want:
        raise DataError(
            f"cannot draw {want} genuine pairs: only {len(genuine_candidates)} exist"
        )
    if len(impostor_candidates) < want:
        raise DataError(
            f"cannot draw {want} impostor pairs: only {len(impostor_candidates)} exist"
        )
    rng = np.random.default_rng(seed)
    gen_pick = genuine_candidates[rng.choice(len(genuine_candidates), size=want, replace=False)]
    imp_pick = impostor_candidates[rng.choice(len(impostor_candidates), size=want, replace=False)]
    ids_a = np.concatenate([gen_pick[:, 0], imp_pick[:, 0]])
    ids_b = np.concatenate([gen_pick[:, 1], imp_pick[:, 1]])
    genuine = np.concatenate([np.ones(want, dtype=bool), np.zeros(want, dtype=bool)])
    return VerificationPairSet(
        inputs_a=dataset.inputs[ids_a],
        inputs_b=dataset.inputs[ids_b],
        genuine=genuine,
        ids_a=ids_a,
        ids_b=ids_b,
        provenance=provenance,
    )


def save_pairs(pairs: VerificationPairSet, path) -> None:
    """Write a pair set as CSV rows of (id_a, id_b, genuine)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id_a", "id_b", "genuine"])
        for a, b, g in zip(pairs.ids_a, pairs.ids_b, pairs.genuine):
            writer.writerow([int(a), int(b), int(g)])


def load_pairs(path, dataset: LabeledDataset, provenance: str = "csv") -> VerificationPairSet:
    """Rebuild a pair set from its CSV against the dataset it indexes into."""
    ids_a, ids_b, genuine = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id_a", "id_b", "genuine"]:
            raise DataError(f"unexpected pair CSV header in {path}: {header}")
        for line_no, row in enumerate(reader, start=2):
            try:
                a, b, g = int(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{line_no}: malformed pair row {row}") from exc
            if not (0 <= a < len(dataset) and 0 <= b < len(dataset)):
                raise DataError(f"{path}:{line_no}: pair index out of range")
            ids_a.append(a)
            ids_b.append(b)
            genuine.append(bool(g))
    ids_a = np.asarray(ids_a, dtype=np.int64)
    ids_b = np.asarray(ids_b, dtype=np.int64)
    genuine = np.asarray(genuine, dtype=bool)
    return VerificationPairSet(
        inputs_a=dataset.inputs[ids_a],
        inputs_b=dataset.inputs[ids_b],
        genuine=genuine,
        ids_a=ids_a,
        ids_b=ids_b,
        provenance=provenance,
    )


def save_csv(dataset: LabeledDataset, path) -> None:
    """Write a dataset in the label-then-features CSV schema."""
    d = dataset.input_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{i}" for i in range(d)])
        for label, row in zip(dataset.labels, dataset.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, input_dim: int | None = None) -> LabeledDataset:
    """Read the label-then-features CSV schema into a dataset.

    The header row is required. Every data row must hold one integer label
    followed by the same number of finite feature values; the first offending
    row is reported with its line number.
    """
    inputs: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, header required")
        if len(header) < 2 or header[0] != "label":
            raise DataError(
                f"{path}: header must be 'label' followed by feature columns, got {header}"
            )
        width = len(header) - 1
        if input_dim is not None and width != input_dim:
            raise DataError(f"{path}: expected {input_dim} feature columns, header has {width}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(
                    f"{path}:{line_no}: expected {width + 1} columns, got {len(row)}"
                )
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: non-numeric cell") from exc
            if not all(np.isfinite(values)):
                raise DataError(f"{path}:{line_no}: non-finite value")
            labels.append(label)
            inputs.append(values)
    if not inputs:
        raise DataError(f"{path}: no data rows")
    return LabeledDataset(
        inputs=np.asarray(inputs, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
    )
