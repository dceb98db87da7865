"""Episodic rehearsal memory: a bounded per-class store of past-task samples.

After a task finishes, a seeded uniform sample of its data (without
replacement, at most the per-class budget) is appended. Existing entries are
never touched, so the store only grows and earlier tasks stay represented by
the exact samples first drawn for them.
"""

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import LabeledDataset
from .errors import DisjointnessError
from .losses import LabeledBatch


@dataclass(frozen=True)
class MemoryEntry:
    input: np.ndarray
    label: int
    source_task: int
    sample_index: int


@dataclass(frozen=True)
class EpisodicMemory:
    per_class_budget: int
    rng_seed: int
    entries: tuple[MemoryEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def classes(self) -> tuple[int, ...]:
        return tuple(sorted({e.label for e in self.entries}))

    def class_count(self) -> int:
        return len({e.label for e in self.entries})

    def per_class_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = {}
        for e in self.entries:
            sizes[e.label] = sizes.get(e.label, 0) + 1
        return sizes


def update_memory(
    memory: EpisodicMemory,
    task_data: LabeledDataset,
    task_index: int,
    per_class: int | None = None,
) -> EpisodicMemory:
    """Append a seeded per-class sample of a finished task's data.

    Classes of the new task must be disjoint from everything already stored.
    Each new class contributes min(budget, available) samples drawn uniformly
    without replacement; the draw is a pure function of (memory seed, task
    index), so identical runs store identical sample ids.
    """
    budget = memory.per_class_budget if per_class is None else int(per_class)
    stored = set(e.label for e in memory.entries)
    new_classes = sorted(int(c) for c in np.unique(task_data.labels))
    overlap = stored.intersection(new_classes)
    if overlap:
        raise DisjointnessError(
            f"task {task_index} classes {sorted(overlap)} already present in memory"
        )
    rng = np.random.default_rng([memory.rng_seed, task_index])
    added: list[MemoryEntry] = []
    for cls in new_classes:
        candidates = np.flatnonzero(task_data.labels == cls)
        take = min(budget, len(candidates))
        picked = np.sort(rng.choice(candidates, size=take, replace=False))
        for idx in picked:
            added.append(
                MemoryEntry(
                    input=task_data.inputs[idx],
                    label=cls,
                    source_task=task_index,
                    sample_index=int(idx),
                )
            )
    return EpisodicMemory(
        per_class_budget=memory.per_class_budget,
        rng_seed=memory.rng_seed,
        entries=memory.entries + tuple(added),
    )


def build_training_set(memory: EpisodicMemory, task_data: LabeledDataset) -> LabeledBatch:
    """Union of memory and current-task samples, flagged by origin.

    Memory rows come first with the memory flag set; the epoch loop is
    responsible for seeded shuffling.
    """
    if len(memory) == 0:
        mem_inputs = np.empty((0, task_data.input_dim), dtype=np.float64)
        mem_labels = np.empty(0, dtype=np.int64)
    else:
        mem_inputs = np.stack([e.input for e in memory.entries])
        mem_labels = np.asarray([e.label for e in memory.entries], dtype=np.int64)
    inputs = np.concatenate([mem_inputs, task_data.inputs])
    labels = np.concatenate([mem_labels, task_data.labels])
    flags = np.concatenate(
        [np.ones(len(mem_labels), dtype=bool), np.zeros(len(task_data), dtype=bool)]
    )
    return LabeledBatch(inputs=inputs, labels=labels, from_memory=flags)


def iter_minibatches(
    training_set: LabeledBatch, batch_size: int, rng: np.random.Generator
) -> Iterator[LabeledBatch]:
    """Yield shuffled mini-batches of one epoch; the permutation comes from rng."""
    order = rng.permutation(len(training_set))
    for start in range(0, len(order), batch_size):
        yield training_set.take(order[start : start + batch_size])
