"""The three quantities of the training objective.

* Cross-entropy against the fixed simplex prototypes, with the softmax
  denominator ranging over the full class capacity: slots already assigned to
  seen classes and slots still unassigned both contribute.
* Feature distillation restricted to rehearsal samples: one minus the cosine
  between the current and the previous model's features, averaged over the
  memory samples present.
* Their weighted sum, with the weight scaled per task from the new-to-old
  class ratio.

All functions are pure; logits use raw dot products by default (an optional
normalization switch exists for ablation) and the log-sum-exp trick keeps
large logits finite.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateFeatureError
from .geometry import SimplexPrototypes
from .network import (
    FeatureExtractorState,
    ParamGrads,
    backprop_feature_grads,
    extract_features,
    forward_features,
)


@dataclass(frozen=True)
class LabeledBatch:
    """Inputs, class labels, and a per-sample flag marking rehearsal samples."""

    inputs: np.ndarray
    labels: np.ndarray
    from_memory: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "from_memory", np.asarray(self.from_memory, dtype=bool))
        if not (len(self.inputs) == len(self.labels) == len(self.from_memory)):
            raise DataError(
                f"batch field lengths differ: {len(self.inputs)} inputs, "
                f"{len(self.labels)} labels, {len(self.from_memory)} flags"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, indices) -> "LabeledBatch":
        return LabeledBatch(self.inputs[indices], self.labels[indices], self.from_memory[indices])


@dataclass(frozen=True)
class LossReport:
    """One evaluation of the combined objective.

    ``total`` is computed as ``ce_value + lambda_weight * fd_value`` so the
    decomposition holds exactly.
    """

    ce_value: float
    fd_value: float
    lambda_weight: float
    total: float
    ce_count: int
    fd_count: int


def _validate_labels(labels: np.ndarray, capacity: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= capacity):
        bad = labels[(labels < 0) | (labels >= capacity)][0]
        raise DataError(f"label {bad} outside classifier capacity {capacity}")


def _normalize_rows(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(features, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateFeatureError(f"zero-norm feature at sample index {zero[0]}")
    return features / norms[:, None], norms


def _softmax_core(
    features: np.ndarray,
    labels: np.ndarray,
    weight_matrix: np.ndarray,
    normalize_features: bool,
    want_weight_grads: bool,
):
    """Mean cross-entropy of logits ``f @ W.T`` with gradients.

    Returns (loss, dloss/dfeatures, dloss/dW or None, probabilities).
    """
    n = len(features)
    if n == 0:
        raise ValueError("cross-entropy mean over an empty batch is undefined")
    if features.shape[1] != weight_matrix.shape[1]:
        raise DataError(
            f"feature dimension {features.shape[1]} does not match classifier "
            f"dimension {weight_matrix.shape[1]}"
        )
    _validate_labels(labels, weight_matrix.shape[0])

    if normalize_features:
        effective, norms = _normalize_rows(features)
    else:
        effective = features

    logits = effective @ weight_matrix.T
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    log_probs = (logits - shift) - np.log(denom)
    loss = -float(np.mean(log_probs[np.arange(n), labels]))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    deffective = dlogits @ weight_matrix
    dweights = dlogits.T @ effective if want_weight_grads else None

    if normalize_features:
        # d/df of f/|f|: remove the radial component, then divide by the norm.
        radial = np.sum(deffective * effective, axis=1, keepdims=True)
        dfeatures = (deffective - radial * effective) / norms[:, None]
    else:
        dfeatures = deffective
    return loss, dfeatures, dweights, probs


def ce_simplex_loss(
    features,
    labels,
    prototypes: SimplexPrototypes,
    normalize_features: bool = False,
) -> tuple[float, np.ndarray]:
    """Cross-entropy against the full fixed prototype matrix.

    The denominator covers every prototype row, so samples are also pushed
    away from class slots that no task has used yet. Returns the mean loss
    and its gradient with respect to each feature vector.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    loss, dfeatures, _, _ = _softmax_core(
        features, labels, prototypes.vertices, normalize_features, want_weight_grads=False
    )
    return loss, dfeatures


def ce_trainable_loss(
    features,
    labels,
    class_weights: np.ndarray,
    normalize_features: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy for a trainable classifier covering only seen classes.

    Unlike the fixed-prototype loss there are no rows for future classes.
    Returns (loss, dloss/dfeatures, dloss/dclass_weights).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    loss, dfeatures, dweights, _ = _softmax_core(
        features, labels, class_weights, normalize_features, want_weight_grads=True
    )
    return loss, dfeatures, dweights


def softmax_probabilities(
    features, prototypes: SimplexPrototypes, normalize_features: bool = False
) -> np.ndarray:
    """Per-sample class probabilities implied by the fixed-prototype logits."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.zeros(len(features), dtype=np.int64)
    _, _, _, probs = _softmax_core(
        features, labels, prototypes.vertices, normalize_features, want_weight_grads=False
    )
    return probs


def feature_distillation_loss(new_features, old_features) -> tuple[float, np.ndarray]:
    """Mean of (1 - cosine) between current and previous features.

    ``old_features`` are constants: no gradient flows toward the model that
    produced them. The cosine is clipped to [-1, 1] so the value stays in
    [0, 2] even when both sides are bitwise identical.
    """
    new = np.asarray(new_features, dtype=np.float64)
    old = np.asarray(old_features, dtype=np.float64)
    if new.shape != old.shape or new.ndim != 2:
        raise DataError(f"feature shapes differ: {new.shape} vs {old.shape}")
    if len(new) == 0:
        raise ValueError("feature distillation over an empty sample set is undefined")
    n_unit, n_norms = _normalize_rows(new)
    o_unit, _ = _normalize_rows(old)
    cos = np.clip(np.sum(n_unit * o_unit, axis=1), -1.0, 1.0)
    # Identical rows have cosine 1 by definition; rounding in the dot product
    # must not turn them into a distillation penalty.
    cos = np.where(np.all(new == old, axis=1), 1.0, cos)
    value = float(np.mean(1.0 - cos))
    count = len(new)
    dnew = -(o_unit - cos[:, None] * n_unit) / (n_norms[:, None] * count)
    return value, dnew


def lambda_for_task(lambda_base: float, new_class_count: int, old_class_count: int) -> float:
    """Distillation weight: base times sqrt(new classes / old classes in memory).

    Zero when there are no old classes yet (first task: no previous model, so
    the distillation term is absent).
    """
    if lambda_base < 0:
        raise ValueError(f"lambda_base must be non-negative, got {lambda_base}")
    if new_class_count < 1:
        raise ValueError(f"new_class_count must be >= 1, got {new_class_count}")
    if old_class_count < 0:
        raise ValueError(f"old_class_count must be non-negative, got {old_class_count}")
    if old_class_count == 0:
        return 0.0
    return lambda_base * math.sqrt(new_class_count / old_class_count)


def combined_loss(
    batch: LabeledBatch,
    current_model: FeatureExtractorState,
    previous_model: FeatureExtractorState | None,
    prototypes: SimplexPrototypes,
    lambda_weight: float,
    fd_scope: str = "memory",
    normalize_features: bool = False,
) -> tuple[LossReport, ParamGrads]:
    """Cross-entropy over the whole batch plus weighted distillation.

    The distillation term covers only the samples flagged as rehearsal memory
    (``fd_scope="memory"``, the default) or every sample (``fd_scope="all"``,
    the traditional variant kept for ablation). A batch that happens to carry
    no eligible samples contributes a zero distillation term. Gradients flow
    through the current model only.
    """
    if fd_scope not in ("memory", "all"):
        raise ConfigError(f"fd_scope must be 'memory' or 'all', got {fd_scope!r}")
    if lambda_weight > 0 and previous_model is None:
        raise ConfigError("distillation weight is positive but no previous model was given")

    features, cache = forward_features(current_model, batch.inputs)
    ce_value, dfeatures = ce_simplex_loss(
        features, batch.labels, prototypes, normalize_features=normalize_features
    )

    fd_value = 0.0
    fd_count = 0
    if lambda_weight > 0:
        mask = batch.from_memory if fd_scope == "memory" else np.ones(len(batch), dtype=bool)
        if mask.any():
            # Extract on the full batch, then subset: this keeps the old and new
            # features bitwise comparable (same matmul shape on both sides).
            old = extract_features(previous_model, batch.inputs)[mask]
            fd_value, dfd = feature_distillation_loss(features[mask], old)
            fd_count = int(mask.sum())
            dfeatures[mask] += lambda_weight * dfd

    grads = backprop_feature_grads(current_model, cache, dfeatures)
    report = LossReport(
        ce_value=ce_value,
        fd_value=fd_value,
        lambda_weight=lambda_weight,
        total=ce_value + lambda_weight * fd_value,
        ce_count=len(batch),
        fd_count=fd_count,
    )
    return report, grads
