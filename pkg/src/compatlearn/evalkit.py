"""Verification metrics and cross-model compatibility summaries.

A pair set is scored by extracting the first image of every pair with the
query-side model and the second image with the gallery-side model, then taking
the cosine similarity per pair. From the scored pairs two metrics are
available: best-threshold verification accuracy and the true acceptance rate
at a false acceptance rate target.

Scoring every (newer model, older model) combination of a training timeline
on one static pair set fills the lower triangle of the compatibility matrix:
diagonal cells are self-tests, cells below the diagonal are cross-tests, and
cells above the diagonal are fixed to zero because evaluating an older model
against a newer gallery has no reliable interpretation. The summary report
condenses the matrix into the average, backward, and forward compatibility
numbers plus the per-task backward series.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateFeatureError, MetricUndefinedError
from .network import FeatureExtractorState, extract_features

METRIC_KINDS = ("accuracy", "tar_at_far")
SIMILARITIES = ("cosine", "euclidean")


@dataclass(frozen=True)
class VerificationPairSet:
    """Static set of (A, B, genuine) verification pairs over held-out classes."""

    inputs_a: np.ndarray
    inputs_b: np.ndarray
    genuine: np.ndarray
    ids_a: np.ndarray
    ids_b: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "inputs_a", np.asarray(self.inputs_a, dtype=np.float64))
        object.__setattr__(self, "inputs_b", np.asarray(self.inputs_b, dtype=np.float64))
        object.__setattr__(self, "genuine", np.asarray(self.genuine, dtype=bool))
        object.__setattr__(self, "ids_a", np.asarray(self.ids_a, dtype=np.int64))
        object.__setattr__(self, "ids_b", np.asarray(self.ids_b, dtype=np.int64))
        n = len(self.genuine)
        if n == 0:
            raise DataError("verification pair set is empty")
        if not (len(self.inputs_a) == len(self.inputs_b) == len(self.ids_a) == len(self.ids_b) == n):
            raise DataError("pair set fields have inconsistent lengths")
        if self.inputs_a.shape != self.inputs_b.shape:
            raise DataError(
                f"pair sides have different shapes: {self.inputs_a.shape} vs {self.inputs_b.shape}"
            )
        if not self.genuine.any() or self.genuine.all():
            raise DataError("pair set needs at least one genuine and one impostor pair")

    def __len__(self) -> int:
        return len(self.genuine)


@dataclass(frozen=True)
class MetricResult:
    value: float
    threshold: float


@dataclass(frozen=True)
class CompatibilityMatrix:
    """Lower-triangular matrix of self-tests (diagonal) and cross-tests."""

    values: np.ndarray
    metric: str
    far_target: float | None = None
    thresholds: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"compatibility matrix must be square, got {values.shape}")
        if np.any(np.triu(values, k=1) != 0.0):
            raise DataError("compatibility matrix must be zero above the diagonal")
        tril = values[np.tril_indices(values.shape[0])]
        if np.any((tril < 0.0) | (tril > 1.0)):
            raise DataError("compatibility matrix entries must lie in [0, 1]")
        if self.metric not in METRIC_KINDS:
            raise DataError(f"unknown metric kind {self.metric!r}")
        object.__setattr__(self, "values", values)

    @property
    def num_tasks(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CompatibilityReport:
    """Summary numbers derived from a compatibility matrix.

    ``bc_series[i]`` is the backward compatibility after task ``i + 2``; its
    last element equals ``bc``.
    """

    ac: float
    bc: float
    fc: float
    bc_series: tuple[float, ...]


def _row_cosine(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    norms_a = np.linalg.norm(a, axis=1)
    norms_b = np.linalg.norm(b, axis=1)
    for norms, side in ((norms_a, "query"), (norms_b, "gallery")):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateFeatureError(
                f"zero-norm {side}-side feature at {what} index {zero[0]}"
            )
    return np.clip(np.sum(a * b, axis=1) / (norms_a * norms_b), -1.0, 1.0)


def pair_scores(
    pairs: VerificationPairSet,
    query_model: FeatureExtractorState,
    gallery_model: FeatureExtractorState,
    similarity: str = "cosine",
) -> tuple[np.ndarray, np.ndarray]:
    """Score every pair: query model on side A, gallery model on side B.

    Cosine similarity by default; ``similarity="euclidean"`` scores with the
    negated distance so that larger still means more similar.
    """
    if similarity not in SIMILARITIES:
        raise DataError(f"similarity must be one of {SIMILARITIES}, got {similarity!r}")
    if query_model.config.feature_dim != gallery_model.config.feature_dim:
        raise DataError(
            f"models have different feature dimensions: "
            f"{query_model.config.feature_dim} vs {gallery_model.config.feature_dim}"
        )
    feats_a = extract_features(query_model, pairs.inputs_a)
    feats_b = extract_features(gallery_model, pairs.inputs_b)
    if similarity == "cosine":
        scores = _row_cosine(feats_a, feats_b, "pair")
    else:
        scores = -np.linalg.norm(feats_a - feats_b, axis=1)
    return scores, pairs.genuine.copy()


def _threshold_sweep(scores: np.ndarray, genuine: np.ndarray):
    """Shared machinery for the threshold sweeps.

    Sorting ascending, a cut at position ``i`` predicts the first ``i`` pairs
    impostor and the rest genuine. Valid cuts are the two ends (thresholds
    -inf and +inf) and every boundary between two distinct scores (threshold
    at their midpoint). Returns, per valid cut, the threshold and the counts
    of genuine and impostor pairs below it.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    g = genuine[order]
    n = len(s)
    cum_genuine = np.concatenate(([0], np.cumsum(g)))
    cum_impostor = np.concatenate(([0], np.cumsum(~g)))
    positions = [0]
    thresholds = [-np.inf]
    for i in range(1, n):
        if s[i - 1] != s[i]:
            positions.append(i)
            thresholds.append((s[i - 1] + s[i]) / 2.0)
    positions.append(n)
    thresholds.append(np.inf)
    positions = np.asarray(positions)
    return np.asarray(thresholds), cum_genuine[positions], cum_impostor[positions]


def verification_accuracy(scores, genuine) -> MetricResult:
    """Accuracy at the best threshold over the full sweep.

    Candidate thresholds are the midpoints between consecutive distinct
    scores plus -inf and +inf sentinels; a pair is predicted genuine when its
    score exceeds the threshold. Ties between equally accurate thresholds are
    broken toward the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    n = len(scores)
    if n == 0:
        raise DataError("verification accuracy needs at least one pair")
    thresholds, gen_below, imp_below = _threshold_sweep(scores, genuine)
    total_genuine = int(genuine.sum())
    correct = (imp_below + (total_genuine - gen_below)).astype(np.float64)
    best = int(np.argmax(correct))  # argmax takes the first maximum: lowest threshold
    return MetricResult(value=float(correct[best] / n), threshold=float(thresholds[best]))


def tar_at_far(scores, genuine, far_target: float) -> MetricResult:
    """True acceptance rate at the loosest threshold meeting the FAR target.

    Chooses the smallest threshold whose measured false acceptance rate does
    not exceed ``far_target`` and reports the true acceptance rate there.
    """
    if not 0.0 < far_target <= 1.0:
        raise DataError(f"far_target must be in (0, 1], got {far_target}")
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    total_genuine = int(genuine.sum())
    total_impostor = int((~genuine).sum())
    if total_impostor == 0:
        raise DataError("TAR@FAR needs at least one impostor pair")
    thresholds, gen_below, imp_below = _threshold_sweep(scores, genuine)
    far = (total_impostor - imp_below) / total_impostor
    ok = np.flatnonzero(far <= far_target)
    pick = int(ok[0])  # FAR is nonincreasing in the threshold; take the smallest
    if total_genuine == 0:
        tar = 0.0
    else:
        tar = float((total_genuine - gen_below[pick]) / total_genuine)
    return MetricResult(value=tar, threshold=float(thresholds[pick]))


def _cell_metric(scores, genuine, metric: str, far_target: float | None) -> MetricResult:
    if metric == "accuracy":
        return verification_accuracy(scores, genuine)
    return tar_at_far(scores, genuine, far_target)


def build_compatibility_matrix(
    models,
    pairs: VerificationPairSet,
    metric: str = "accuracy",
    far_target: float | None = None,
    similarity: str = "cosine",
) -> CompatibilityMatrix:
    """Score every (query model, gallery model) combination on one pair set.

    ``models`` are the frozen per-task checkpoints in training order. Cell
    (t, k) with t > k scores queries from the newer model against galleries
    from the older one; the diagonal holds self-tests; cells above the
    diagonal stay zero. The same static pair set is used for every cell.
    """
    models = list(models)
    if len(models) < 1:
        raise DataError("need at least one checkpoint to build a compatibility matrix")
    if metric not in METRIC_KINDS:
        raise DataError(f"metric must be one of {METRIC_KINDS}, got {metric!r}")
    if metric == "tar_at_far" and far_target is None:
        raise DataError("tar_at_far requires a far_target")
    t_count = len(models)
    feats_a = [extract_features(m, pairs.inputs_a) for m in models]
    feats_b = [extract_features(m, pairs.inputs_b) for m in models]
    values = np.zeros((t_count, t_count), dtype=np.float64)
    thresholds = np.full((t_count, t_count), np.nan, dtype=np.float64)
    for t in range(t_count):
        for k in range(t + 1):
            if similarity == "cosine":
                scores = _row_cosine(feats_a[t], feats_b[k], "pair")
            else:
                scores = -np.linalg.norm(feats_a[t] - feats_b[k], axis=1)
            result = _cell_metric(scores, pairs.genuine, metric, far_target)
            values[t, k] = result.value
            thresholds[t, k] = result.threshold
    return CompatibilityMatrix(
        values=values, metric=metric, far_target=far_target, thresholds=thresholds
    )


def compatibility_report(matrix: CompatibilityMatrix) -> CompatibilityReport:
    """Condense a compatibility matrix into its summary numbers.

    Average compatibility counts how often a cross-test strictly beats the
    corresponding self-test, normalized by the number of comparisons.
    Backward compatibility after task t averages (row t minus the diagonal)
    over the earlier tasks; the scalar value is the series at the final task.
    Forward compatibility averages (first subdiagonal minus diagonal).
    """
    c = matrix.values
    t_count = matrix.num_tasks
    if t_count < 2:
        raise MetricUndefinedError(
            "compatibility summaries need at least two tasks; self-tests alone "
            "admit no cross-model comparison"
        )
    wins = 0
    for t in range(1, t_count):
        for k in range(t):
            if c[t, k] > c[k, k]:
                wins += 1
    ac = 2.0 * wins / (t_count * (t_count - 1))

    bc_series = []
    for t in range(1, t_count):
        gaps = [c[t, k] - c[k, k] for k in range(t)]
        bc_series.append(sum(gaps) / t)
    bc = bc_series[-1]

    fc = sum(c[k, k - 1] - c[k, k] for k in range(1, t_count)) / (t_count - 1)
    return CompatibilityReport(ac=ac, bc=bc, fc=fc, bc_series=tuple(bc_series))
