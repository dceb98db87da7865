import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatlearn.errors import ConfigError, DataError, DegenerateFeatureError
from compatlearn.geometry import build_simplex
from compatlearn.losses import (
    LabeledBatch,
    ce_simplex_loss,
    ce_trainable_loss,
    combined_loss,
    feature_distillation_loss,
    lambda_for_task,
    softmax_probabilities,
)
from compatlearn.network import ModelConfig, extract_features, init_model


def brute_force_ce(features, labels, vertices):
    """Oracle: plain-Python softmax cross-entropy over all prototype rows."""
    total = 0.0
    for f, y in zip(features, labels):
        logits = [sum(w_i * f_i for w_i, f_i in zip(w, f)) for w in vertices]
        denom = sum(math.exp(z) for z in logits)
        total += -math.log(math.exp(logits[y]) / denom)
    return total / len(features)


def test_zero_feature_gives_log_capacity():
    prototypes = build_simplex(4)
    loss, _ = ce_simplex_loss(np.zeros((1, 3)), [2], prototypes)
    assert loss == pytest.approx(math.log(4.0), abs=1e-12)


def test_matches_brute_force_at_a_vertex():
    prototypes = build_simplex(3)
    feature = prototypes.vertices[1].copy()
    loss, _ = ce_simplex_loss(feature[None, :], [1], prototypes)
    expected = brute_force_ce([feature], [1], prototypes.vertices)
    assert loss == pytest.approx(expected, abs=1e-12)


def test_matches_brute_force_on_random_batch():
    prototypes = build_simplex(7)
    rng = np.random.default_rng(5)
    features = rng.standard_normal((9, 6))
    labels = rng.integers(0, 7, size=9)
    loss, _ = ce_simplex_loss(features, labels, prototypes)
    expected = brute_force_ce(features, labels, prototypes.vertices)
    assert loss == pytest.approx(expected, abs=1e-12)


def test_scaling_toward_own_prototype_decreases_loss():
    prototypes = build_simplex(5)
    for label in (0, 4):  # a basis vertex and the constant vertex
        losses = []
        for c in (1.0, 10.0, 100.0):
            loss, _ = ce_simplex_loss(c * prototypes.vertices[label][None, :], [label], prototypes)
            losses.append(loss)
        assert losses[0] > losses[1] > losses[2]


def test_label_out_of_capacity_rejected():
    prototypes = build_simplex(3)
    with pytest.raises(DataError):
        ce_simplex_loss(np.zeros((1, 2)), [3], prototypes)
    with pytest.raises(DataError):
        ce_simplex_loss(np.zeros((1, 2)), [-1], prototypes)


def test_empty_batch_rejected():
    prototypes = build_simplex(3)
    with pytest.raises(ValueError):
        ce_simplex_loss(np.zeros((0, 2)), [], prototypes)


def test_probabilities_sum_to_one():
    prototypes = build_simplex(6)
    rng = np.random.default_rng(0)
    probs = softmax_probabilities(rng.standard_normal((20, 5)) * 50.0, prototypes)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)
    assert np.all(probs >= 0.0)


def finite_diff_feature_grad(loss_of_features, features, eps=1e-6):
    """Oracle: central differences on each feature coordinate."""
    grad = np.zeros_like(features)
    work = features.copy()
    for idx in np.ndindex(features.shape):
        orig = work[idx]
        work[idx] = orig + eps
        plus = loss_of_features(work)
        work[idx] = orig - eps
        minus = loss_of_features(work)
        work[idx] = orig
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


@pytest.mark.parametrize("normalize", [False, True])
def test_ce_feature_gradients_match_finite_differences(normalize):
    prototypes = build_simplex(4)
    rng = np.random.default_rng(8)
    features = rng.standard_normal((5, 3)) + 0.5
    labels = rng.integers(0, 4, size=5)
    _, grad = ce_simplex_loss(features, labels, prototypes, normalize_features=normalize)
    numeric = finite_diff_feature_grad(
        lambda f: ce_simplex_loss(f, labels, prototypes, normalize_features=normalize)[0],
        features,
    )
    assert np.allclose(grad, numeric, atol=1e-8)


def test_trainable_ce_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    weights = rng.standard_normal((4, 3))
    features = rng.standard_normal((6, 3))
    labels = rng.integers(0, 4, size=6)
    loss, dfeat, dweights = ce_trainable_loss(features, labels, weights)
    numeric_f = finite_diff_feature_grad(
        lambda f: ce_trainable_loss(f, labels, weights)[0], features
    )
    numeric_w = finite_diff_feature_grad(
        lambda w: ce_trainable_loss(features, labels, w)[0], weights
    )
    assert np.allclose(dfeat, numeric_f, atol=1e-8)
    assert np.allclose(dweights, numeric_w, atol=1e-8)


def test_distillation_identical_orthogonal_antiparallel():
    a = np.array([[1.0, 2.0, 3.0]])
    value, _ = feature_distillation_loss(a, a.copy())
    assert value == 0.0
    value, _ = feature_distillation_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]))
    assert value == pytest.approx(1.0, abs=1e-12)
    value, _ = feature_distillation_loss(np.array([[1.0, 1.0]]), np.array([[-3.0, -3.0]]))
    assert value == pytest.approx(2.0, abs=1e-12)


def test_distillation_zero_norm_reports_index():
    new = np.array([[1.0, 0.0], [0.0, 0.0]])
    old = np.ones((2, 2))
    with pytest.raises(DegenerateFeatureError, match="index 1"):
        feature_distillation_loss(new, old)
    with pytest.raises(DegenerateFeatureError):
        feature_distillation_loss(old, new)


def test_distillation_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    new = rng.standard_normal((4, 3)) + 0.2
    old = rng.standard_normal((4, 3)) + 0.1
    _, grad = feature_distillation_loss(new, old)
    numeric = finite_diff_feature_grad(
        lambda f: feature_distillation_loss(f, old)[0], new
    )
    assert np.allclose(grad, numeric, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(2, 5),
    st.integers(0, 2**32 - 1),
)
def test_distillation_value_always_in_bounds(rows, dim, seed):
    rng = np.random.default_rng(seed)
    new = rng.standard_normal((rows, dim))
    old = rng.standard_normal((rows, dim))
    if np.any(np.linalg.norm(new, axis=1) == 0) or np.any(np.linalg.norm(old, axis=1) == 0):
        return
    value, _ = feature_distillation_loss(new, old)
    assert 0.0 <= value <= 2.0


def test_lambda_for_task_values():
    assert lambda_for_task(5.0, 3, 3) == pytest.approx(5.0)
    assert lambda_for_task(5.0, 10, 40) == pytest.approx(2.5)
    assert lambda_for_task(5.0, 10, 0) == 0.0
    with pytest.raises(ValueError):
        lambda_for_task(-1.0, 1, 1)
    with pytest.raises(ValueError):
        lambda_for_task(5.0, 0, 1)
    with pytest.raises(ValueError):
        lambda_for_task(5.0, 1, -1)


def make_batch(rng, n=10, dim=6, capacity=4, memory_fraction=0.4):
    inputs = rng.standard_normal((n, dim))
    labels = rng.integers(0, capacity, size=n)
    flags = rng.random(n) < memory_fraction
    flags[0] = True  # keep at least one of each kind
    flags[-1] = False
    return LabeledBatch(inputs=inputs, labels=labels, from_memory=flags)


def small_models(seed_a=1, seed_b=2):
    cfg_a = ModelConfig(input_dim=6, hidden_layers=(5,), feature_dim=3, seed=seed_a)
    cfg_b = ModelConfig(input_dim=6, hidden_layers=(5,), feature_dim=3, seed=seed_b)
    return init_model(cfg_a), init_model(cfg_b)


def test_combined_with_zero_lambda_equals_plain_ce():
    prototypes = build_simplex(4)
    current, _ = small_models()
    batch = make_batch(np.random.default_rng(1))
    report, _ = combined_loss(batch, current, None, prototypes, 0.0)
    feats = extract_features(current, batch.inputs)
    ce, _ = ce_simplex_loss(feats, batch.labels, prototypes)
    assert report.total == ce
    assert report.fd_value == 0.0
    assert report.fd_count == 0


def test_combined_with_identical_models_has_zero_distillation():
    prototypes = build_simplex(4)
    current, _ = small_models()
    previous = current.copy().freeze()
    batch = make_batch(np.random.default_rng(2))
    report, _ = combined_loss(batch, current, previous, prototypes, 2.0)
    assert report.fd_value == 0.0
    assert report.total == report.ce_value


def test_combined_composes_from_standalone_terms():
    prototypes = build_simplex(4)
    current, previous = small_models()
    batch = make_batch(np.random.default_rng(3))
    lam = 2.5
    report, _ = combined_loss(batch, current, previous, prototypes, lam)
    feats = extract_features(current, batch.inputs)
    ce, _ = ce_simplex_loss(feats, batch.labels, prototypes)
    old = extract_features(previous, batch.inputs[batch.from_memory])
    fd, _ = feature_distillation_loss(feats[batch.from_memory], old)
    assert report.ce_value == pytest.approx(ce, abs=1e-12)
    assert report.fd_value == pytest.approx(fd, abs=1e-12)
    assert report.total == pytest.approx(ce + lam * fd, abs=1e-12)
    assert report.total == report.ce_value + report.lambda_weight * report.fd_value


def test_positive_lambda_without_previous_model_rejected():
    prototypes = build_simplex(4)
    current, _ = small_models()
    batch = make_batch(np.random.default_rng(4))
    with pytest.raises(ConfigError):
        combined_loss(batch, current, None, prototypes, 1.0)


def test_distillation_ignores_current_task_samples():
    prototypes = build_simplex(4)
    current, previous = small_models()
    batch = make_batch(np.random.default_rng(5))
    report, _ = combined_loss(batch, current, previous, prototypes, 1.5)
    perturbed_inputs = batch.inputs.copy()
    perturbed_inputs[~batch.from_memory] += 10.0
    perturbed = LabeledBatch(perturbed_inputs, batch.labels, batch.from_memory)
    report2, _ = combined_loss(perturbed, current, previous, prototypes, 1.5)
    assert report2.fd_value == report.fd_value  # exactly unchanged


def test_full_batch_scope_covers_everything():
    prototypes = build_simplex(4)
    current, previous = small_models()
    batch = make_batch(np.random.default_rng(6))
    report, _ = combined_loss(batch, current, previous, prototypes, 1.0, fd_scope="all")
    assert report.fd_count == len(batch)


def test_previous_model_is_never_touched():
    prototypes = build_simplex(4)
    current, previous = small_models()
    before = previous.parameter_checksum()
    batch = make_batch(np.random.default_rng(7))
    for _ in range(5):
        combined_loss(batch, current, previous, prototypes, 3.0)
    assert previous.parameter_checksum() == before
