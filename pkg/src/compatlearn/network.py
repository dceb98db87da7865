"""Deterministic multilayer perceptron with hand-written gradients.

The feature extractor is a fully connected network with an explicit forward
pass, an explicit reverse pass, and an SGD-with-momentum update. Everything
is float64 and seeded, so a run is reproducible to the last bit and analytic
gradients can be validated against central finite differences at tight
tolerances.

Initialization scheme (documented because reproducibility depends on it):
weights of each layer are drawn from ``uniform(-limit, +limit)`` with
``limit = sqrt(6 / (fan_in + fan_out))`` from a ``numpy.random.default_rng``
generator seeded with ``ModelConfig.seed``, layers drawn in order; biases
start at zero.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DivergenceError

NONLINEARITIES = ("relu", "tanh")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture plus the initialization seed."""

    input_dim: int
    hidden_layers: tuple[int, ...]
    feature_dim: int
    nonlinearity: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be positive, got {self.feature_dim}")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f"hidden layer sizes must be >= 1, got {self.hidden_layers}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(
                f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}"
            )

    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.feature_dim]


@dataclass(frozen=True)
class TrainingHyperparams:
    """SGD schedule: base rate decayed by a fixed factor at epoch milestones."""

    learning_rate: float
    lr_milestones: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    weight_decay: float = 0.0
    momentum: float = 0.9
    epochs_per_task: int = 1
    batch_size: int = 32
    lambda_base: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_decay_factor <= 0:
            raise ConfigError(f"lr_decay_factor must be positive, got {self.lr_decay_factor}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs_per_task < 1:
            raise ConfigError(f"epochs_per_task must be positive, got {self.epochs_per_task}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lambda_base < 0:
            raise ConfigError(f"lambda_base must be non-negative, got {self.lambda_base}")
        ms = self.lr_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing, got {ms}")
        if ms and ms[-1] >= self.epochs_per_task:
            raise ConfigError(
                f"lr_milestones must be < epochs_per_task ({self.epochs_per_task}), got {ms}"
            )

    def effective_lr(self, epoch: int) -> float:
        """Base rate times decay_factor raised to the number of passed milestones."""
        passed = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.learning_rate * self.lr_decay_factor**passed


@dataclass
class ParamGrads:
    """Gradients shaped like the parameters of a FeatureExtractorState."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


class FeatureExtractorState:
    """Parameters and optimizer state of one feature extractor.

    Single writer: the training loop mutates it in place. A frozen copy
    (``copy()`` then ``freeze()``) is safe for unrestricted concurrent reads.
    """

    __slots__ = ("config", "weights", "biases", "velocity_w", "velocity_b", "step")

    def __init__(self, config, weights, biases, velocity_w, velocity_b, step=0):
        self.config = config
        self.weights = weights
        self.biases = biases
        self.velocity_w = velocity_w
        self.velocity_b = velocity_b
        self.step = step

    def copy(self) -> "FeatureExtractorState":
        return FeatureExtractorState(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [v.copy() for v in self.velocity_w],
            [v.copy() for v in self.velocity_b],
            self.step,
        )

    def freeze(self) -> "FeatureExtractorState":
        for arr in (*self.weights, *self.biases, *self.velocity_w, *self.velocity_b):
            arr.setflags(write=False)
        return self

    def reset_optimizer(self) -> None:
        self.velocity_w = [np.zeros_like(w) for w in self.weights]
        self.velocity_b = [np.zeros_like(b) for b in self.biases]

    def all_finite(self) -> bool:
        return all(
            np.all(np.isfinite(a)) for a in (*self.weights, *self.biases)
        )

    def parameter_checksum(self) -> str:
        """SHA-256 over the raw parameter bytes (weights and biases only)."""
        h = hashlib.sha256()
        for arr in (*self.weights, *self.biases):
            h.update(arr.tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig, total_classes: int | None = None) -> FeatureExtractorState:
    """Build a freshly initialized state from a config.

    ``total_classes`` is optional; when given, the feature dimension is checked
    against the fixed-classifier convention (capacity minus one).
    """
    if total_classes is not None and config.feature_dim != total_classes - 1:
        raise ConfigError(
            f"feature_dim {config.feature_dim} does not match class capacity "
            f"{total_classes} (expected {total_classes - 1})"
        )
    rng = np.random.default_rng(config.seed)
    sizes = config.layer_sizes()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float64))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    velocity_w = [np.zeros_like(w) for w in weights]
    velocity_b = [np.zeros_like(b) for b in biases]
    return FeatureExtractorState(config, weights, biases, velocity_w, velocity_b, step=0)


def _as_input_matrix(state: FeatureExtractorState, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, state.config.input_dim)
    if x.ndim != 2 or x.shape[1] != state.config.input_dim:
        raise DataError(
            f"expected inputs of dimension {state.config.input_dim}, got shape {x.shape}"
        )
    if x.size and not np.all(np.isfinite(x)):
        raise DataError("non-finite values in input batch")
    return x


def forward_features(state: FeatureExtractorState, batch) -> tuple[np.ndarray, list]:
    """Forward pass returning features and the cache needed for the reverse pass.

    Hidden layers apply the configured nonlinearity; the final layer is linear.
    """
    x = _as_input_matrix(state, batch)
    nl = state.config.nonlinearity
    cache = []
    h = x
    last = len(state.weights) - 1
    for i, (w, b) in enumerate(zip(state.weights, state.biases)):
        z = h @ w + b
        if i < last:
            a = np.maximum(z, 0.0) if nl == "relu" else np.tanh(z)
        else:
            a = z
        cache.append((h, z, a))
        h = a
    return h, cache


def extract_features(state: FeatureExtractorState, batch) -> np.ndarray:
    """Map a batch of inputs to feature vectors. Pure function of (state, batch)."""
    features, _ = forward_features(state, batch)
    return features


def backprop_feature_grads(
    state: FeatureExtractorState, cache: list, dfeatures: np.ndarray
) -> ParamGrads:
    """Reverse pass: map d(loss)/d(features) to parameter gradients."""
    nl = state.config.nonlinearity
    last = len(state.weights) - 1
    dweights = [None] * len(state.weights)
    dbiases = [None] * len(state.biases)
    delta = np.asarray(dfeatures, dtype=np.float64)
    for i in range(last, -1, -1):
        h_in, z, _ = cache[i]
        if i < last:
            if nl == "relu":
                delta = delta * (z > 0.0)
            else:
                delta = delta * (1.0 - np.tanh(z) ** 2)
        dweights[i] = h_in.T @ delta
        dbiases[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ state.weights[i].T
    return ParamGrads(weights=dweights, biases=dbiases)


def sgd_update(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """One in-place SGD step: v <- momentum*v + (g + wd*p); p <- p - lr*v.

    Weight decay is applied here rather than inside the loss.
    """
    g = grad + weight_decay * param
    velocity *= momentum
    velocity += g
    param -= lr * velocity


def apply_gradients(
    state: FeatureExtractorState,
    grads: ParamGrads,
    hyperparams: TrainingHyperparams,
    epoch: int,
) -> FeatureExtractorState:
    """Apply one SGD-with-momentum step at the milestone-scheduled learning rate."""
    for i, g in enumerate(grads.weights):
        if g.shape != state.weights[i].shape:
            raise DataError(
                f"gradient shape {g.shape} does not match weights[{i}] {state.weights[i].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in weights[{i}]")
    for i, g in enumerate(grads.biases):
        if g.shape != state.biases[i].shape:
            raise DataError(
                f"gradient shape {g.shape} does not match biases[{i}] {state.biases[i].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in biases[{i}]")
    lr = hyperparams.effective_lr(epoch)
    for w, g, v in zip(state.weights, grads.weights, state.velocity_w):
        sgd_update(w, g, v, lr, hyperparams.momentum, hyperparams.weight_decay)
    for b, g, v in zip(state.biases, grads.biases, state.velocity_b):
        sgd_update(b, g, v, lr, hyperparams.momentum, 0.0)
    state.step += 1
    return state


def gradient_check(
    state: FeatureExtractorState,
    loss_fn,
    batch,
    epsilon: float = 1e-5,
    sample_size: int = 200,
    seed: int = 0,
) -> float:
    """Compare analytic parameter gradients against central finite differences.

    ``loss_fn(state, batch)`` must return ``(loss_value, ParamGrads)``. A random
    subsample of parameter coordinates (all of them if the model is smaller
    than ``sample_size``) is perturbed by ``+/- epsilon`` and the resulting
    two-sided difference quotient is compared with the analytic gradient.
    Returns the maximum relative error over the sampled coordinates. Purely
    diagnostic: never raises on a bad gradient, only on misuse.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    batch_arr = np.asarray(batch, dtype=np.float64)
    if batch_arr.size == 0:
        raise ValueError("gradient_check requires a nonempty batch")

    _, analytic = loss_fn(state, batch_arr)
    probe = state.copy()

    coords = []
    for kind, arrays in (("w", probe.weights), ("b", probe.biases)):
        for layer, arr in enumerate(arrays):
            for flat in range(arr.size):
                coords.append((kind, layer, flat))
    rng = np.random.default_rng(seed)
    if len(coords) > sample_size:
        picked = rng.choice(len(coords), size=sample_size, replace=False)
        coords = [coords[i] for i in picked]

    max_rel = 0.0
    for kind, layer, flat in coords:
        arrs = probe.weights if kind == "w" else probe.biases
        grads = analytic.weights if kind == "w" else analytic.biases
        arr = arrs[layer]
        original = arr.flat[flat]
        arr.flat[flat] = original + epsilon
        loss_plus, _ = loss_fn(probe, batch_arr)
        arr.flat[flat] = original - epsilon
        loss_minus, _ = loss_fn(probe, batch_arr)
        arr.flat[flat] = original
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        a = grads[layer].flat[flat]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
        if rel > max_rel:
            max_rel = rel
    return max_rel
