"""
Minimal feed-forward neural network engine for trojanforge

This module provides everything needed to train the classifiers and the
detector used by the poisoning experiments:
- Seeded model initialization (uniform, scaled by 1/sqrt(fan-in), zero biases)
- Numerically stable softmax and clamped cross-entropy
- Vectorized forward pass and manual backpropagation (including the gradient
  with respect to the network input, used to chain a detector into a generator)
- Plain SGD steps and a seeded minibatch training loop
- .npz model artifacts

Models are treated as values: every update returns a new Model and leaves the
old one untouched, so a trained model can be shared read-only.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

try:
    from .errors import InvalidArgumentError, NumericError
except ImportError:
    from errors import InvalidArgumentError, NumericError


Matrix = np.ndarray
LabelDist = np.ndarray

LOG_CLAMP = 1e-12
PROBABILITY_ATOL = 1e-9

logger = logging.getLogger(__name__)


@dataclass
class Model:
    """
    Layered feed-forward classifier.

    weights[i] has shape (layer_dims[i+1], layer_dims[i]); hidden layers use a
    rectifier and the output layer a softmax.
    """

    layer_dims: List[int]
    weights: List[Matrix]
    biases: List[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "softmax"

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise InvalidArgumentError(
                f"expected {len(self.layer_dims) - 1} weight/bias pairs, "
                f"got {len(self.weights)}/{len(self.biases)}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expected:
                raise InvalidArgumentError(f"weights[{i}] has shape {w.shape}, expected {expected}")
            if b.shape != (self.layer_dims[i + 1],):
                raise InvalidArgumentError(f"biases[{i}] has shape {b.shape}, expected {(expected[0],)}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "Model":
        return Model(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
        )

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def same_parameters(self, other: "Model") -> bool:
        """Bit-identical parameter comparison."""
        if self.layer_dims != other.layer_dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


@dataclass
class Gradients:
    """Per-layer gradients with the same shapes as a Model's parameters."""

    weights: List[Matrix]
    biases: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend([w, b])
        return grads


@dataclass
class ForwardCache:
    """Intermediate values kept by forward_batch for backpropagation."""

    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    probabilities: np.ndarray = field(repr=False)


@dataclass
class TrainConfig:
    """Hyperparameters of the base SGD trainer."""

    lr: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


def init_model(layer_dims: Sequence[int], seed: int) -> Model:
    """
    Build a model with weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Args:
        layer_dims: Input size, hidden sizes, number of classes
        seed: Seed of the weight draw; identical seeds give identical models

    Returns:
        Freshly initialized Model with zero biases
    """
    dims = list(layer_dims)
    if len(dims) < 2:
        raise InvalidArgumentError(f"layer_dims needs at least 2 entries, got {dims}")
    for d in dims:
        if isinstance(d, bool) or int(d) != d or d <= 0:
            raise InvalidArgumentError(f"layer_dims entries must be positive integers, got {dims}")
    dims = [int(d) for d in dims]

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    return Model(layer_dims=dims, weights=weights, biases=biases)


def zero_model(layer_dims: Sequence[int]) -> Model:
    """Model with all-zero parameters; its output is uniform for any input."""
    dims = [int(d) for d in layer_dims]
    return Model(
        layer_dims=dims,
        weights=[np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(o) for o in dims[1:]],
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """
    Softmax along the last axis with max-subtraction.

    Examples:
        >>> softmax(np.array([0.0, 0.0])).tolist()
        [0.5, 0.5]
    """
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def softmax_backward(probabilities: np.ndarray, d_probabilities: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    inner = np.sum(d_probabilities * probabilities, axis=-1, keepdims=True)
    return probabilities * (d_probabilities - inner)


def one_hot(labels: Union[int, Sequence[int], np.ndarray], k: int) -> np.ndarray:
    """One-hot LabelDist rows for integer labels."""
    labels_arr = np.asarray(labels, dtype=int)
    if np.any(labels_arr < 0) or np.any(labels_arr >= k):
        raise InvalidArgumentError(f"labels must lie in [0, {k}), got {labels}")
    out = np.zeros(labels_arr.shape + (k,))
    if labels_arr.ndim == 0:
        out[int(labels_arr)] = 1.0
    else:
        out[np.arange(labels_arr.shape[0]), labels_arr] = 1.0
    return out


def _as_batch(model: Model, x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"input has shape {arr.shape}, expected (n, {model.input_dim})"
        )
    return arr


def forward_batch(model: Model, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Forward pass for an (n, d) input matrix.

    Returns:
        (probabilities of shape (n, k), cache for backward)
    """
    a = _as_batch(model, inputs)
    activations = [a]
    pre_activations = []
    last = len(model.weights) - 1

    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        pre_activations.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            activations.append(a)

    probabilities = softmax(pre_activations[-1])
    return probabilities, ForwardCache(activations, pre_activations, probabilities)


def predict_proba(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Probability rows for an (n, d) input matrix."""
    return forward_batch(model, inputs)[0]


def forward(model: Model, x: np.ndarray) -> LabelDist:
    """Probability vector f(x; theta) for a single input vector."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != model.input_dim:
        raise InvalidArgumentError(f"input has shape {arr.shape}, expected ({model.input_dim},)")
    return forward_batch(model, arr[None, :])[0][0]


def backward(model: Model, cache: ForwardCache, d_logits: np.ndarray) -> Tuple[Gradients, np.ndarray]:
    """
    Backpropagate a gradient given with respect to the output logits.

    Args:
        model: Model used for the forward pass
        cache: Cache returned by forward_batch
        d_logits: (n, k) gradient of the objective w.r.t. the logits; any
            averaging over the batch is the caller's responsibility

    Returns:
        (parameter gradients, gradient w.r.t. the (n, d) input)
    """
    delta = np.asarray(d_logits, dtype=float)
    n_layers = len(model.weights)
    grad_w: List[Optional[np.ndarray]] = [None] * n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * n_layers

    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ cache.activations[i]
        grad_b[i] = delta.sum(axis=0)
        d_a = delta @ model.weights[i]
        if i > 0:
            delta = d_a * (cache.pre_activations[i - 1] > 0.0)

    return Gradients(weights=grad_w, biases=grad_b), d_a


def cross_entropy(target: LabelDist, predicted: LabelDist) -> float:
    """
    -sum_j target_j * log(max(predicted_j, 1e-12)).

    Examples:
        >>> round(cross_entropy(np.full(4, 0.25), np.full(4, 0.25)), 4)
        1.3863
    """
    t = np.asarray(target, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if t.shape != p.shape or t.ndim != 1:
        raise InvalidArgumentError(f"target/predicted shapes differ: {t.shape} vs {p.shape}")
    return float(-np.sum(t * np.log(np.maximum(p, LOG_CLAMP))))


def cross_entropy_batch(targets: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy for (n, k) target and prediction matrices."""
    t = np.asarray(targets, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if t.shape != p.shape:
        raise InvalidArgumentError(f"target/predicted shapes differ: {t.shape} vs {p.shape}")
    return -np.sum(t * np.log(np.maximum(p, LOG_CLAMP)), axis=-1)


def _row_weights(weights: Optional[np.ndarray], n: int) -> Optional[np.ndarray]:
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise InvalidArgumentError(f"sample_weights have shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise InvalidArgumentError("sample_weights must be finite and non-negative")
    return w


def loss_and_gradients(
    model: Model,
    inputs: np.ndarray,
    targets: np.ndarray,
    sample_weights: Optional[np.ndarray] = None
) -> Tuple[float, Gradients]:
    """
    Mean cross-entropy over a batch and its parameter gradients.

    With sample_weights the loss is mean_i(w_i * CE_i); all-ones weights give
    the plain mean.
    """
    probabilities, cache = forward_batch(model, inputs)
    t = np.asarray(targets, dtype=float)
    if t.shape != probabilities.shape:
        raise InvalidArgumentError(f"targets have shape {t.shape}, expected {probabilities.shape}")
    n = probabilities.shape[0]
    w = _row_weights(sample_weights, n)
    per_row = cross_entropy_batch(t, probabilities)
    d_logits = (probabilities - t) / n
    if w is not None:
        per_row = per_row * w
        d_logits = d_logits * w[:, None]
    grads, _ = backward(model, cache, d_logits)
    return float(np.mean(per_row)), grads


def apply_update(model: Model, grads: Gradients, scale: float) -> Model:
    """New model with parameters theta + scale * grads."""
    if scale == 0:
        return model.copy()
    return Model(
        layer_dims=list(model.layer_dims),
        weights=[w + scale * g for w, g in zip(model.weights, grads.weights)],
        biases=[b + scale * g for b, g in zip(model.biases, grads.biases)],
        hidden_activation=model.hidden_activation,
        output_activation=model.output_activation,
    )


def sgd_step(
    model: Model,
    inputs: np.ndarray,
    targets: np.ndarray,
    lr: float,
    sample_weights: Optional[np.ndarray] = None
) -> Tuple[Model, float]:
    """One SGD step on (weighted) mean cross-entropy; returns (updated model, pre-step loss)."""
    if np.asarray(inputs).shape[0] == 0:
        raise InvalidArgumentError("batch must not be empty")
    loss, grads = loss_and_gradients(model, inputs, targets, sample_weights)
    return apply_update(model, grads, -lr), loss


def grad_step(model: Model, batch: Sequence[Tuple[np.ndarray, LabelDist]], lr: float) -> Model:
    """
    One SGD step of size lr on the mean cross-entropy of a batch.

    Args:
        model: Current parameters (left unchanged)
        batch: Sequence of (input vector, target LabelDist) pairs
        lr: Learning rate (>= 0)

    Returns:
        Updated Model
    """
    if len(batch) == 0:
        raise InvalidArgumentError("batch must not be empty")
    if lr < 0:
        raise InvalidArgumentError(f"lr must be non-negative, got {lr}")
    inputs = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
    targets = np.stack([np.asarray(t, dtype=float) for _, t in batch])
    return sgd_step(model, inputs, targets, lr)[0]


def predict_class(p: LabelDist) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    return int(np.argmax(np.asarray(p)))


def predict_classes(probabilities: np.ndarray) -> np.ndarray:
    """Row-wise predict_class for an (n, k) matrix."""
    return np.argmax(np.asarray(probabilities), axis=1)


def train_model(
    model: Model,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    show_progress: bool = False,
    stage: str = "training",
    sample_weights: Optional[np.ndarray] = None
) -> Model:
    """
    Seeded minibatch SGD on mean cross-entropy.

    Args:
        model: Starting parameters
        inputs: (n, d) training inputs
        targets: (n, k) target LabelDists
        config: Learning rate, epochs, batch size and shuffling seed
        show_progress: Show a tqdm bar over epochs
        stage: Label used in NumericError messages
        sample_weights: Optional (n,) per-row loss weights; each minibatch
            minimizes mean(w_i * CE_i) over its rows

    Returns:
        Trained model

    Raises:
        NumericError: if the loss or parameters stop being finite
    """
    x = _as_batch(model, inputs)
    t = np.asarray(targets, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise InvalidArgumentError("training set must not be empty")
    w = _row_weights(sample_weights, n)

    rng = np.random.default_rng(config.seed)
    epochs = range(config.epochs)
    if show_progress:
        epochs = tqdm(epochs, desc=stage, unit="epoch")

    for epoch in epochs:
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model, loss = sgd_step(model, x[idx], t[idx], config.lr, None if w is None else w[idx])
            epoch_loss += loss * len(idx)
        if not math.isfinite(epoch_loss) or not model.is_finite():
            raise NumericError(stage, epoch, "loss is not finite")
        logger.debug(f"{stage}: epoch {epoch} mean loss {epoch_loss / n:.5f}")

    return model


def save_model(model: Model, path: Union[str, Path]) -> Path:
    """Write a model to an .npz artifact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"layer_dims": np.asarray(model.layer_dims, dtype=np.int64)}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    return path


def load_model(path: Union[str, Path]) -> Model:
    """Read a model written by save_model."""
    with np.load(Path(path)) as data:
        dims = [int(d) for d in data["layer_dims"]]
        weights = [data[f"w{i}"].astype(float) for i in range(len(dims) - 1)]
        biases = [data[f"b{i}"].astype(float) for i in range(len(dims) - 1)]
    return Model(layer_dims=dims, weights=weights, biases=biases)
