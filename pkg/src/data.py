"""
Dataset ingestion, trigger embedding and poisoning for trojanforge

This module covers the data side of the experiments:
- IDX binary loading (MNIST layout) with byte-offset diagnostics
- A seeded Gaussian-blob generator for desk-scale runs
- Trigger masks/patches and the embedding x' = x * (1 - mask) + patch * mask
- Poisoned datasets (clean originals plus triggered copies)
- Gaussian probe sets for the instance-based detector
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

try:
    from .errors import DegenerateAlphaError, FormatError, InvalidArgumentError
    from .nn_core import one_hot
except ImportError:
    from errors import DegenerateAlphaError, FormatError, InvalidArgumentError
    from nn_core import one_hot


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Labelled samples with every feature in [0, 1].

    Arrays are stored read-only; datasets never change after construction.
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    image_side: Optional[int] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if samples.ndim != 2:
            raise InvalidArgumentError(f"samples must be an (n, d) matrix, got shape {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise InvalidArgumentError(
                f"{samples.shape[0]} samples but labels have shape {labels.shape}"
            )
        if self.num_classes < 2:
            raise InvalidArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        if samples.size and (samples.min() < 0.0 or samples.max() > 1.0):
            raise InvalidArgumentError("features must lie in [0, 1]")
        if self.image_side is not None and self.image_side * self.image_side != samples.shape[1]:
            raise InvalidArgumentError(
                f"image_side {self.image_side} does not match feature count {samples.shape[1]}"
            )
        object.__setattr__(self, 'samples', _readonly(samples))
        object.__setattr__(self, 'labels', _readonly(labels))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def targets(self) -> np.ndarray:
        """One-hot label rows (Y_i*)."""
        return one_hot(self.labels, self.num_classes)

    def class_frequency(self, label: int) -> float:
        return float(np.mean(self.labels == label)) if len(self) else 0.0


@dataclass(frozen=True, eq=False)
class TriggerSpec:
    """Binary mask, patch and target class of a Trojan trigger."""

    mask: np.ndarray
    patch: np.ndarray
    target_class: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=float)
        patch = np.asarray(self.patch, dtype=float)
        if mask.ndim != 1 or mask.shape != patch.shape:
            raise InvalidArgumentError(f"mask/patch shapes differ: {mask.shape} vs {patch.shape}")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise InvalidArgumentError("mask entries must be 0 or 1")
        if patch.min() < 0.0 or patch.max() > 1.0:
            raise InvalidArgumentError("patch entries must lie in [0, 1]")
        if self.target_class < 0:
            raise InvalidArgumentError(f"target_class must be non-negative, got {self.target_class}")
        object.__setattr__(self, 'mask', _readonly(mask))
        object.__setattr__(self, 'patch', _readonly(patch))

    @property
    def dim(self) -> int:
        return self.mask.shape[0]

    def target(self, k: int) -> np.ndarray:
        """Y_T as a one-hot LabelDist over k classes."""
        return one_hot(self.target_class, k)


@dataclass(frozen=True, eq=False)
class PoisonedDataset:
    """
    Clean dataset together with the subset selected to carry the trigger.

    The training view follows D_p = D_T U D: every clean original is kept with
    its true label and each selected sample contributes an extra triggered copy
    labelled with the target class. The split view (trojan_indices and its
    complement) is what the two loss terms are computed over.
    """

    clean: Dataset
    trojan_indices: np.ndarray
    trigger: TriggerSpec
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, 'trojan_indices', _readonly(np.asarray(self.trojan_indices, dtype=np.int64)))

    @property
    def n_trojan(self) -> int:
        return int(self.trojan_indices.shape[0])

    def trojan_inputs(self) -> np.ndarray:
        """Triggered copies x' of the selected samples."""
        return embed_trigger_batch(self.clean.samples[self.trojan_indices], self.trigger)

    def clean_indices(self) -> np.ndarray:
        """Indices outside the Trojan subset; there are ceil((1 - alpha) N) of them."""
        keep = np.ones(len(self.clean), dtype=bool)
        keep[self.trojan_indices] = False
        return np.flatnonzero(keep)

    def training_set(self) -> Tuple[np.ndarray, np.ndarray]:
        """(inputs, labels) of D_p: clean originals followed by triggered copies."""
        inputs = np.concatenate([self.clean.samples, self.trojan_inputs()])
        labels = np.concatenate([
            self.clean.labels,
            np.full(self.n_trojan, self.trigger.target_class, dtype=np.int64)
        ])
        return inputs, labels

    def training_targets(self) -> Tuple[np.ndarray, np.ndarray]:
        """(inputs, one-hot targets) of D_p."""
        inputs, labels = self.training_set()
        return inputs, one_hot(labels, self.clean.num_classes)

    def training_weights(self) -> np.ndarray:
        """
        Per-row weights for training_targets() whose weighted mean CE is F_T.

        Triggered copies weigh 1 / (alpha N), clean originals outside the
        Trojan subset 1 / ((1 - alpha) N) and the originals behind a triggered
        copy 0; everything is scaled by the row count so that
        mean(w_i * CE_i) equals the sum of the two normalized terms.
        """
        n = len(self.clean)
        rows = n + self.n_trojan
        weights = np.zeros(rows)
        weights[self.clean_indices()] = 1.0 / ((1.0 - self.alpha) * n)
        weights[n:] = 1.0 / (self.alpha * n)
        return weights * rows

    def trojan_only_targets(self) -> Tuple[np.ndarray, np.ndarray]:
        """(inputs, one-hot targets) of the triggered copies alone (D_T)."""
        inputs = self.trojan_inputs()
        labels = np.full(self.n_trojan, self.trigger.target_class, dtype=np.int64)
        return inputs, one_hot(labels, self.clean.num_classes)


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Random probe inputs drawn from a per-feature Gaussian and clipped to [0, 1]."""

    inputs: np.ndarray
    mu: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, 'inputs', _readonly(np.asarray(self.inputs, dtype=float)))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def disjoint_from(self, dataset: Dataset) -> bool:
        """True when no probe equals any sample of `dataset` value for value."""
        seen = {row.tobytes() for row in dataset.samples}
        return not any(row.tobytes() in seen for row in self.inputs)


def _read_bytes(path: Union[str, Path]) -> bytes:
    with open(path, 'rb') as f:
        return f.read()


def _idx_header(data: bytes, n_dims: int, magic: int, path: str) -> np.ndarray:
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise FormatError(f"file truncated inside the {header_len}-byte header", offset=len(data), path=path)
    header = np.frombuffer(data, dtype='>u4', count=1 + n_dims)
    if int(header[0]) != magic:
        raise FormatError(
            f"bad magic number 0x{int(header[0]):08x}, expected 0x{magic:08x}", offset=0, path=path
        )
    return header[1:].astype(np.int64)


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    num_classes: Optional[int] = None
) -> Dataset:
    """
    Load an IDX image/label file pair (the MNIST distribution format).

    Args:
        images_path: IDX3 file (magic 0x00000803, n, rows, cols, then bytes)
        labels_path: IDX1 file (magic 0x00000801, n, then bytes)
        num_classes: Number of classes; defaults to max(label) + 1

    Returns:
        Dataset with pixels scaled to [0, 1] by /255

    Raises:
        FormatError: bad magic, truncated/oversized payload or count mismatch
    """
    images_path, labels_path = str(images_path), str(labels_path)
    image_bytes = _read_bytes(images_path)
    label_bytes = _read_bytes(labels_path)

    n, rows, cols = _idx_header(image_bytes, 3, IDX_IMAGES_MAGIC, images_path)
    expected = 16 + int(n * rows * cols)
    if len(image_bytes) < expected:
        raise FormatError(
            f"truncated pixel data: expected {expected} bytes, got {len(image_bytes)}",
            offset=len(image_bytes), path=images_path
        )
    if len(image_bytes) > expected:
        raise FormatError("unexpected trailing bytes after pixel data", offset=expected, path=images_path)

    (n_labels,) = _idx_header(label_bytes, 1, IDX_LABELS_MAGIC, labels_path)
    if n_labels != n:
        raise FormatError(f"label count {n_labels} does not match image count {n}", offset=4, path=labels_path)
    if len(label_bytes) < 8 + n_labels:
        raise FormatError(
            f"truncated label data: expected {8 + n_labels} bytes, got {len(label_bytes)}",
            offset=len(label_bytes), path=labels_path
        )
    if len(label_bytes) > 8 + n_labels:
        raise FormatError("unexpected trailing bytes after label data", offset=8 + int(n_labels), path=labels_path)

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16).reshape(int(n), int(rows * cols))
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8).astype(np.int64)

    k = num_classes if num_classes is not None else max(2, int(labels.max()) + 1 if labels.size else 2)
    return Dataset(
        samples=pixels.astype(float) / 255.0,
        labels=labels,
        num_classes=k,
        image_side=int(rows) if rows == cols else None
    )


def gen_synthetic(
    k: int,
    n_per_class: int,
    dim: int,
    separation: float,
    seed: int,
    spread: float = 0.1
) -> Dataset:
    """
    k Gaussian blobs whose centers are pairwise `separation` apart.

    Class c is centered at base + (separation / sqrt(2)) * e_{dim - k + c}, so only
    the last k features carry signal and a corner trigger at the top-left of the
    image never overwrites them. Features are clipped to [0, 1].

    Args:
        k: Number of classes (2 <= k <= dim)
        n_per_class: Samples per class
        dim: Feature count (>= 4)
        separation: Euclidean distance between any two class centers
        seed: Seed of the draw
        spread: Per-feature standard deviation around each center

    Returns:
        Shuffled Dataset; image_side is set when dim is a perfect square
    """
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    if dim < 4:
        raise InvalidArgumentError(f"dim must be >= 4, got {dim}")
    if k > dim:
        raise InvalidArgumentError(f"k ({k}) must not exceed dim ({dim})")
    if n_per_class < 1:
        raise InvalidArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    if not separation > 0:
        raise InvalidArgumentError(f"separation must be positive, got {separation}")
    if not spread > 0:
        raise InvalidArgumentError(f"spread must be positive, got {spread}")

    rng = np.random.default_rng(seed)
    offset = separation / math.sqrt(2.0)
    centers = np.full((k, dim), 0.5 - offset / 2.0)
    centers[np.arange(k), dim - k + np.arange(k)] += offset

    labels = np.repeat(np.arange(k), n_per_class)
    samples = centers[labels] + rng.normal(0.0, spread, size=(labels.shape[0], dim))
    order = rng.permutation(labels.shape[0])

    side = math.isqrt(dim)
    return Dataset(
        samples=np.clip(samples[order], 0.0, 1.0),
        labels=labels[order],
        num_classes=k,
        image_side=side if side * side == dim else None
    )


def square_trigger(
    image_side: int,
    size: int = 4,
    row: int = 0,
    col: int = 0,
    value: float = 1.0,
    target_class: int = 0
) -> TriggerSpec:
    """
    Square patch trigger on a flattened image_side x image_side image.

    The default is a white 4x4 square in the top-left corner.
    """
    if size < 1 or row < 0 or col < 0 or row + size > image_side or col + size > image_side:
        raise InvalidArgumentError(
            f"{size}x{size} trigger at ({row}, {col}) does not fit a {image_side}x{image_side} image"
        )
    mask = np.zeros((image_side, image_side))
    mask[row:row + size, col:col + size] = 1.0
    return TriggerSpec(mask=mask.ravel(), patch=mask.ravel() * value, target_class=target_class)


def feature_trigger(dim: int, indices: Sequence[int], value: float = 1.0, target_class: int = 0) -> TriggerSpec:
    """Trigger that overwrites the listed features of a flat vector with `value`."""
    mask = np.zeros(dim)
    try:
        mask[list(indices)] = 1.0
    except IndexError:
        raise InvalidArgumentError(f"trigger indices {list(indices)} out of range for dim {dim}")
    return TriggerSpec(mask=mask, patch=mask * value, target_class=target_class)


def embed_trigger(x: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    """
    x' = x * (1 - mask) + patch * mask.

    Examples:
        >>> t = feature_trigger(4, [0], 1.0)
        >>> embed_trigger(np.full(4, 0.2), t).tolist()
        [1.0, 0.2, 0.2, 0.2]
    """
    arr = np.asarray(x, dtype=float)
    if arr.shape != trigger.mask.shape:
        raise InvalidArgumentError(f"sample shape {arr.shape} does not match trigger shape {trigger.mask.shape}")
    return arr * (1.0 - trigger.mask) + trigger.patch * trigger.mask


def embed_trigger_batch(inputs: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    """Row-wise embed_trigger for an (n, d) matrix."""
    arr = np.asarray(inputs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != trigger.dim:
        raise InvalidArgumentError(f"inputs have shape {arr.shape}, expected (n, {trigger.dim})")
    return arr * (1.0 - trigger.mask) + trigger.patch * trigger.mask


def trojan_count(alpha: float, n: int) -> int:
    """floor(alpha * n), corrected for products that round just below an integer."""
    count = math.floor(alpha * n)
    if (count + 1) / n <= alpha:
        count += 1
    return count


def poison_dataset(clean: Dataset, alpha: float, trigger: TriggerSpec, seed: int) -> PoisonedDataset:
    """
    Select floor(alpha * N) samples uniformly without replacement to carry the trigger.

    Args:
        clean: Clean dataset D_C (never modified)
        alpha: Poisoning ratio in (0, 1)
        trigger: Trigger to embed
        seed: Seed of the selection

    Returns:
        PoisonedDataset with sorted trojan_indices

    Raises:
        InvalidArgumentError: alpha outside (0, 1) or shape mismatch
        DegenerateAlphaError: floor(alpha * N) == 0
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha out of range (0,1): {alpha}")
    if trigger.dim != clean.dim:
        raise InvalidArgumentError(f"trigger has {trigger.dim} features, dataset has {clean.dim}")
    if trigger.target_class >= clean.num_classes:
        raise InvalidArgumentError(
            f"target_class {trigger.target_class} out of range for {clean.num_classes} classes"
        )

    n = len(clean)
    count = trojan_count(alpha, n) if n else 0
    if count == 0:
        raise DegenerateAlphaError(alpha, n)

    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=count, replace=False))
    return PoisonedDataset(clean=clean, trojan_indices=indices, trigger=trigger, alpha=float(alpha))


def sample_probes(count: int, dim: int, mu: float, sigma: float, seed: int) -> ProbeSet:
    """
    Draw `count` probe vectors with i.i.d. N(mu, sigma) features, clipped to [0, 1].
    """
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if count < 1 or dim < 1:
        raise InvalidArgumentError(f"count and dim must be >= 1, got {count}, {dim}")
    rng = np.random.default_rng(seed)
    inputs = np.clip(rng.normal(mu, sigma, size=(count, dim)), 0.0, 1.0)
    return ProbeSet(inputs=inputs, mu=float(mu), sigma=float(sigma))


def pixel_statistics(dataset: Dataset) -> Tuple[float, float]:
    """Global feature mean and standard deviation (sigma floored at 1e-6)."""
    return float(np.mean(dataset.samples)), max(float(np.std(dataset.samples)), 1e-6)


def subset(dataset: Dataset, limit: Optional[int]) -> Dataset:
    """First `limit` samples of a dataset (all of them when limit is None)."""
    if limit is None or limit >= len(dataset):
        return dataset
    if limit < 1:
        raise InvalidArgumentError(f"limit must be >= 1, got {limit}")
    return Dataset(
        samples=dataset.samples[:limit],
        labels=dataset.labels[:limit],
        num_classes=dataset.num_classes,
        image_side=dataset.image_side
    )


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded random split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError(f"test_fraction out of range (0,1): {test_fraction}")
    n = len(dataset)
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise InvalidArgumentError(f"dataset of {n} samples is too small to split")
    order = np.random.default_rng(seed).permutation(n)

    def take(idx: np.ndarray) -> Dataset:
        return Dataset(
            samples=dataset.samples[idx],
            labels=dataset.labels[idx],
            num_classes=dataset.num_classes,
            image_side=dataset.image_side
        )

    return take(np.sort(order[n_test:])), take(np.sort(order[:n_test]))
