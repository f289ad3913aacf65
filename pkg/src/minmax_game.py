"""
Min-max Trojan training against an instance-based detector

The detector h_D is a small [k, hidden, 2] network that looks at a model's
output vector on a random probe input and outputs (P(clean), P(trojan)).
Training alternates two steps per iteration:

- detector step: descend the detector's cross-entropy on outputs of the
  frozen clean model (label 0) and the current Trojan model (label 1)
- generator step: descend classification loss on poisoned data while
  ascending the detector's cross-entropy for "trojan" through the frozen
  detector

With gamma2 = 0 the generator step is plain poisoned-data SGD, which is the
Baseline Trojan.

Equilibrium diagnostics project output vectors to their largest probability
and histogram them over [1/k, 1]. From the two histograms we estimate the
optimal detector b / (a + b) and the symmetrized divergence that the game
drives to zero.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr
from tqdm import tqdm

try:
    from .data import Dataset, PoisonedDataset, ProbeSet, pixel_statistics, sample_probes, subset
    from .errors import InvalidArgumentError, NumericError
    from .metrics import acc_clean, acc_trojan
    from .nn_core import (
        LOG_CLAMP, Model, apply_update, backward, forward_batch, init_model, loss_and_gradients,
        one_hot, predict_proba, sgd_step, softmax_backward, zero_model
    )
    from .utils import create_logger_with_colors, export_to_csv
except ImportError:
    from data import Dataset, PoisonedDataset, ProbeSet, pixel_statistics, sample_probes, subset
    from errors import InvalidArgumentError, NumericError
    from metrics import acc_clean, acc_trojan
    from nn_core import (
        LOG_CLAMP, Model, apply_update, backward, forward_batch, init_model, loss_and_gradients,
        one_hot, predict_proba, sgd_step, softmax_backward, zero_model
    )
    from utils import create_logger_with_colors, export_to_csv


CLEAN_LABEL = 0
TROJAN_LABEL = 1
DETECTOR_HIDDEN = 20
GAME_TRACE_FIELDS = [
    "iter", "det_loss", "gen_fool_loss", "cls_loss", "mean_hd_trojan",
    "mean_hd_clean", "jsd", "acc_c", "acc_t"
]


@dataclass
class Detector:
    """Instance-based detector; component 0 of its output is h_D (P(clean))."""

    network: Model

    def __post_init__(self):
        if self.network.num_classes != 2:
            raise InvalidArgumentError(f"detector must have 2 outputs, got {self.network.num_classes}")

    @property
    def num_classes(self) -> int:
        """Size k of the output vectors the detector reads."""
        return self.network.input_dim


def init_detector(k: int, seed: int, hidden: int = DETECTOR_HIDDEN) -> Detector:
    return Detector(init_model([k, hidden, 2], seed))


def zero_detector(k: int, hidden: int = DETECTOR_HIDDEN) -> Detector:
    """Detector that answers 0.5 for every input."""
    return Detector(zero_model([k, hidden, 2]))


def detector_forward(det: Detector, z: np.ndarray) -> float:
    """
    h_D(z): probability that output vector z came from the clean model.

    Examples:
        >>> detector_forward(zero_detector(3), np.full(3, 1 / 3))
        0.5
    """
    arr = np.asarray(z, dtype=float)
    if arr.shape != (det.num_classes,):
        raise InvalidArgumentError(f"z has shape {arr.shape}, expected ({det.num_classes},)")
    if np.any(arr < 0.0) or abs(float(arr.sum()) - 1.0) > 1e-6:
        raise InvalidArgumentError("z must be a probability vector")
    return float(predict_proba(det.network, arr[None, :])[0, CLEAN_LABEL])


def detector_outputs(det: Detector, outputs: np.ndarray) -> np.ndarray:
    """h_D for each row of an (n, k) matrix of output vectors."""
    return predict_proba(det.network, outputs)[:, CLEAN_LABEL]


def detector_loss(det: Detector, outputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the detector on labelled output vectors."""
    loss, _ = loss_and_gradients(det.network, outputs, one_hot(labels, 2))
    return loss


def detection_set(clean_model: Model, trojan_model: Model, probes: ProbeSet) -> Tuple[np.ndarray, np.ndarray]:
    """S: Trojan-model outputs labelled 1 followed by clean-model outputs labelled 0."""
    if len(probes) == 0:
        raise InvalidArgumentError("probe set must not be empty")
    z_trojan = predict_proba(trojan_model, probes.inputs)
    z_clean = predict_proba(clean_model, probes.inputs)
    labels = np.concatenate([
        np.full(len(probes), TROJAN_LABEL, dtype=np.int64),
        np.full(len(probes), CLEAN_LABEL, dtype=np.int64)
    ])
    return np.concatenate([z_trojan, z_clean]), labels


def _detector_step(
    det: Detector, clean_model: Model, trojan_model: Model, probes: ProbeSet, gamma1: float
) -> Tuple[Detector, float]:
    if gamma1 < 0:
        raise InvalidArgumentError(f"gamma1 must be non-negative, got {gamma1}")
    outputs, labels = detection_set(clean_model, trojan_model, probes)
    network, loss = sgd_step(det.network, outputs, one_hot(labels, 2), gamma1)
    return Detector(network), loss


def detector_update(
    det: Detector, clean_model: Model, trojan_model: Model, probes: ProbeSet, gamma1: float
) -> Detector:
    """One SGD step of size gamma1 on the detector's cross-entropy over S."""
    return _detector_step(det, clean_model, trojan_model, probes, gamma1)[0]


def train_detector(
    det: Detector,
    clean_model: Model,
    trojan_model: Model,
    steps: int,
    gamma1: float,
    mu: float,
    sigma: float,
    probe_count: int,
    seed: int
) -> Detector:
    """Repeated detector updates, each on a fresh probe draw, with both models frozen."""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    rng = np.random.default_rng(seed)
    for step in range(steps):
        probes = sample_probes(probe_count, clean_model.input_dim, mu, sigma, int(rng.integers(0, 2 ** 63)))
        det, loss = _detector_step(det, clean_model, trojan_model, probes, gamma1)
        if not math.isfinite(loss):
            raise NumericError("detector training", step, "loss is not finite")
    return det


def fooling_loss_and_gradients(trojan_model: Model, det: Detector, probes: ProbeSet):
    """
    Mean of -log P(trojan) over the probes and its gradient w.r.t. theta_T.

    The gradient flows from the detector's logits back through the frozen
    detector into the Trojan model's softmax output and on to its parameters.
    """
    if len(probes) == 0:
        raise InvalidArgumentError("probe set must not be empty")
    z, model_cache = forward_batch(trojan_model, probes.inputs)
    q, det_cache = forward_batch(det.network, z)
    n = q.shape[0]
    loss = float(np.mean(-np.log(np.maximum(q[:, TROJAN_LABEL], LOG_CLAMP))))

    d_det_logits = (q - one_hot(np.full(n, TROJAN_LABEL), 2)) / n
    _, d_z = backward(det.network, det_cache, d_det_logits)
    grads, _ = backward(trojan_model, model_cache, softmax_backward(z, d_z))
    return loss, grads


def _generator_step(
    trojan_model: Model,
    det: Detector,
    probes: ProbeSet,
    inputs: np.ndarray,
    targets: np.ndarray,
    gamma2: float,
    gamma3: float
) -> Tuple[Model, float, float]:
    if gamma2 < 0 or gamma3 < 0:
        raise InvalidArgumentError(f"gamma2 and gamma3 must be non-negative, got {gamma2}, {gamma3}")
    if inputs.shape[0] == 0:
        raise InvalidArgumentError("poisoned batch must not be empty")
    cls_loss, cls_grads = loss_and_gradients(trojan_model, inputs, targets)
    fool_loss, fool_grads = fooling_loss_and_gradients(trojan_model, det, probes)

    updated = apply_update(trojan_model, cls_grads, -gamma3)
    if gamma2 != 0:
        updated = apply_update(updated, fool_grads, gamma2)
    return updated, fool_loss, cls_loss


def _poisoned_rows(poisoned: PoisonedDataset, trojan_only: bool) -> Tuple[np.ndarray, np.ndarray]:
    return poisoned.trojan_only_targets() if trojan_only else poisoned.training_targets()


def generator_update(
    trojan_model: Model,
    det: Detector,
    probes: ProbeSet,
    poisoned: PoisonedDataset,
    gamma2: float,
    gamma3: float,
    batch_indices: Optional[np.ndarray] = None,
    trojan_only: bool = False
) -> Model:
    """
    theta_T <- theta_T + gamma2 * L2 - gamma3 * L3.

    L2 is the gradient of the detector's mean cross-entropy for "trojan" over
    the probes; L3 the gradient of mean classification cross-entropy over the
    poisoned rows (clean originals and triggered copies, or the triggered
    copies alone with trojan_only).

    Args:
        batch_indices: Rows of the poisoned training view to use; all rows
            when None
    """
    if trojan_model.input_dim != poisoned.clean.dim or det.num_classes != trojan_model.num_classes:
        raise InvalidArgumentError("model, detector and poisoned data shapes do not match")
    inputs, targets = _poisoned_rows(poisoned, trojan_only)
    if batch_indices is not None:
        inputs, targets = inputs[batch_indices], targets[batch_indices]
    return _generator_step(trojan_model, det, probes, inputs, targets, gamma2, gamma3)[0]


@dataclass
class GameConfig:
    """
    Settings of the min-max game.

    gamma2 = 0 turns the generator step into plain poisoned-data SGD. mu and
    sigma default to the clean data's pixel statistics when left as None.
    """

    itr: int = 300
    gamma1: float = 0.1
    gamma2: float = 0.05
    gamma3: float = 0.1
    probe_count: int = 128
    mu: Optional[float] = None
    sigma: Optional[float] = None
    batch_size: int = 128
    bins: int = 20
    trojan_only: bool = False
    eval_samples: int = 500
    seed: int = 0
    hidden: int = DETECTOR_HIDDEN

    def __post_init__(self):
        if self.itr < 1:
            raise InvalidArgumentError(f"itr must be >= 1, got {self.itr}")
        if not (self.gamma1 > 0 and self.gamma3 > 0):
            raise InvalidArgumentError(f"gamma1 and gamma3 must be positive, got {self.gamma1}, {self.gamma3}")
        if self.gamma2 < 0:
            raise InvalidArgumentError(f"gamma2 must be non-negative, got {self.gamma2}")
        for name in ("probe_count", "batch_size", "eval_samples", "hidden"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.bins < 2:
            raise InvalidArgumentError(f"bins must be >= 2, got {self.bins}")
        if self.sigma is not None and not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")

    def probe_statistics(self, clean: Dataset) -> Tuple[float, float]:
        mu, sigma = pixel_statistics(clean)
        return (self.mu if self.mu is not None else mu, self.sigma if self.sigma is not None else sigma)


@dataclass
class GameStreams:
    """Independent random streams of one game run."""

    probes: np.random.Generator
    batches: np.random.Generator
    detector: np.random.Generator

    def next_seed(self, stream: np.random.Generator) -> int:
        return int(stream.integers(0, 2 ** 63))


def game_streams(seed: int) -> GameStreams:
    probes, batches, detector = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    return GameStreams(probes=probes, batches=batches, detector=detector)


def _draw_batch(streams: GameStreams, inputs: np.ndarray, targets: np.ndarray, batch_size: int):
    n = inputs.shape[0]
    idx = streams.batches.choice(n, size=min(batch_size, n), replace=False)
    return inputs[idx], targets[idx]


def _baseline_schedule(
    init_trojan: Model, poisoned: PoisonedDataset, cfg: GameConfig, logger: logging.Logger, iterations
) -> Model:
    """Poisoned-data SGD on the game's batch stream; no detector and no probes."""
    streams = game_streams(cfg.seed)
    inputs, targets = _poisoned_rows(poisoned, cfg.trojan_only)
    model = init_trojan
    for it in iterations:
        batch_inputs, batch_targets = _draw_batch(streams, inputs, targets, cfg.batch_size)
        model, loss = sgd_step(model, batch_inputs, batch_targets, cfg.gamma3)
        if not math.isfinite(loss) or not model.is_finite():
            logger.error(f"Non-finite value at iteration {it}")
            raise NumericError("baseline_trojan_train", it, "loss is not finite")
    return model


@dataclass(frozen=True)
class GameRecord:
    iter: int
    det_loss: float
    gen_fool_loss: float
    cls_loss: float
    mean_hd_trojan: float
    mean_hd_clean: float
    jsd: float
    acc_c: float
    acc_t: float


@dataclass
class GameTrace:
    records: List[GameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def rows(self) -> List[dict]:
        return [{name: getattr(r, name) for name in GAME_TRACE_FIELDS} for r in self.records]

    def export_csv(self, filepath, comments: Sequence[str] = ()):
        return export_to_csv(self.rows(), filepath, GAME_TRACE_FIELDS, comments)


@dataclass(frozen=True)
class OptimalDetectorEstimate:
    """
    Binned estimate of the optimal detector over the max-probability statistic.

    trojan_density (a) and clean_density (b) are per-cell probabilities;
    values holds b / (a + b), or 0.5 for cells neither sample reaches.
    """

    edges: np.ndarray
    trojan_density: np.ndarray
    clean_density: np.ndarray
    values: np.ndarray

    @property
    def populated(self) -> np.ndarray:
        return (self.trojan_density + self.clean_density) > 0

    def cell_of(self, outputs: np.ndarray) -> np.ndarray:
        stat = max_probability_statistic(outputs)
        cells = np.searchsorted(self.edges, stat, side="right") - 1
        return np.clip(cells, 0, len(self.values) - 1)


def max_probability_statistic(outputs: np.ndarray) -> np.ndarray:
    arr = np.asarray(outputs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidArgumentError(f"outputs must be a non-empty (n, k) matrix, got shape {arr.shape}")
    return arr.max(axis=1)


def _histograms(trojan_outputs, clean_outputs, bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if bins < 2:
        raise InvalidArgumentError(f"bins must be >= 2, got {bins}")
    t_stat = max_probability_statistic(trojan_outputs)
    c_stat = max_probability_statistic(clean_outputs)
    k = np.asarray(trojan_outputs).shape[1]
    if np.asarray(clean_outputs).shape[1] != k:
        raise InvalidArgumentError("trojan and clean outputs have different widths")
    lo = 1.0 / k
    edges = np.linspace(lo, 1.0, bins + 1)
    t_counts, _ = np.histogram(np.clip(t_stat, lo, 1.0), bins=edges)
    c_counts, _ = np.histogram(np.clip(c_stat, lo, 1.0), bins=edges)
    return edges, t_counts / t_stat.size, c_counts / c_stat.size


def optimal_detector_estimate(trojan_outputs, clean_outputs, bins: int = 20) -> OptimalDetectorEstimate:
    """Per-cell b / (a + b) from histograms of the two output collections."""
    edges, a, b = _histograms(trojan_outputs, clean_outputs, bins)
    total = a + b
    values = np.full(bins, 0.5)
    populated = total > 0
    values[populated] = b[populated] / total[populated]
    return OptimalDetectorEstimate(edges=edges, trojan_density=a, clean_density=b, values=values)


def js_divergence(trojan_outputs, clean_outputs, bins: int = 20) -> float:
    """
    KL(p_T || m) + KL(p_C || m) with m = (p_T + p_C) / 2, from histograms.

    Lies in [0, 2 log 2]; empty cells contribute nothing.
    """
    _, p_t, p_c = _histograms(trojan_outputs, clean_outputs, bins)
    m = 0.5 * (p_t + p_c)
    return float(np.sum(rel_entr(p_t, m)) + np.sum(rel_entr(p_c, m)))


def detector_agreement(
    det: Detector,
    estimate: OptimalDetectorEstimate,
    trojan_outputs: np.ndarray,
    clean_outputs: np.ndarray
) -> float:
    """
    Mean |cell-average h_D - estimate| over populated cells, each cell
    weighted by its pooled mass (a + b) / 2.
    """
    pooled = np.concatenate([np.asarray(trojan_outputs, dtype=float), np.asarray(clean_outputs, dtype=float)])
    cells = estimate.cell_of(pooled)
    h = detector_outputs(det, pooled)
    mass = 0.5 * (estimate.trojan_density + estimate.clean_density)
    diffs, weights = [], []
    for c in np.flatnonzero(estimate.populated):
        in_cell = cells == c
        if np.any(in_cell):
            diffs.append(abs(float(np.mean(h[in_cell])) - float(estimate.values[c])))
            weights.append(float(mass[c]))
    if not diffs:
        raise InvalidArgumentError("no populated cells to compare")
    return float(np.average(diffs, weights=weights))


class MinMaxTrojan:
    """
    Runs the detector/generator game for a fixed clean model and poisoned set.

    Attributes:
        clean_model: Frozen reference model
        poisoned: Poisoned training data
        config: GameConfig
        eval_set: Dataset for the per-iteration accuracy columns
        logger: Named logger
    """

    def __init__(
        self,
        clean_model: Model,
        poisoned: PoisonedDataset,
        config: GameConfig,
        test_set: Optional[Dataset] = None,
        show_progress: bool = False,
        log_level: int = logging.INFO
    ):
        if clean_model.input_dim != poisoned.clean.dim:
            raise InvalidArgumentError(
                f"clean model expects {clean_model.input_dim} features, data has {poisoned.clean.dim}"
            )
        self.clean_model = clean_model
        self.poisoned = poisoned
        self.config = config
        self.eval_set = test_set if test_set is not None else subset(poisoned.clean, config.eval_samples)
        self.show_progress = show_progress
        self.mu, self.sigma = config.probe_statistics(poisoned.clean)
        self.logger = self._setup_logger(log_level)

    def _setup_logger(self, log_level: int) -> logging.Logger:
        return create_logger_with_colors(self.__class__.__name__, log_level)

    def _batch(self, streams: GameStreams, inputs: np.ndarray, targets: np.ndarray):
        return _draw_batch(streams, inputs, targets, self.config.batch_size)

    def _probes(self, streams: GameStreams) -> ProbeSet:
        return sample_probes(
            self.config.probe_count, self.clean_model.input_dim, self.mu, self.sigma,
            streams.next_seed(streams.probes)
        )

    def _iterations(self, desc: str):
        steps = range(1, self.config.itr + 1)
        return tqdm(steps, desc=desc, unit="itr") if self.show_progress else steps

    def train(self, init_trojan: Model) -> Tuple[Model, Detector, GameTrace]:
        """
        itr iterations of {fresh probes, detector step, generator step}.

        Raises:
            NumericError: a loss or the parameters stopped being finite; index
                is the 1-based iteration
        """
        cfg = self.config
        streams = game_streams(cfg.seed)
        det = init_detector(self.clean_model.num_classes, streams.next_seed(streams.detector), cfg.hidden)
        model = init_trojan
        inputs, targets = _poisoned_rows(self.poisoned, cfg.trojan_only)
        trace = GameTrace()

        self.logger.info(
            f"Starting min-max game: itr={cfg.itr}, gamma=({cfg.gamma1}, {cfg.gamma2}, {cfg.gamma3}), "
            f"probes={cfg.probe_count}, batch={cfg.batch_size}, mu={self.mu:.3f}, sigma={self.sigma:.3f}"
        )
        for it in self._iterations("mm-trojan"):
            probes = self._probes(streams)
            det, det_loss = _detector_step(det, self.clean_model, model, probes, cfg.gamma1)
            batch_inputs, batch_targets = self._batch(streams, inputs, targets)
            model, fool_loss, cls_loss = _generator_step(
                model, det, probes, batch_inputs, batch_targets, cfg.gamma2, cfg.gamma3
            )
            if not (math.isfinite(det_loss) and math.isfinite(fool_loss) and math.isfinite(cls_loss)) \
                    or not model.is_finite() or not det.network.is_finite():
                self.logger.error(f"Non-finite value at iteration {it}")
                raise NumericError("mm_trojan_train", it, "loss is not finite")

            record = self._record(it, det, model, probes, det_loss, fool_loss, cls_loss)
            trace.records.append(record)
            self.logger.debug(
                f"itr {it}: det_loss={det_loss:.4f} fool={fool_loss:.4f} cls={cls_loss:.4f} "
                f"hd_T={record.mean_hd_trojan:.3f} hd_C={record.mean_hd_clean:.3f} jsd={record.jsd:.4f}"
            )

        last = trace.records[-1]
        self.logger.info(
            f"Game finished: mean h_D on Trojan outputs {last.mean_hd_trojan:.3f}, "
            f"jsd {trace.records[0].jsd:.4f} -> {last.jsd:.4f}, acc_c={last.acc_c:.3f}, acc_t={last.acc_t:.3f}"
        )
        return model, det, trace

    def train_baseline(self, init_trojan: Model) -> Model:
        """The gamma2 = 0 path on the same batch schedule, without a detector."""
        return _baseline_schedule(init_trojan, self.poisoned, self.config, self.logger, self._iterations("baseline"))

    def _record(self, it, det, model, probes, det_loss, fool_loss, cls_loss) -> GameRecord:
        z_trojan = predict_proba(model, probes.inputs)
        z_clean = predict_proba(self.clean_model, probes.inputs)
        trigger = self.poisoned.trigger
        return GameRecord(
            iter=it,
            det_loss=det_loss,
            gen_fool_loss=fool_loss,
            cls_loss=cls_loss,
            mean_hd_trojan=float(np.mean(detector_outputs(det, z_trojan))),
            mean_hd_clean=float(np.mean(detector_outputs(det, z_clean))),
            jsd=js_divergence(z_trojan, z_clean, self.config.bins),
            acc_c=acc_clean(model, self.eval_set),
            acc_t=acc_trojan(model, self.eval_set, trigger)
        )


def mm_trojan_train(
    clean_model: Model,
    init_trojan: Model,
    poisoned: PoisonedDataset,
    cfg: GameConfig,
    test_set: Optional[Dataset] = None,
    log_level: int = logging.WARNING
) -> Tuple[Model, Detector, GameTrace]:
    """Functional entry point over MinMaxTrojan.train."""
    return MinMaxTrojan(clean_model, poisoned, cfg, test_set=test_set, log_level=log_level).train(init_trojan)


def baseline_trojan_train(
    init_trojan: Model,
    poisoned: PoisonedDataset,
    cfg: GameConfig,
    log_level: int = logging.WARNING
) -> Model:
    """
    Baseline Trojan: the generator schedule of mm_trojan_train with gamma2 = 0.

    Bit-identical to mm_trojan_train's model when that is run with gamma2 = 0
    and the same seed.
    """
    if init_trojan.input_dim != poisoned.clean.dim or init_trojan.num_classes != poisoned.clean.num_classes:
        raise InvalidArgumentError(
            f"model has layers {init_trojan.layer_dims}, data has {poisoned.clean.dim} features "
            f"and {poisoned.clean.num_classes} classes"
        )
    logger = create_logger_with_colors("BaselineTrojan", log_level)
    return _baseline_schedule(init_trojan, poisoned, cfg, logger, range(1, cfg.itr + 1))
