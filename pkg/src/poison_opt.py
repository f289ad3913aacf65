"""
Poisoning-ratio optimization for trojanforge

The adversary loss F_T splits into a Trojan term (triggered samples scored
against the target class) and a clean term (clean samples scored against
their true labels). Its smooth upper bound

    F̄_T(alpha) = A / alpha + B / (1 - alpha)

uses A and B, the per-sample cross-entropies of the triggered and clean views
averaged over the whole dataset. A and B do not depend on alpha, so one pass
over the data gives the bound, its derivatives and its minimizer in closed
form. F̄_T is convex (supermodular) in alpha, which is what the greedy search
and its (1 - 1/e) certificate rely on.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

try:
    from .data import Dataset, PoisonedDataset, TriggerSpec, embed_trigger_batch, poison_dataset, trojan_count
    from .errors import InvalidArgumentError, NumericError
    from .nn_core import Model, TrainConfig, cross_entropy_batch, init_model, predict_proba, train_model
    from .utils import create_logger_with_colors, derive_seed, export_to_csv, relative_error
except ImportError:
    from data import Dataset, PoisonedDataset, TriggerSpec, embed_trigger_batch, poison_dataset, trojan_count
    from errors import InvalidArgumentError, NumericError
    from nn_core import Model, TrainConfig, cross_entropy_batch, init_model, predict_proba, train_model
    from utils import create_logger_with_colors, derive_seed, export_to_csv, relative_error


DEFAULT_GAMMA = 0.002
SUPERMODULARITY_TOLERANCE = 1e-8
SECOND_DERIVATIVE_RTOL = 1e-3

GREEDY_TRACE_FIELDS = ["t", "alpha", "gamma_t", "v_t", "c_t", "fbar"]
CERTIFICATE_FIELDS = ["alpha_star", "lambda", "beta", "achieved", "bound", "holds"]


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha out of range (0,1): {alpha}")
    return float(alpha)


@dataclass(frozen=True)
class LossSplit:
    """F_T with its Trojan and clean terms."""

    total: float
    trojan_term: float
    clean_term: float


@dataclass(frozen=True)
class BoundTerms:
    """
    Alpha-independent constants of F̄_T.

    trojan_mean (A) is the mean cross-entropy of every sample's triggered copy
    against the target class; clean_mean (B) is the mean cross-entropy of
    every clean sample against its own label. Both are >= 0.
    """

    trojan_mean: float
    clean_mean: float
    n: int

    def value(self, alpha: float) -> float:
        a = _check_alpha(alpha)
        return self.trojan_mean / a + self.clean_mean / (1.0 - a)

    def gradient(self, alpha: float) -> float:
        a = _check_alpha(alpha)
        return -self.trojan_mean / a ** 2 + self.clean_mean / (1.0 - a) ** 2

    def second_derivative(self, alpha: float) -> float:
        a = _check_alpha(alpha)
        return 2.0 * self.trojan_mean / a ** 3 + 2.0 * self.clean_mean / (1.0 - a) ** 3

    def minimizer(self) -> Optional[float]:
        """argmin of F̄_T over (0, 1); None when both constants are zero."""
        root_a = math.sqrt(self.trojan_mean)
        root_b = math.sqrt(self.clean_mean)
        if root_a + root_b == 0.0:
            return None
        return root_a / (root_a + root_b)


class AlphaObjective(Protocol):
    """Anything the greedy search can query for F̄_T and dF̄_T/dalpha."""

    def value(self, alpha: float) -> float: ...

    def gradient(self, alpha: float) -> float: ...


def _per_sample_losses(model: Model, clean: Dataset, trigger: TriggerSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Cross-entropy of every triggered copy (vs Y_T) and every clean sample (vs its label)."""
    if len(clean) == 0:
        raise InvalidArgumentError("dataset must not be empty")
    if model.input_dim != clean.dim or trigger.dim != clean.dim:
        raise InvalidArgumentError(
            f"model expects {model.input_dim} features, trigger has {trigger.dim}, data has {clean.dim}"
        )
    if model.num_classes != clean.num_classes:
        raise InvalidArgumentError(
            f"model has {model.num_classes} outputs, dataset has {clean.num_classes} classes"
        )
    k = clean.num_classes
    triggered = embed_trigger_batch(clean.samples, trigger)
    target_rows = np.tile(trigger.target(k), (len(clean), 1))
    trojan_losses = cross_entropy_batch(target_rows, predict_proba(model, triggered))
    clean_losses = cross_entropy_batch(clean.targets(), predict_proba(model, clean.samples))
    return trojan_losses, clean_losses


def bound_terms(model: Model, clean: Dataset, trigger: TriggerSpec) -> BoundTerms:
    """One pass over the data computing the constants A and B of F̄_T."""
    trojan_losses, clean_losses = _per_sample_losses(model, clean, trigger)
    return BoundTerms(
        trojan_mean=float(np.mean(trojan_losses)),
        clean_mean=float(np.mean(clean_losses)),
        n=len(clean)
    )


def loss_split(model: Model, poisoned: PoisonedDataset) -> LossSplit:
    """
    Adversary loss F_T at the poisoned dataset's alpha.

    The Trojan term sums over the floor(alpha N) triggered samples and is
    normalized by alpha N; the clean term sums over the remaining
    ceil((1 - alpha) N) samples and is normalized by (1 - alpha) N.

    Raises:
        DegenerateAlphaError: no sample carries the trigger
    """
    clean = poisoned.clean
    alpha = _check_alpha(poisoned.alpha)
    n = len(clean)
    if poisoned.n_trojan != trojan_count(alpha, n):
        raise InvalidArgumentError(
            f"poisoned set holds {poisoned.n_trojan} Trojan samples, expected floor(alpha N) = {trojan_count(alpha, n)}"
        )

    k = clean.num_classes
    trojan_probs = predict_proba(model, poisoned.trojan_inputs())
    trojan_sum = float(np.sum(cross_entropy_batch(np.tile(poisoned.trigger.target(k), (poisoned.n_trojan, 1)), trojan_probs)))

    keep = poisoned.clean_indices()
    clean_probs = predict_proba(model, clean.samples[keep])
    clean_sum = float(np.sum(cross_entropy_batch(clean.targets()[keep], clean_probs)))

    trojan_term = trojan_sum / (alpha * n)
    clean_term = clean_sum / ((1.0 - alpha) * n)
    return LossSplit(total=trojan_term + clean_term, trojan_term=trojan_term, clean_term=clean_term)


def upper_bound(model: Model, clean: Dataset, trigger: TriggerSpec, alpha: float) -> float:
    """
    F̄_T(theta, alpha), with both sums extended over all N samples.

    Examples:
        A model with uniform output over k classes gives
        (1 / alpha + 1 / (1 - alpha)) * log k.
    """
    _check_alpha(alpha)
    return bound_terms(model, clean, trigger).value(alpha)


def grad_alpha(model: Model, clean: Dataset, trigger: TriggerSpec, alpha: float) -> float:
    """Analytic dF̄_T/dalpha = -A / alpha^2 + B / (1 - alpha)^2."""
    _check_alpha(alpha)
    return bound_terms(model, clean, trigger).gradient(alpha)


@dataclass(frozen=True)
class GreedyStep:
    t: int
    alpha: float
    gamma_t: float
    v_t: float
    c_t: float
    fbar: float


@dataclass
class GreedyTrace:
    """Per-iteration record of the greedy search; alpha_0 is the starting ratio."""

    alpha_0: float
    steps: List[GreedyStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def rows(self) -> List[dict]:
        return [
            {"t": s.t, "alpha": s.alpha, "gamma_t": s.gamma_t, "v_t": s.v_t, "c_t": s.c_t, "fbar": s.fbar}
            for s in self.steps
        ]

    def export_csv(self, filepath, comments: Sequence[str] = ()):
        return export_to_csv(self.rows(), filepath, GREEDY_TRACE_FIELDS, comments)


def submodular_search(objective: AlphaObjective, gamma: float = DEFAULT_GAMMA) -> Tuple[float, GreedyTrace]:
    """
    Continuous-greedy (Frank-Wolfe) search for the poisoning ratio.

    Starting from alpha_0 = gamma and a zero step budget, every iteration picks
    the linear-oracle direction v in [0, 1 - alpha] (the full 1 - alpha when
    the bound is still decreasing, 0 otherwise), takes a step of size
    min(gamma, 1 - c) and spends it from the budget. The loop ends once the
    budget reaches 1, after ceil(1 / gamma) iterations, and returns the
    second-to-last iterate.

    Args:
        objective: Provides value(alpha) and gradient(alpha) of F̄_T
        gamma: Step size in (0, 1)

    Returns:
        (alpha, trace) with alpha in [gamma, 1)
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError(f"gamma out of range (0,1): {gamma}")

    iterates = [float(gamma)]
    trace = GreedyTrace(alpha_0=float(gamma))
    c = 0.0
    t = 0

    while c < 1.0:
        t += 1
        alpha = iterates[-1]
        v = (1.0 - alpha) if -objective.gradient(alpha) > 0.0 else 0.0
        gamma_t = min(gamma, 1.0 - c)
        iterates.append(alpha + gamma_t * v)
        c += gamma_t
        # accumulated float error must not add an extra iteration
        if 1.0 - c < 1e-12:
            c = 1.0
        trace.steps.append(GreedyStep(
            t=t, alpha=iterates[-1], gamma_t=gamma_t, v_t=v, c_t=c,
            fbar=objective.value(iterates[-1])
        ))

    return iterates[-2], trace


@dataclass(frozen=True)
class SupermodularityRow:
    alpha: float
    second_difference: float
    analytic: float
    numeric: float
    relative_error: float


@dataclass
class SupermodularityReport:
    """Grid second differences and analytic/numeric second-derivative agreement."""

    rows: List[SupermodularityRow]
    tolerance: float = SUPERMODULARITY_TOLERANCE
    rtol: float = SECOND_DERIVATIVE_RTOL

    @property
    def min_second_difference(self) -> float:
        return min(r.second_difference for r in self.rows)

    @property
    def max_relative_error(self) -> float:
        return max(r.relative_error for r in self.rows)

    @property
    def convex(self) -> bool:
        return all(r.second_difference >= -self.tolerance and r.analytic >= 0.0 for r in self.rows)

    @property
    def consistent(self) -> bool:
        return self.max_relative_error < self.rtol

    @property
    def passed(self) -> bool:
        return self.convex and self.consistent


def _check_grid(alphas: Sequence[float], min_points: int = 1) -> np.ndarray:
    grid = np.asarray(list(alphas), dtype=float)
    if grid.ndim != 1 or grid.size < min_points:
        raise InvalidArgumentError(f"alpha grid needs at least {min_points} points, got {grid.size}")
    if np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise InvalidArgumentError("alpha grid must lie inside (0,1)")
    return grid


def check_supermodularity_terms(
    terms: BoundTerms,
    alphas: Sequence[float],
    tolerance: float = SUPERMODULARITY_TOLERANCE
) -> SupermodularityReport:
    """Supermodularity check on precomputed bound constants."""
    grid = _check_grid(alphas, min_points=3)
    steps = np.diff(grid)
    if np.any(steps <= 0.0):
        raise InvalidArgumentError("alpha grid must be strictly increasing")
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
        raise InvalidArgumentError("alpha grid must be evenly spaced")

    values = [terms.value(a) for a in grid]
    rows = []
    for i in range(1, len(grid) - 1):
        alpha = float(grid[i])
        second_difference = values[i - 1] - 2.0 * values[i] + values[i + 1]
        analytic = terms.second_derivative(alpha)
        h = 1e-3 * min(alpha, 1.0 - alpha)
        numeric = (terms.value(alpha + h) - 2.0 * terms.value(alpha) + terms.value(alpha - h)) / (h * h)
        rows.append(SupermodularityRow(
            alpha=alpha,
            second_difference=second_difference,
            analytic=analytic,
            numeric=numeric,
            relative_error=relative_error(analytic, numeric)
        ))
    return SupermodularityReport(rows=rows, tolerance=tolerance)


def check_supermodularity(
    model: Model,
    clean: Dataset,
    trigger: TriggerSpec,
    alphas: Sequence[float],
    tolerance: float = SUPERMODULARITY_TOLERANCE
) -> SupermodularityReport:
    """
    Check convexity of F̄_T in alpha on an evenly spaced grid.

    Every interior grid point must have a second central difference of at
    least -tolerance and a non-negative analytic second derivative; the
    analytic value is cross-checked against a fine-step numeric one.
    """
    return check_supermodularity_terms(bound_terms(model, clean, trigger), alphas, tolerance)


@dataclass(frozen=True)
class BoundCertificate:
    """Greedy-search guarantee F̄_T(alpha*) <= lambda / e + (1 - 1/e) beta."""

    alpha_star: float
    lambda_: float
    beta: float
    achieved: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.achieved <= self.bound + 1e-12 * max(1.0, abs(self.bound))

    def row(self) -> dict:
        return {
            "alpha_star": self.alpha_star, "lambda": self.lambda_, "beta": self.beta,
            "achieved": self.achieved, "bound": self.bound, "holds": str(self.holds).lower()
        }


def certificate_from_terms(terms: AlphaObjective, alpha_star: float, grid: Sequence[float]) -> BoundCertificate:
    """Certificate over grid U {alpha_star}, so lambda <= achieved <= beta."""
    _check_alpha(alpha_star)
    points = np.append(_check_grid(grid), alpha_star)
    values = [terms.value(float(a)) for a in points]
    lam, beta = min(values), max(values)
    return BoundCertificate(
        alpha_star=float(alpha_star),
        lambda_=lam,
        beta=beta,
        achieved=terms.value(alpha_star),
        bound=math.exp(-1.0) * lam + (1.0 - math.exp(-1.0)) * beta
    )


def bound_certificate(
    model: Model,
    clean: Dataset,
    trigger: TriggerSpec,
    alpha_star: float,
    grid: Sequence[float]
) -> BoundCertificate:
    """lambda/beta are the min/max of F̄_T over the grid (alpha_star included)."""
    return certificate_from_terms(bound_terms(model, clean, trigger), alpha_star, grid)


def knee_alpha(rows: Sequence[Tuple[float, float]], tolerance: float = 0.05) -> float:
    """
    Smallest alpha after which the loss stops improving noticeably.

    Args:
        rows: (alpha, loss) pairs, any order
        tolerance: A step counts as an improvement when the loss drops by at
            least this fraction of its previous value

    Returns:
        The first alpha from which no later step is an improvement
    """
    if not rows:
        raise InvalidArgumentError("knee_alpha needs at least one (alpha, loss) pair")
    ordered = sorted((float(a), float(v)) for a, v in rows)
    improves = [
        (prev - cur) >= tolerance * max(abs(prev), 1e-12)
        for (_, prev), (_, cur) in zip(ordered[:-1], ordered[1:])
    ]
    knee = len(ordered) - 1
    while knee > 0 and not improves[knee - 1]:
        knee -= 1
    return ordered[knee][0]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    alpha: float
    trained_alpha: float
    fbar: float
    loss_total: float
    trojan_term: float
    clean_term: float


ROUND_FIELDS = ["round", "alpha", "trained_alpha", "fbar", "loss_total", "trojan_term", "clean_term"]


class SubmodularTrojan:
    """
    Alternates the greedy alpha search with retraining of the Trojan model.

    Each round fixes theta_T, searches alpha on F̄_T, then trains a freshly
    initialized model on the dataset poisoned at that alpha. The alternation
    stops after `rounds` rounds or as soon as alpha moves by less than gamma.
    """

    def __init__(
        self,
        clean: Dataset,
        trigger: TriggerSpec,
        train_config: TrainConfig,
        hidden_dims: Sequence[int] = (64,),
        gamma: float = DEFAULT_GAMMA,
        seed: int = 0,
        show_progress: bool = False,
        log_level: int = logging.INFO
    ):
        if not 0.0 < gamma < 1.0:
            raise InvalidArgumentError(f"gamma out of range (0,1): {gamma}")
        if len(clean) == 0:
            raise InvalidArgumentError("dataset must not be empty")
        self.clean = clean
        self.trigger = trigger
        self.train_config = train_config
        self.layer_dims = [clean.dim] + [int(h) for h in hidden_dims] + [clean.num_classes]
        self.gamma = float(gamma)
        self.seed = seed
        self.show_progress = show_progress
        self.logger = self._setup_logger(log_level)

        self.round_history: List[RoundRecord] = []
        self.last_trace: Optional[GreedyTrace] = None
        self.last_terms: Optional[BoundTerms] = None

    def _setup_logger(self, log_level: int) -> logging.Logger:
        return create_logger_with_colors(self.__class__.__name__, log_level)

    def trainable_alpha(self, alpha: float) -> float:
        """Raise alpha to 1/N when it would select no sample."""
        floor_alpha = 1.0 / len(self.clean)
        if trojan_count(alpha, len(self.clean)) == 0:
            self.logger.debug(f"alpha={alpha:.5f} selects no sample, training at {floor_alpha:.5f}")
            return floor_alpha
        return alpha

    def train_at(self, alpha: float, label: Union[int, str]) -> Tuple[Model, PoisonedDataset]:
        """Train a fresh model on F_T at alpha (D_p rows weighted by their loss term)."""
        poisoned = poison_dataset(self.clean, alpha, self.trigger, derive_seed(self.seed, "poison", label))
        inputs, targets = poisoned.training_targets()
        model = init_model(self.layer_dims, derive_seed(self.seed, "init", label))
        config = TrainConfig(
            lr=self.train_config.lr,
            epochs=self.train_config.epochs,
            batch_size=self.train_config.batch_size,
            seed=derive_seed(self.seed, "batches", label)
        )
        model = train_model(
            model, inputs, targets, config, show_progress=self.show_progress, stage=f"retrain {label}",
            sample_weights=poisoned.training_weights()
        )
        return model, poisoned

    def search(self, model: Model) -> Tuple[float, GreedyTrace, BoundTerms]:
        terms = bound_terms(model, self.clean, self.trigger)
        if not (math.isfinite(terms.trojan_mean) and math.isfinite(terms.clean_mean)):
            raise NumericError("submodular search", 0, "bound constants are not finite")
        alpha, trace = submodular_search(terms, self.gamma)
        self.last_trace, self.last_terms = trace, terms
        return alpha, trace, terms

    def run(self, rounds: int, initial_alpha: Optional[float] = None) -> Tuple[float, Model]:
        """
        Alternate search and retraining.

        Args:
            rounds: Maximum number of rounds (>= 1)
            initial_alpha: Ratio of the first Trojan model; defaults to gamma

        Returns:
            (alpha, model trained at that alpha)

        Raises:
            NumericError: training diverged; index is the round number
        """
        if rounds < 1:
            raise InvalidArgumentError(f"rounds must be >= 1, got {rounds}")
        alpha = _check_alpha(initial_alpha if initial_alpha is not None else self.gamma)
        self.round_history = []

        self.logger.info(
            f"Starting alternation: N={len(self.clean)}, layers={self.layer_dims}, "
            f"gamma={self.gamma}, rounds={rounds}"
        )
        try:
            model, _ = self.train_at(self.trainable_alpha(alpha), 0)
        except NumericError as e:
            self.logger.error(f"Initial training diverged: {e}")
            raise NumericError("alternate_optimize", 0, str(e)) from e

        for r in range(1, rounds + 1):
            new_alpha, trace, terms = self.search(model)
            trained_alpha = self.trainable_alpha(new_alpha)
            try:
                model, poisoned = self.train_at(trained_alpha, r)
            except NumericError as e:
                self.logger.error(f"Round {r} diverged: {e}")
                raise NumericError("alternate_optimize", r, str(e)) from e

            split = loss_split(model, poisoned)
            if not math.isfinite(split.total):
                raise NumericError("alternate_optimize", r, "loss is not finite")
            record = RoundRecord(
                round=r, alpha=new_alpha, trained_alpha=trained_alpha, fbar=terms.value(new_alpha),
                loss_total=split.total, trojan_term=split.trojan_term, clean_term=split.clean_term
            )
            self.round_history.append(record)
            self.logger.info(
                f"Round {r}: alpha={new_alpha:.4f} after {trace.iterations} greedy steps, "
                f"F_T={split.total:.4f} (trojan {split.trojan_term:.4f}, clean {split.clean_term:.4f})"
            )

            moved = abs(new_alpha - alpha)
            alpha = new_alpha
            if moved < self.gamma:
                self.logger.info(f"alpha moved by {moved:.5f} < gamma, stopping after round {r}")
                break

        return alpha, model

    def export_rounds(self, filepath, comments: Sequence[str] = ()):
        rows = [
            {name: getattr(rec, name) for name in ROUND_FIELDS}
            for rec in self.round_history
        ]
        return export_to_csv(rows, filepath, ROUND_FIELDS, comments)


def alternate_optimize(
    clean: Dataset,
    trigger: TriggerSpec,
    rounds: int,
    train_config: TrainConfig,
    gamma: float = DEFAULT_GAMMA,
    hidden_dims: Sequence[int] = (64,),
    seed: int = 0,
    log_level: int = logging.WARNING
) -> Tuple[float, Model]:
    """Functional entry point over SubmodularTrojan.run."""
    runner = SubmodularTrojan(
        clean, trigger, train_config, hidden_dims=hidden_dims, gamma=gamma, seed=seed, log_level=log_level
    )
    return runner.run(rounds)
