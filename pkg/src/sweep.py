"""
Alpha-grid sweep for trojanforge - concurrent retraining per poisoning ratio

For every alpha on a grid a fresh model is trained on the dataset poisoned at
that alpha, then the split adversary loss, its upper bound and both
accuracies are recorded. Points are independent: they run on a thread pool,
each with a seed derived from its grid position, and the results are put
back in grid order so the exported curve does not depend on scheduling.
"""

import logging
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from tqdm import tqdm

try:
    from .data import Dataset, TriggerSpec, poison_dataset
    from .errors import DegenerateAlphaError, InvalidArgumentError, TrojanForgeError
    from .metrics import acc_clean, acc_trojan
    from .nn_core import TrainConfig, init_model, train_model
    from .poison_opt import bound_terms, knee_alpha, loss_split
    from .utils import create_logger_with_colors, derive_seed, export_to_csv
except ImportError:
    from data import Dataset, TriggerSpec, poison_dataset
    from errors import DegenerateAlphaError, InvalidArgumentError, TrojanForgeError
    from metrics import acc_clean, acc_trojan
    from nn_core import TrainConfig, init_model, train_model
    from poison_opt import bound_terms, knee_alpha, loss_split
    from utils import create_logger_with_colors, derive_seed, export_to_csv


SWEEP_FIELDS = ["alpha", "n_trojan", "trojan_term", "clean_term", "total", "fbar", "acc_c", "acc_t"]


@dataclass
class SweepResult:
    """Outcome of one grid point."""

    index: int
    alpha: float
    success: bool

    n_trojan: Optional[int] = None
    trojan_term: Optional[float] = None
    clean_term: Optional[float] = None
    total: Optional[float] = None
    fbar: Optional[float] = None
    acc_c: Optional[float] = None
    acc_t: Optional[float] = None

    error_type: Optional[str] = None
    error_message: Optional[str] = None
    processed_by_thread: Optional[str] = None

    def row(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in SWEEP_FIELDS}


@dataclass
class SweepJobState:
    """All grid points of one sweep with their results."""

    job_id: str
    grid: List[float] = field(default_factory=list)
    results: List[SweepResult] = field(default_factory=list)
    workers: int = 1

    @property
    def successful(self) -> List[SweepResult]:
        return [r for r in self.results if r.success]

    @property
    def skipped(self) -> List[SweepResult]:
        return [r for r in self.results if not r.success]


class AlphaSweepProcessor:
    """
    Runs the per-alpha retraining sweep.

    Attributes:
        clean: Training data D_C
        test: Data for Acc-C / Acc-T
        trigger: Trigger to embed
        train_config: Epoch budget, learning rate and batch size of every point
        hidden_dims: Hidden layer sizes of the retrained models
        seed: Base seed; point i uses seeds derived from (seed, i)
        logger: Logger instance
    """

    def __init__(
        self,
        clean: Dataset,
        test: Dataset,
        trigger: TriggerSpec,
        train_config: TrainConfig,
        hidden_dims: Sequence[int] = (64,),
        seed: int = 0,
        log_level: int = logging.INFO
    ):
        self.clean = clean
        self.test = test
        self.trigger = trigger
        self.train_config = train_config
        self.layer_dims = [clean.dim] + [int(h) for h in hidden_dims] + [clean.num_classes]
        self.seed = seed
        self.logger = self._setup_logger(log_level)

    def _setup_logger(self, log_level: int) -> logging.Logger:
        return create_logger_with_colors(self.__class__.__name__, log_level)

    def _process_single_alpha(self, index: int, alpha: float) -> SweepResult:
        """Poison, retrain and measure one grid point; failures are recorded, not raised."""
        result = SweepResult(index=index, alpha=float(alpha), success=False)
        result.processed_by_thread = threading.current_thread().name

        try:
            poisoned = poison_dataset(self.clean, alpha, self.trigger, derive_seed(self.seed, "sweep-poison", index))
            inputs, targets = poisoned.training_targets()
            model = init_model(self.layer_dims, derive_seed(self.seed, "sweep-init", index))
            config = TrainConfig(
                lr=self.train_config.lr,
                epochs=self.train_config.epochs,
                batch_size=self.train_config.batch_size,
                seed=derive_seed(self.seed, "sweep-batches", index)
            )
            model = train_model(
                model, inputs, targets, config, stage=f"sweep alpha={alpha}",
                sample_weights=poisoned.training_weights()
            )

            split = loss_split(model, poisoned)
            result.n_trojan = poisoned.n_trojan
            result.trojan_term = split.trojan_term
            result.clean_term = split.clean_term
            result.total = split.total
            result.fbar = bound_terms(model, self.clean, self.trigger).value(alpha)
            result.acc_c = acc_clean(model, self.test)
            result.acc_t = acc_trojan(model, self.test, self.trigger)
            result.success = True
            self.logger.debug(
                f"alpha={alpha:.4f}: F_T={split.total:.4f} acc_c={result.acc_c:.3f} acc_t={result.acc_t:.3f}"
            )

        except DegenerateAlphaError as e:
            result.error_type = "degenerate_alpha"
            result.error_message = str(e)
            self.logger.warning(f"Skipping alpha={alpha}: {e}")
        except TrojanForgeError as e:
            result.error_type = type(e).__name__
            result.error_message = str(e)
            self.logger.error(f"Grid point alpha={alpha} failed: {e}")

        return result

    def process_grid(
        self,
        grid: Sequence[float],
        workers: int = 1,
        job_id: str = "alpha_sweep",
        show_progress: bool = False
    ) -> SweepJobState:
        """
        Run every grid point and return them in grid order.

        Args:
            grid: Poisoning ratios in (0, 1)
            workers: Thread pool size
            job_id: Label for logs and reports
            show_progress: Show a tqdm bar

        Returns:
            SweepJobState with one result per grid point
        """
        alphas = [float(a) for a in grid]
        if not alphas:
            raise InvalidArgumentError("alpha grid must not be empty")
        if any(not 0.0 < a < 1.0 for a in alphas):
            raise InvalidArgumentError("alpha grid must lie inside (0,1)")
        if workers < 1:
            raise InvalidArgumentError(f"workers must be >= 1, got {workers}")

        job_state = SweepJobState(job_id=job_id, grid=alphas, workers=workers)
        self.logger.info(f"Starting sweep '{job_id}' over {len(alphas)} alphas with {workers} workers")

        progress_bar = tqdm(total=len(alphas), desc=job_id, unit="alpha") if show_progress else None
        results: List[SweepResult] = []
        try:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(self._process_single_alpha, i, a) for i, a in enumerate(alphas)]
                for future in as_completed(futures):
                    results.append(future.result())
                    if progress_bar:
                        progress_bar.update(1)
        finally:
            if progress_bar:
                progress_bar.close()

        job_state.results = sorted(results, key=lambda r: r.index)
        self.logger.info(
            f"Sweep '{job_id}' completed: {len(job_state.successful)} points, "
            f"{len(job_state.skipped)} skipped"
        )
        return job_state

    def export_to_csv(self, job_state: SweepJobState, filepath: Union[str, Path], comments: Sequence[str] = ()) -> Path:
        """Loss/accuracy curve of the successful points."""
        return export_to_csv([r.row() for r in job_state.successful], filepath, SWEEP_FIELDS, comments)

    def generate_summary_report(self, job_state: SweepJobState, knee_tolerance: float = 0.05) -> Dict[str, Any]:
        """
        Summary of a sweep.

        Returns:
            Dictionary with point counts, the alpha of lowest total loss, the
            knee of the Trojan-term curve and skipped-point reasons
        """
        done = job_state.successful
        if not done:
            return {'job_id': job_state.job_id, 'message': 'No successful grid points'}

        best = min(done, key=lambda r: r.total)
        return {
            'job_id': job_state.job_id,
            'points': len(job_state.grid),
            'successful': len(done),
            'skipped': len(job_state.skipped),
            'best_alpha': best.alpha,
            'best_total': best.total,
            'knee_alpha': knee_alpha([(r.alpha, r.trojan_term) for r in done], knee_tolerance),
            'max_acc_t': max(r.acc_t for r in done),
            'error_types': dict(Counter(r.error_type for r in job_state.skipped)),
        }

    def print_summary_report(self, job_state: SweepJobState) -> None:
        report = self.generate_summary_report(job_state)
        print("\n" + "=" * 60)
        print(f"ALPHA SWEEP SUMMARY - {report['job_id']}")
        print("=" * 60)
        if 'message' in report:
            print(f"  {report['message']}")
        else:
            print(f"  Points: {report['points']} ({report['successful']} ok, {report['skipped']} skipped)")
            print(f"  Lowest F_T at alpha = {report['best_alpha']:.4f} ({report['best_total']:.4f})")
            print(f"  Trojan-term knee at alpha = {report['knee_alpha']:.4f}")
            print(f"  Best Acc-T: {report['max_acc_t']:.3f}")
        print("=" * 60)


def alpha_sweep(
    clean: Dataset,
    test: Dataset,
    trigger: TriggerSpec,
    grid: Sequence[float],
    train_config: TrainConfig,
    hidden_dims: Sequence[int] = (64,),
    seed: int = 0,
    workers: int = 1,
    log_level: int = logging.WARNING
) -> List[SweepResult]:
    """Convenience wrapper returning the successful points in grid order."""
    processor = AlphaSweepProcessor(clean, test, trigger, train_config, hidden_dims, seed, log_level)
    return processor.process_grid(grid, workers=workers).successful
