"""
Evaluation metrics for trojanforge

- Acc-C: accuracy on the clean test set
- Acc-T: rate at which triggered test inputs land on the target class
- Evasion of detection: fraction of probe batches in which the detector does
  not flag the model
- Detector confusion: mean detector verdicts for a clean and a Trojan model
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .data import Dataset, ProbeSet, TriggerSpec, embed_trigger_batch, sample_probes
    from .errors import InvalidArgumentError
    from .nn_core import Model, predict_classes, predict_proba
    from .utils import export_to_csv
except ImportError:
    from data import Dataset, ProbeSet, TriggerSpec, embed_trigger_batch, sample_probes
    from errors import InvalidArgumentError
    from nn_core import Model, predict_classes, predict_proba
    from utils import export_to_csv

if TYPE_CHECKING:
    from .minmax_game import Detector


MODEL_TAGS = ("clean", "baseline_trojan", "mm_trojan")
EVAL_FIELDS = ["model_tag", "acc_c", "acc_t", "evasion", "mean_trojan_prob"]
FLAG_THRESHOLD = 0.5
CLEAN_ACC_T_NOTE = (
    "acc_t of the clean model is measured on triggered inputs; "
    "result tables conventionally report 0 because a clean model carries no trigger"
)


def _check_test_set(model: Model, test: Dataset) -> None:
    if len(test) == 0:
        raise InvalidArgumentError("test set must not be empty")
    if model.input_dim != test.dim:
        raise InvalidArgumentError(f"model expects {model.input_dim} features, test set has {test.dim}")


def acc_clean(model: Model, test: Dataset) -> float:
    """Fraction of test samples whose predicted class equals the label."""
    _check_test_set(model, test)
    predicted = predict_classes(predict_proba(model, test.samples))
    return float(np.mean(predicted == test.labels))


def acc_trojan(model: Model, test: Dataset, trigger: TriggerSpec) -> float:
    """Fraction of triggered test samples classified as the target class."""
    _check_test_set(model, test)
    predicted = predict_classes(predict_proba(model, embed_trigger_batch(test.samples, trigger)))
    return float(np.mean(predicted == trigger.target_class))


def trojan_probabilities(det: "Detector", model: Model, inputs: np.ndarray) -> np.ndarray:
    """Detector's Trojan verdict 1 - h_D for the model's output on each input."""
    return predict_proba(det.network, predict_proba(model, inputs))[:, 1]


def detection_summary(
    det: "Detector",
    model: Model,
    probe_batches: int,
    probes_per_batch: int,
    mu: float,
    sigma: float,
    seed: int
) -> Tuple[float, float]:
    """
    (evasion rate, mean Trojan probability) over seeded probe batches.

    A batch flags the model when its mean Trojan probability is strictly above
    0.5; evasion is the fraction of batches that do not.
    """
    if probe_batches < 1 or probes_per_batch < 1:
        raise InvalidArgumentError(
            f"probe_batches and probes_per_batch must be >= 1, got {probe_batches}, {probes_per_batch}"
        )
    rng = np.random.default_rng(seed)
    batch_means = []
    for _ in range(probe_batches):
        probes = sample_probes(probes_per_batch, model.input_dim, mu, sigma, int(rng.integers(0, 2 ** 63)))
        batch_means.append(float(np.mean(trojan_probabilities(det, model, probes.inputs))))
    flagged = sum(1 for m in batch_means if m > FLAG_THRESHOLD)
    return 1.0 - flagged / probe_batches, float(np.mean(batch_means))


def evasion_rate(
    det: "Detector",
    model: Model,
    probe_batches: int,
    probes_per_batch: int,
    mu: float,
    sigma: float,
    seed: int
) -> float:
    """Fraction of probe batches in which the detector does not flag the model."""
    return detection_summary(det, model, probe_batches, probes_per_batch, mu, sigma, seed)[0]


def detector_confusion(det: "Detector", clean_model: Model, trojan_model: Model, probes: ProbeSet) -> np.ndarray:
    """
    2x2 table of mean detector verdicts.

    Rows are the true source (clean, trojan); columns the verdict
    probabilities (clean, trojan). Each row sums to 1.
    """
    if len(probes) == 0:
        raise InvalidArgumentError("probe set must not be empty")
    rows = [
        predict_proba(det.network, predict_proba(m, probes.inputs)).mean(axis=0)
        for m in (clean_model, trojan_model)
    ]
    return np.vstack(rows)


@dataclass(frozen=True)
class EvalReport:
    """One row of the model comparison table; detector columns may be absent."""

    model_tag: str
    acc_c: float
    acc_t: float
    evasion: Optional[float] = None
    detector_mean_trojan_prob: Optional[float] = None

    def __post_init__(self):
        if self.model_tag not in MODEL_TAGS:
            raise InvalidArgumentError(f"model_tag must be one of {MODEL_TAGS}, got {self.model_tag!r}")
        for name in ("acc_c", "acc_t", "evasion", "detector_mean_trojan_prob"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")

    def row(self) -> dict:
        return {
            "model_tag": self.model_tag,
            "acc_c": self.acc_c,
            "acc_t": self.acc_t,
            "evasion": self.evasion,
            "mean_trojan_prob": self.detector_mean_trojan_prob,
        }


def evaluate_model(
    tag: str,
    model: Model,
    test: Dataset,
    trigger: Optional[TriggerSpec],
    detector: Optional["Detector"] = None,
    probe_batches: int = 20,
    probes_per_batch: int = 128,
    mu: float = 0.5,
    sigma: float = 0.5,
    seed: int = 0
) -> EvalReport:
    """
    Build an EvalReport for one model.

    Without a trigger the clean model gets acc_t = 0 by convention; Trojan
    models always need one. Detector columns are filled only when a detector
    is given.
    """
    if trigger is None:
        if tag != "clean":
            raise InvalidArgumentError(f"a trigger is required to evaluate a {tag} model")
        acc_t = 0.0
    else:
        acc_t = acc_trojan(model, test, trigger)

    evasion = mean_prob = None
    if detector is not None:
        evasion, mean_prob = detection_summary(detector, model, probe_batches, probes_per_batch, mu, sigma, seed)

    return EvalReport(
        model_tag=tag,
        acc_c=acc_clean(model, test),
        acc_t=acc_t,
        evasion=evasion,
        detector_mean_trojan_prob=mean_prob
    )


def export_reports(reports: Sequence[EvalReport], filepath, comments: Sequence[str] = (), measured_clean_acc_t: bool = True):
    """Write EvalReport rows; adds the clean-model acc_t note when it applies."""
    notes: List[str] = list(comments)
    if measured_clean_acc_t and any(r.model_tag == "clean" for r in reports):
        notes.append(CLEAN_ACC_T_NOTE)
    return export_to_csv([r.row() for r in reports], filepath, EVAL_FIELDS, notes)
