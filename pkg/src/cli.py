"""
Command-line harness for trojanforge

    trojanforge <subcommand> --config <path> [--out <dir>] [--seed <n>]

Sub-commands: train-clean, submodular-search, mm-trojan, evaluate, verify.
Every run writes resolved_config.txt plus CSV files named
`<subcommand>_<kind>_<timestamp>.csv`; each CSV starts with a
`# config_hash=...` comment line. File contents never include timestamps, so
rerunning a config reproduces them byte for byte.
"""

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .config import ExperimentConfig, parse_config
    from .data import (
        Dataset, TriggerSpec, gen_synthetic, load_idx, pixel_statistics, poison_dataset, sample_probes, subset,
        train_test_split, trojan_count
    )
    from .errors import ConfigError, TrojanForgeError
    from .gradcheck import check_model_gradient
    from .metrics import EvalReport, evaluate_model, export_reports
    from .minmax_game import (
        Detector, MinMaxTrojan, detector_agreement, detector_outputs, fooling_loss_and_gradients,
        init_detector, js_divergence, optimal_detector_estimate, train_detector
    )
    from .nn_core import Model, init_model, load_model, loss_and_gradients, predict_proba, save_model, train_model
    from .poison_opt import (
        CERTIFICATE_FIELDS, SubmodularTrojan, bound_terms, certificate_from_terms, check_supermodularity_terms,
        loss_split, submodular_search
    )
    from .sweep import AlphaSweepProcessor
    from .utils import create_logger_with_colors, derive_seed, export_to_csv, format_log_message, run_timestamp
except ImportError:
    from config import ExperimentConfig, parse_config
    from data import (
        Dataset, TriggerSpec, gen_synthetic, load_idx, pixel_statistics, poison_dataset, sample_probes, subset,
        train_test_split, trojan_count
    )
    from errors import ConfigError, TrojanForgeError
    from gradcheck import check_model_gradient
    from metrics import EvalReport, evaluate_model, export_reports
    from minmax_game import (
        Detector, MinMaxTrojan, detector_agreement, detector_outputs, fooling_loss_and_gradients,
        init_detector, js_divergence, optimal_detector_estimate, train_detector
    )
    from nn_core import Model, init_model, load_model, loss_and_gradients, predict_proba, save_model, train_model
    from poison_opt import (
        CERTIFICATE_FIELDS, SubmodularTrojan, bound_terms, certificate_from_terms, check_supermodularity_terms,
        loss_split, submodular_search
    )
    from sweep import AlphaSweepProcessor
    from utils import create_logger_with_colors, derive_seed, export_to_csv, format_log_message, run_timestamp


SUBCOMMANDS = ("train-clean", "submodular-search", "mm-trojan", "evaluate", "verify")
SEARCH_SUMMARY_FIELDS = ["alpha", "knee_alpha", "rounds", "greedy_iterations", "certificate_holds", "acc_c", "acc_t"]
EQUILIBRIUM_FIELDS = ["cell", "lower", "upper", "trojan_density", "clean_density", "hstar", "detector_mean"]
CHECK_FIELDS = ["check", "draws", "failures", "worst", "threshold", "passed"]
VERIFY_SAMPLES = 200


@dataclass
class CommandResult:
    """Files written by a sub-command and, for verify, its verdict."""

    paths: Dict[str, Path] = field(default_factory=dict)
    reports: List[EvalReport] = field(default_factory=list)
    passed: bool = True


class ExperimentHarness:
    """
    Shared plumbing of the sub-commands: output files, data, clean training.

    Attributes:
        config: Resolved configuration
        subcommand: Name used in output file names
        output_dir: Directory receiving every artifact
        logger: Logger instance
    """

    def __init__(self, config: ExperimentConfig, subcommand: str):
        self.config = config
        self.subcommand = subcommand
        self.output_dir = Path(config.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.timestamp = run_timestamp()
        self.config_hash = config.config_hash()
        self.logger = self._setup_logger(config.log_level_value)

    def _setup_logger(self, log_level: int) -> logging.Logger:
        return create_logger_with_colors("trojanforge", log_level)

    def csv_path(self, kind: str) -> Path:
        return self.output_dir / f"{self.subcommand}_{kind}_{self.timestamp}.csv"

    def comments(self) -> List[str]:
        return [f"config_hash={self.config_hash}", f"subcommand={self.subcommand}"]

    def write_resolved_config(self) -> Path:
        path = self.output_dir / "resolved_config.txt"
        path.write_text(self.config.resolved_text(), encoding="utf-8")
        self.logger.info(f"📁 Resolved config written to {path} (hash {self.config_hash})")
        return path

    def load_data(self) -> Tuple[Dataset, Dataset]:
        """(train, test) as configured."""
        cfg = self.config
        if cfg.dataset == "idx":
            train = subset(load_idx(cfg.train_images, cfg.train_labels), cfg.train_limit)
            test = subset(load_idx(cfg.test_images, cfg.test_labels, num_classes=train.num_classes), cfg.test_limit)
        else:
            blobs = gen_synthetic(
                cfg.synthetic_classes, cfg.synthetic_per_class, cfg.synthetic_dim,
                cfg.synthetic_separation, derive_seed(cfg.seed, "synthetic"), spread=cfg.synthetic_spread
            )
            train, test = train_test_split(blobs, cfg.test_fraction, derive_seed(cfg.seed, "split"))
        self.logger.info(f"Loaded {cfg.dataset} data: {len(train)} train / {len(test)} test, "
                         f"{train.dim} features, {train.num_classes} classes")
        return train, test

    def trigger_for(self, data: Dataset) -> TriggerSpec:
        if data.image_side is None:
            raise ConfigError(f"a square trigger needs square images; {data.dim} features is not a square")
        if self.config.target_class >= data.num_classes:
            raise ConfigError(
                f"target_class out of range [0,{data.num_classes}): {self.config.target_class}", key="target_class"
            )
        try:
            return self.config.trigger(data.image_side)
        except TrojanForgeError as e:
            raise ConfigError(str(e), key="trigger_size")

    def layer_dims(self, data: Dataset) -> List[int]:
        return [data.dim] + list(self.config.hidden_dims) + [data.num_classes]

    def train_clean(self, train: Dataset) -> Model:
        cfg = self.config
        model = init_model(self.layer_dims(train), derive_seed(cfg.seed, "clean-init"))
        return train_model(
            model, train.samples, train.targets(), cfg.train_config(seed=derive_seed(cfg.seed, "clean-batches")),
            stage="clean training"
        )

    def artifact(self, name: str) -> Path:
        return self.output_dir / name


def cmd_train_clean(cfg: ExperimentConfig) -> CommandResult:
    """Train the clean model and report its accuracies."""
    harness = ExperimentHarness(cfg, "train-clean")
    result = CommandResult()
    result.paths["resolved_config"] = harness.write_resolved_config()

    train, test = harness.load_data()
    trigger = harness.trigger_for(train)
    model = harness.train_clean(train)
    result.paths["clean_model"] = save_model(model, harness.artifact("clean_model.npz"))

    report = evaluate_model("clean", model, test, trigger)
    result.reports.append(report)
    result.paths["metrics"] = export_reports([report], harness.csv_path("metrics"), harness.comments())
    harness.logger.info(f"✅ Clean model: acc_c={report.acc_c:.4f}, acc_t={report.acc_t:.4f}")
    return result


def cmd_submodular_search(cfg: ExperimentConfig) -> CommandResult:
    """Greedy alpha search with retraining, certificate and loss-curve sweep."""
    harness = ExperimentHarness(cfg, "submodular-search")
    result = CommandResult()
    result.paths["resolved_config"] = harness.write_resolved_config()
    comments = harness.comments()

    train, test = harness.load_data()
    trigger = harness.trigger_for(train)
    clean_model = harness.train_clean(train)

    runner = SubmodularTrojan(
        train, trigger, cfg.train_config(), hidden_dims=cfg.hidden_dims, gamma=cfg.gamma,
        seed=cfg.seed, log_level=cfg.log_level_value
    )
    alpha, model = runner.run(cfg.rounds)
    result.paths["search_model"] = save_model(model, harness.artifact("search_model.npz"))
    result.paths["greedy"] = runner.last_trace.export_csv(harness.csv_path("greedy"), comments)
    result.paths["rounds"] = runner.export_rounds(harness.csv_path("rounds"), comments)

    certificate = certificate_from_terms(runner.last_terms, alpha, cfg.bound_grid())
    result.paths["certificate"] = export_to_csv([certificate.row()], harness.csv_path("certificate"), CERTIFICATE_FIELDS, comments)
    if certificate.holds:
        harness.logger.info(format_log_message(
            f"certificate: F̄_T(alpha*)={certificate.achieved:.4f} <= {certificate.bound:.4f}", "passed", color=False))
    else:
        harness.logger.warning(format_log_message(
            f"certificate: F̄_T(alpha*)={certificate.achieved:.4f} > {certificate.bound:.4f}", "failed", color=False))

    processor = AlphaSweepProcessor(
        train, test, trigger, cfg.train_config(), hidden_dims=cfg.hidden_dims, seed=cfg.seed,
        log_level=cfg.log_level_value
    )
    sweep_state = processor.process_grid(cfg.sweep_grid(), workers=cfg.workers, job_id="loss_curve")
    result.paths["loss_curve"] = processor.export_to_csv(sweep_state, harness.csv_path("loss_curve"), comments)
    summary = processor.generate_summary_report(sweep_state, cfg.knee_tolerance)

    clean_report = evaluate_model("clean", clean_model, test, trigger)
    trojan_report = evaluate_model("baseline_trojan", model, test, trigger)
    result.reports.extend([clean_report, trojan_report])
    result.paths["metrics"] = export_reports(result.reports, harness.csv_path("metrics"), comments)

    summary_row = {
        "alpha": alpha,
        "knee_alpha": summary.get("knee_alpha"),
        "rounds": len(runner.round_history),
        "greedy_iterations": runner.last_trace.iterations,
        "certificate_holds": str(certificate.holds).lower(),
        "acc_c": trojan_report.acc_c,
        "acc_t": trojan_report.acc_t,
    }
    result.paths["summary"] = export_to_csv([summary_row], harness.csv_path("summary"), SEARCH_SUMMARY_FIELDS, comments)
    harness.logger.info(
        f"✅ alpha={alpha:.4f} (knee {summary.get('knee_alpha')}), acc_c={trojan_report.acc_c:.4f} "
        f"(clean {clean_report.acc_c:.4f}), acc_t={trojan_report.acc_t:.4f}"
    )
    return result


def _equilibrium_rows(det: Detector, z_trojan: np.ndarray, z_clean: np.ndarray, bins: int) -> Tuple[List[dict], float]:
    estimate = optimal_detector_estimate(z_trojan, z_clean, bins)
    pooled = np.concatenate([z_trojan, z_clean])
    cells = estimate.cell_of(pooled)
    h = detector_outputs(det, pooled)
    rows = []
    for c in range(bins):
        in_cell = cells == c
        rows.append({
            "cell": c,
            "lower": float(estimate.edges[c]),
            "upper": float(estimate.edges[c + 1]),
            "trojan_density": float(estimate.trojan_density[c]),
            "clean_density": float(estimate.clean_density[c]),
            "hstar": float(estimate.values[c]),
            "detector_mean": float(np.mean(h[in_cell])) if np.any(in_cell) else None,
        })
    return rows, detector_agreement(det, estimate, z_trojan, z_clean)


def cmd_mm_trojan(cfg: ExperimentConfig) -> CommandResult:
    """Min-max game, Baseline Trojan contrast and the comparison table."""
    harness = ExperimentHarness(cfg, "mm-trojan")
    result = CommandResult()
    result.paths["resolved_config"] = harness.write_resolved_config()
    comments = harness.comments()

    train, test = harness.load_data()
    trigger = harness.trigger_for(train)
    clean_model = harness.train_clean(train)
    result.paths["clean_model"] = save_model(clean_model, harness.artifact("clean_model.npz"))

    poisoned = poison_dataset(train, cfg.alpha, trigger, derive_seed(cfg.seed, "mm-poison"))
    init_trojan = init_model(harness.layer_dims(train), derive_seed(cfg.seed, "mm-init"))
    game_cfg = cfg.game_config()
    runner = MinMaxTrojan(
        clean_model, poisoned, game_cfg, test_set=subset(test, cfg.eval_samples), log_level=cfg.log_level_value
    )
    trojan_model, det, trace = runner.train(init_trojan)
    baseline_model = runner.train_baseline(init_trojan)
    result.paths["trojan_model"] = save_model(trojan_model, harness.artifact("trojan_model.npz"))
    result.paths["baseline_model"] = save_model(baseline_model, harness.artifact("baseline_model.npz"))
    result.paths["detector"] = save_model(det.network, harness.artifact("detector.npz"))
    result.paths["trace"] = trace.export_csv(harness.csv_path("trace"), comments)

    mu, sigma = runner.mu, runner.sigma
    fresh = train_detector(
        init_detector(train.num_classes, derive_seed(cfg.seed, "fresh-detector"), cfg.detector_hidden),
        clean_model, baseline_model, cfg.detector_steps, cfg.gamma1, mu, sigma, cfg.probe_count,
        derive_seed(cfg.seed, "fresh-detector-probes")
    )

    evasion_args = dict(probe_batches=cfg.probe_batches, probes_per_batch=cfg.probe_count, mu=mu, sigma=sigma,
                        seed=derive_seed(cfg.seed, "evasion"))
    result.reports = [
        evaluate_model("clean", clean_model, test, trigger),
        evaluate_model("baseline_trojan", baseline_model, test, trigger, detector=fresh, **evasion_args),
        evaluate_model("mm_trojan", trojan_model, test, trigger, detector=det, **evasion_args),
    ]
    result.paths["metrics"] = export_reports(result.reports, harness.csv_path("metrics"), comments)

    probes = sample_probes(cfg.probe_count * cfg.probe_batches, train.dim, mu, sigma,
                           derive_seed(cfg.seed, "equilibrium"))
    rows, agreement = _equilibrium_rows(
        det, predict_proba(trojan_model, probes.inputs), predict_proba(clean_model, probes.inputs), cfg.bins
    )
    result.paths["equilibrium"] = export_to_csv(
        rows, harness.csv_path("equilibrium"), EQUILIBRIUM_FIELDS, comments + [f"detector_agreement={agreement!r}"]
    )

    for report in result.reports:
        harness.logger.info(
            f"{report.model_tag}: acc_c={report.acc_c:.4f} acc_t={report.acc_t:.4f} "
            f"evasion={report.evasion} mean_trojan_prob={report.detector_mean_trojan_prob}"
        )
    return result


def cmd_evaluate(
    cfg: ExperimentConfig,
    model_path: str,
    detector_path: Optional[str] = None,
    tag: str = "mm_trojan"
) -> CommandResult:
    """Re-evaluate a saved model (and optionally a saved detector)."""
    harness = ExperimentHarness(cfg, "evaluate")
    result = CommandResult()
    result.paths["resolved_config"] = harness.write_resolved_config()

    train, test = harness.load_data()
    trigger = harness.trigger_for(train)
    model = load_model(model_path)
    detector = Detector(load_model(detector_path)) if detector_path else None
    if model.input_dim != test.dim:
        raise ConfigError(f"model expects {model.input_dim} features, configured data has {test.dim}")

    pixel_mu, pixel_sigma = pixel_statistics(train)
    mu = cfg.probe_mu if cfg.probe_mu is not None else pixel_mu
    sigma = cfg.probe_sigma if cfg.probe_sigma is not None else pixel_sigma
    report = evaluate_model(
        tag, model, test, trigger, detector=detector, probe_batches=cfg.probe_batches,
        probes_per_batch=cfg.probe_count, mu=mu, sigma=sigma, seed=derive_seed(cfg.seed, "evasion")
    )
    result.reports.append(report)
    result.paths["metrics"] = export_reports([report], harness.csv_path("metrics"), harness.comments())
    harness.logger.info(f"✅ {tag}: acc_c={report.acc_c:.4f} acc_t={report.acc_t:.4f} evasion={report.evasion}")
    return result


@dataclass
class CheckResult:
    check: str
    draws: int
    failures: int
    worst: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def row(self) -> dict:
        return {"check": self.check, "draws": self.draws, "failures": self.failures,
                "worst": self.worst, "threshold": self.threshold, "passed": str(self.passed).lower()}


class PropertyVerifier:
    """Randomized property checks behind the verify sub-command."""

    def __init__(self, cfg: ExperimentConfig, train: Dataset, trigger: TriggerSpec, layer_dims: Sequence[int],
                 logger: logging.Logger):
        self.cfg = cfg
        self.data = subset(train, VERIFY_SAMPLES)
        self.full_train = train
        self.trigger = trigger
        self.layer_dims = list(layer_dims)
        self.logger = logger
        self.draws = cfg.verify_draws
        self.gradient_draws = min(cfg.verify_draws, 20)

    def _model(self, check: str, i: int) -> Model:
        return init_model(self.layer_dims, derive_seed(self.cfg.seed, "verify", check, i))

    def _rng(self, check: str) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.cfg.seed, "verify-rng", check))

    def upper_bound_dominance(self) -> CheckResult:
        rng = self._rng("dominance")
        n = len(self.data)
        failures, worst = 0, -math.inf
        for i in range(self.draws):
            model = self._model("dominance", i)
            alpha = float(rng.uniform(max(0.01, 1.0 / n), 0.99))
            if trojan_count(alpha, n) == 0:
                alpha = 1.0 / n
            poisoned = poison_dataset(self.data, alpha, self.trigger, derive_seed(self.cfg.seed, "verify-poison", i))
            gap = loss_split(model, poisoned).total - bound_terms(model, self.data, self.trigger).value(alpha)
            worst = max(worst, gap)
            failures += gap > 1e-12
        return CheckResult("upper_bound_dominance", self.draws, failures, worst, 0.0)

    def supermodularity(self) -> List[CheckResult]:
        convex_failures = consistent_failures = 0
        worst_diff, worst_rel = math.inf, 0.0
        for i in range(self.draws):
            report = check_supermodularity_terms(bound_terms(self._model("supermodular", i), self.data, self.trigger),
                                                 self.cfg.bound_grid())
            convex_failures += not report.convex
            consistent_failures += not report.consistent
            worst_diff = min(worst_diff, report.min_second_difference)
            worst_rel = max(worst_rel, report.max_relative_error)
        return [
            CheckResult("supermodularity", self.draws, convex_failures, worst_diff, -1e-8),
            CheckResult("second_derivative_agreement", self.draws, consistent_failures, worst_rel, 1e-3),
        ]

    def alpha_gradient(self) -> CheckResult:
        rng = self._rng("alpha-gradient")
        failures, worst = 0, 0.0
        h = 1e-4
        for i in range(self.draws):
            terms = bound_terms(self._model("alpha-gradient", i), self.data, self.trigger)
            alpha = float(rng.uniform(0.2, 0.8))
            numeric = (terms.value(alpha + h) - terms.value(alpha - h)) / (2.0 * h)
            scale = terms.trojan_mean / alpha ** 2 + terms.clean_mean / (1.0 - alpha) ** 2
            error = abs(numeric - terms.gradient(alpha)) / scale if scale > 0 else 0.0
            worst = max(worst, error)
            failures += error >= 1e-6
        return CheckResult("alpha_gradient", self.draws, failures, worst, 1e-6)

    def backprop_gradient(self) -> CheckResult:
        inputs = self.data.samples[:16]
        targets = self.data.targets()[:16]
        failures, worst = 0, 0.0
        for i in range(self.gradient_draws):
            model = self._model("backprop", i)
            _, grads = loss_and_gradients(model, inputs, targets)
            check = check_model_gradient(lambda m: loss_and_gradients(m, inputs, targets)[0], model, grads,
                                         max_entries=200, seed=i)
            worst = max(worst, check.relative_error)
            failures += check.relative_error >= 1e-4
        return CheckResult("backprop_gradient", self.gradient_draws, failures, worst, 1e-4)

    def detector_chain_gradient(self) -> CheckResult:
        failures, worst = 0, 0.0
        k = self.layer_dims[-1]
        for i in range(self.gradient_draws):
            model = self._model("chain", i)
            det = init_detector(k, derive_seed(self.cfg.seed, "verify-detector", i), self.cfg.detector_hidden)
            probes = sample_probes(16, self.data.dim, 0.5, 0.3, derive_seed(self.cfg.seed, "verify-probes", i))
            _, grads = fooling_loss_and_gradients(model, det, probes)
            check = check_model_gradient(lambda m: fooling_loss_and_gradients(m, det, probes)[0], model, grads,
                                         max_entries=200, seed=i)
            worst = max(worst, check.relative_error)
            failures += check.relative_error >= 1e-4
        return CheckResult("detector_chain_gradient", self.gradient_draws, failures, worst, 1e-4)

    def bound_certificate(self) -> CheckResult:
        failures, worst = 0, -math.inf
        for i in range(self.draws):
            terms = bound_terms(self._model("certificate", i), self.data, self.trigger)
            alpha, _ = submodular_search(terms, self.cfg.gamma)
            certificate = certificate_from_terms(terms, alpha, self.cfg.bound_grid())
            worst = max(worst, certificate.achieved - certificate.bound)
            failures += not certificate.holds
        return CheckResult("bound_certificate", self.draws, failures, worst, 0.0)

    def identical_divergence(self) -> List[CheckResult]:
        probes = sample_probes(10000, self.data.dim, 0.5, 0.3, derive_seed(self.cfg.seed, "verify-identical"))
        z = predict_proba(self._model("identical", 0), probes.inputs)
        divergence = js_divergence(z, z, self.cfg.bins)
        estimate = optimal_detector_estimate(z, z, self.cfg.bins)
        off_half = float(np.max(np.abs(estimate.values[estimate.populated] - 0.5)))
        return [
            CheckResult("identical_divergence", 1, int(divergence >= 0.01), divergence, 0.01),
            CheckResult("identical_optimal_detector", 1, int(off_half != 0.0), off_half, 0.0),
        ]

    def game_equilibrium(self) -> List[CheckResult]:
        cfg = self.cfg
        train = self.full_train
        clean_model = init_model(self.layer_dims, derive_seed(cfg.seed, "clean-init"))
        clean_model = train_model(clean_model, train.samples, train.targets(),
                                  cfg.train_config(seed=derive_seed(cfg.seed, "clean-batches")), stage="clean training")
        poisoned = poison_dataset(train, cfg.alpha, self.trigger, derive_seed(cfg.seed, "mm-poison"))
        runner = MinMaxTrojan(clean_model, poisoned, cfg.game_config(), log_level=self.logger.level)
        model, det, trace = runner.train(init_model(self.layer_dims, derive_seed(cfg.seed, "mm-init")))

        first, last = trace.records[0].jsd, trace.records[-1].jsd
        probes = sample_probes(cfg.probe_count * cfg.probe_batches, train.dim, runner.mu, runner.sigma,
                               derive_seed(cfg.seed, "equilibrium"))
        z_trojan = predict_proba(model, probes.inputs)
        z_clean = predict_proba(clean_model, probes.inputs)
        agreement = detector_agreement(det, optimal_detector_estimate(z_trojan, z_clean, cfg.bins), z_trojan, z_clean)
        return [
            CheckResult("divergence_trend", 1, int(not last < first), last - first, 0.0),
            CheckResult("optimal_detector_agreement", 1, int(agreement >= 0.1), agreement, 0.1),
        ]

    def run_all(self) -> List[CheckResult]:
        results = [self.upper_bound_dominance()]
        results.extend(self.supermodularity())
        results.append(self.alpha_gradient())
        results.append(self.backprop_gradient())
        results.append(self.detector_chain_gradient())
        results.append(self.bound_certificate())
        results.extend(self.identical_divergence())
        results.extend(self.game_equilibrium())
        return results


def cmd_verify(cfg: ExperimentConfig) -> CommandResult:
    """Run every property check; passed is True only if all of them pass."""
    harness = ExperimentHarness(cfg, "verify")
    result = CommandResult()
    result.paths["resolved_config"] = harness.write_resolved_config()

    train, _ = harness.load_data()
    trigger = harness.trigger_for(train)
    verifier = PropertyVerifier(cfg, train, trigger, harness.layer_dims(train), harness.logger)
    checks = verifier.run_all()

    for check in checks:
        level = "passed" if check.passed else "failed"
        harness.logger.info(format_log_message(
            f"{check.check}: {check.draws - check.failures}/{check.draws} (worst {check.worst:.3g})", level, color=False
        ))
    result.paths["checks"] = export_to_csv([c.row() for c in checks], harness.csv_path("checks"), CHECK_FIELDS,
                                           harness.comments())
    result.passed = all(c.passed for c in checks)
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trojanforge",
        description="Poisoning-ratio search and min-max Trojan training experiments"
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="Path to the key = value config file")
        sub.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
        sub.add_argument("--seed", type=int, default=None, help="Base seed (overrides seed)")
        if name == "evaluate":
            sub.add_argument("--model", required=True, help="Model artifact (.npz) to evaluate")
            sub.add_argument("--detector", default=None, help="Detector artifact (.npz) for the evasion columns")
            sub.add_argument("--tag", default="mm_trojan", choices=["clean", "baseline_trojan", "mm_trojan"])
    return parser


def run(args: argparse.Namespace) -> CommandResult:
    cfg = parse_config(args.config).with_overrides(output_dir=args.out, seed=args.seed)
    if args.subcommand == "train-clean":
        return cmd_train_clean(cfg)
    if args.subcommand == "submodular-search":
        return cmd_submodular_search(cfg)
    if args.subcommand == "mm-trojan":
        return cmd_mm_trojan(cfg)
    if args.subcommand == "evaluate":
        return cmd_evaluate(cfg, args.model, args.detector, args.tag)
    return cmd_verify(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 1 on a run failure, 2 on a config error."""
    args = build_parser().parse_args(argv)
    logger = create_logger_with_colors("trojanforge", logging.INFO)
    try:
        result = run(args)
    except ConfigError as e:
        logger.error(f"❌ Config error: {e}")
        return 2
    except TrojanForgeError as e:
        logger.error(f"❌ {args.subcommand} failed: {e}")
        return 1
    except OSError as e:
        logger.error(f"❌ {args.subcommand} failed: {e}")
        return 1

    if not result.passed:
        logger.error(f"❌ {args.subcommand}: one or more checks failed")
        return 1
    logger.info(f"🏁 {args.subcommand} finished; outputs in {Path(next(iter(result.paths.values()))).parent}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
