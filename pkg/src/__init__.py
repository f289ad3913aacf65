"""
trojanforge - Trojan data-poisoning experiments on small numpy networks
"""

from .data import Dataset, PoisonedDataset, TriggerSpec, gen_synthetic, load_idx, poison_dataset, square_trigger
from .errors import ConfigError, DegenerateAlphaError, FormatError, InvalidArgumentError, NumericError, TrojanForgeError
from .metrics import EvalReport, acc_clean, acc_trojan, evasion_rate
from .minmax_game import Detector, GameConfig, MinMaxTrojan, baseline_trojan_train, mm_trojan_train
from .nn_core import Model, TrainConfig, init_model, train_model
from .poison_opt import SubmodularTrojan, alternate_optimize, grad_alpha, submodular_search, upper_bound
from .sweep import AlphaSweepProcessor, alpha_sweep

__version__ = "1.0.0"
__all__ = [
    "Dataset", "PoisonedDataset", "TriggerSpec", "gen_synthetic", "load_idx", "poison_dataset", "square_trigger",
    "ConfigError", "DegenerateAlphaError", "FormatError", "InvalidArgumentError", "NumericError", "TrojanForgeError",
    "EvalReport", "acc_clean", "acc_trojan", "evasion_rate",
    "Detector", "GameConfig", "MinMaxTrojan", "baseline_trojan_train", "mm_trojan_train",
    "Model", "TrainConfig", "init_model", "train_model",
    "SubmodularTrojan", "alternate_optimize", "grad_alpha", "submodular_search", "upper_bound",
    "AlphaSweepProcessor", "alpha_sweep",
]
