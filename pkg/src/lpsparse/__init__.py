"""lp-constrained adversarial perturbations, their sparsity and smoothness, and the optimal p."""

__version__ = "0.1.0"

from .attacks import AttackConfig, afw_attack, evaluate_attack, l1_attack
from .calibration import calibrate_epsilon
from .data import Dataset, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .geometry import lmo_lp_box, lp_norm, project_l1_box
from .model import MlpModel, ConvModel, TrainConfig, adversarial_train, load_model, save_model, train
from .smoothness import smoothness_taylor, smoothness_tc
from .sparsity import gini, hoyer, l0_fraction
from .sweep import aggregate, beta_opt_and_set, default_grid, run_sweep

__all__ = [
    "AttackConfig", "afw_attack", "evaluate_attack", "l1_attack", "calibrate_epsilon", "Dataset",
    "SyntheticConfig", "generate_synthetic", "load_dataset", "save_dataset", "lmo_lp_box", "lp_norm",
    "project_l1_box", "MlpModel", "ConvModel", "TrainConfig", "adversarial_train", "load_model", "save_model",
    "train", "smoothness_taylor", "smoothness_tc", "gini", "hoyer", "l0_fraction", "aggregate",
    "beta_opt_and_set", "default_grid", "run_sweep",
]
