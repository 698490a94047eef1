"""Augmentation, flatness and robustness toolkit for small numpy networks."""

from . import augment, duality, flatness, harness, linalg, robustness
from .augment import AugmentationConfig, apply, distance_samples, ecdf, psa_report, psa_score
from .data import Dataset, SyntheticSpec, make_synthetic
from .duality import (compensatory_input_radius, compensatory_param_radius, covering_report,
                      duality_residual, translate_input_to_param, translate_param_to_input)
from .flatness import FlatnessConfig, FlatnessReport, flatness_report
from .harness import ExperimentConfig, TrainConfig, run_experiment, train
from .io import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .nnet import EmpiricalRisk, Model, forward, jacobian_input, jacobian_params
from .robustness import AttackConfig, CorruptionSpec, mce, pgd_attack, robustness_report

__version__ = "0.1.0"
