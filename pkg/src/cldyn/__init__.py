"""Continual learning of dynamical systems with Bayesian state-space models
and an episodic mode memory under a stick-breaking prior."""

__version__ = "0.1.0"

from .continual import VARIANTS, VariantSpec, make_variant, run_continual
from .datagen import TaskDataset, build_synthetic_suite, load_suite
from .estimators import BSSMForecaster, CDDPForecaster, load_checkpoint
from .metrics import LearningCurve, auc, evaluate, nll, nmse

__all__ = [
    "BSSMForecaster", "CDDPForecaster", "LearningCurve", "TaskDataset", "VARIANTS",
    "VariantSpec", "auc", "build_synthetic_suite", "evaluate", "load_checkpoint", "load_suite",
    "make_variant", "nll", "nmse", "run_continual",
]
