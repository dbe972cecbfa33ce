"""Constrained learning with primal-dual training on a small numpy autodiff core."""

from .constraints import ConstraintSpec, InvariancePair, RawSource, SampleSet
from .losses import KL, NLL
from .models import ModelSpec
from .solver import Objective, SolverConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConstraintSpec",
    "InvariancePair",
    "KL",
    "NLL",
    "ModelSpec",
    "Objective",
    "RawSource",
    "SampleSet",
    "SolverConfig",
    "train",
]
