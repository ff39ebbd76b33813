"""Stochastic-interventional direct and indirect effects with an intermediate confounder."""

from .data import Dataset, read_csv
from .errors import ConfigError, EstimationError, MedshiftError, PositivityError
from .intervene import IDENTITY, InterventionSpec, mtp_map, post_density
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "Dataset", "read_csv", "ConfigError", "EstimationError", "MedshiftError", "PositivityError",
    "IDENTITY", "InterventionSpec", "mtp_map", "post_density", "BACKEND", "__version__",
]
