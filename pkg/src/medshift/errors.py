"""Exception types. CLI exit codes map onto the two families below."""


class MedshiftError(Exception):
    exit_code = 2


class ConfigError(MedshiftError, ValueError):
    """Bad configuration or input data (exit code 1)."""

    exit_code = 1


class EstimationError(MedshiftError):
    """Numerical or estimation failure (exit code 2)."""


class PositivityError(EstimationError):
    """An intervention or ratio needs mass where the treatment density has none."""


class IRLSConvergenceError(EstimationError):
    def __init__(self, message, coef=None, score_norm=None, submodel=None):
        super().__init__(message)
        self.coef = coef
        self.score_norm = score_norm
        self.submodel = submodel
