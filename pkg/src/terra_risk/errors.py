"""Exception hierarchy shared by every module."""


class TerraRiskError(Exception):
    """Base class for all package errors."""


class ParameterError(TerraRiskError, ValueError):
    """An argument is outside its valid domain."""


class GraphError(TerraRiskError, ValueError):
    """Two cells are not neighbours in the 8-connected grid."""


class FitError(TerraRiskError, RuntimeError):
    """A Gaussian-process covariance could not be factorized."""


class ConfigError(TerraRiskError, ValueError):
    """Experiment configuration is invalid or inconsistent."""


class DataError(TerraRiskError, ValueError):
    """Input data on disk or in memory is malformed."""
