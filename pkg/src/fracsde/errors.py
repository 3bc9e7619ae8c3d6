"""Exception types shared across the package."""


class FracSdeError(Exception):
    """Base class for all package errors."""


class ConfigError(FracSdeError):
    """Invalid configuration or command-line arguments."""


class DataError(FracSdeError):
    """Malformed or unusable input data (gaps, non-monotone time, NaNs)."""


class NumericError(FracSdeError):
    """Numerical failure: non-positive-definite matrix, degenerate fit, ..."""


class DomainExitError(NumericError):
    """A simulated or proposed path left the model's state domain."""

    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"path left the model domain at step {step} (value {value!r})")


class SamplerError(NumericError):
    """MCMC sampler failure, e.g. persistent near-zero acceptance."""


class NumericAccuracyWarning(UserWarning):
    """Result is returned but its accuracy is limited by the numerical method."""
