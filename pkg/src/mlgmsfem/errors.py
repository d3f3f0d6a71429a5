"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid grid, configuration file or command-line input."""


class NumericalError(RuntimeError):
    """A numerical kernel failed (non-convergence, singular local system)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DegenerateRegionError(NumericalError):
    """A region has no usable degrees of freedom (e.g. fully perforated)."""


class DegenerateWeightError(NumericalError):
    """The spectral weight matrix vanishes on the whole snapshot space."""


class ParameterError(ValueError):
    """Cost-model parameters violate the stated assumptions."""
