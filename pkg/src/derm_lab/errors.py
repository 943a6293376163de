"""Error taxonomy shared by every module in the package.

All failures raised by this package derive from DermError so callers can
catch one base type at the boundary (the CLI maps them to exit codes).
"""


class DermError(Exception):
    """Base class for all package errors."""


class DimensionError(DermError):
    """Array shape or dimension mismatch."""


class ContractError(DermError):
    """A documented precondition was violated (bad range, wrong tag, ...)."""


class ConfigError(DermError):
    """Invalid run configuration (CLI / JSON level)."""


class ModelError(DermError):
    """Invalid model parameters (negative vol, non-PSD correlation, ...)."""


class MeasureError(DermError):
    """A batch simulated under the wrong measure was fed to an operation
    that requires risk-neutral paths (e.g. evaluating prices on tilted paths)."""


class SolverError(DermError):
    """A numerical solver (FD, quadrature, regression) failed to converge."""


class DomainError(DermError):
    """Input outside the mathematical domain of a formula."""


class TrainingError(DermError):
    """Non-finite loss or gradient during training.

    Carries the iteration index at which the failure occurred.
    """

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class RolloutError(DermError):
    """Non-finite wealth during a hedging rollout.

    Carries the index of the first offending path.
    """

    def __init__(self, message: str, path_index: int | None = None):
        if path_index is not None:
            message = f"{message} (path {path_index})"
        super().__init__(message)
        self.path_index = path_index
