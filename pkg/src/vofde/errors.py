"""Exception types shared across the toolkit."""


class VofdeError(Exception):
    """Base class for all toolkit errors."""


class DomainError(VofdeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(VofdeError, ValueError):
    """Operands have incompatible shapes."""


class NumericError(VofdeError, ArithmeticError):
    """A computation failed to produce a usable finite result."""


class DivergenceError(NumericError):
    """A solver state turned non-finite. Carries the failing step index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class FormatError(VofdeError, ValueError):
    """An input file violates its declared format."""


class ConfigError(VofdeError, ValueError):
    """A run configuration failed validation."""


class OptimizerError(VofdeError, RuntimeError):
    """The optimizer received non-finite gradients or state."""


class TrainingError(VofdeError, RuntimeError):
    """A training loop aborted. Carries the reports collected so far."""

    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)
