"""Exception taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """A config value is out of contract (bad resolution, negative weight, ...)."""


class InputError(ValueError):
    """A runtime input violates a precondition (shape mismatch, missing joint, ...)."""


class NumericError(RuntimeError):
    """A numerical routine failed (singular system, non-finite result)."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic report."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable, truncated, or version-incompatible."""
