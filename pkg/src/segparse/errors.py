"""Exception types shared across the package."""


class StructureError(ValueError):
    """A tree or corpus violates a structural invariant."""


class FormatError(ValueError):
    """Malformed input text; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


class CheckpointError(ValueError):
    """Checkpoint file missing, truncated, or carrying a bad magic string."""


class DivergenceError(RuntimeError):
    """Training produced non-finite loss or gradients."""
