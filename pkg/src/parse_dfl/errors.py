"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid dimensions, options, or run configuration."""


class DegenerateInputError(ValueError):
    """Input is numerically unusable (near-zero norm, zero-probability event)."""


class DataParseError(ValueError):
    """A data or config file could not be parsed; carries location info."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class InfeasiblePartitionError(RuntimeError):
    """Dirichlet partition could not satisfy the minimum shard size within the retry cap."""


class TrainingDivergedError(RuntimeError):
    """A local loss became non-finite; the run aborts rather than clamping."""
