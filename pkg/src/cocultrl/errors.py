"""Exception types raised across the package."""


class NonFiniteState(FloatingPointError):
    """Integration produced a NaN or infinite state component."""


class LengthMismatch(ValueError):
    """A trajectory does not hold the expected number of scored states."""


class BatchDegenerate(RuntimeError):
    """Too many episodes in a Monte Carlo batch failed."""


class ConfigInvalid(ValueError):
    """An experiment configuration failed validation.

    ``field`` names the offending dotted config key when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ArchitectureMismatch(ValueError):
    """A checkpoint's architecture header does not match the policy config."""


class ManifestMissing(FileNotFoundError):
    """A run manifest needed for comparison could not be found."""


class OutputDirLocked(RuntimeError):
    """Another run holds the lock on the output directory."""
