"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """A run configuration is missing, inconsistent or points at nothing."""


class DataIntegrityError(RuntimeError):
    """On-disk dataset violates the expected layout (e.g. empty class directory)."""


class SamplingError(ValueError):
    """An episode request cannot be satisfied by the dataset."""


class StateError(RuntimeError):
    """A component is used before its weights are loaded/trained."""


class NumericGuardError(RuntimeError):
    """A numeric value left its guarded domain (probabilities, finiteness)."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite; message carries the offending batch ids."""
