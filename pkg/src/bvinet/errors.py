"""Exception hierarchy shared by every bvinet module."""


class BVINetError(Exception):
    """Base class for all package errors."""


class DimensionError(BVINetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ValidationError(BVINetError, ValueError):
    """Input values violate a documented precondition (range, finiteness)."""


class ConfigError(BVINetError, ValueError):
    """A configuration value or key is invalid."""


class GenerationError(BVINetError, RuntimeError):
    """Random generation could not satisfy its constraints within budget."""


class IntegrityError(BVINetError, RuntimeError):
    """A persisted file is truncated or fails its checksum."""


class UnsupportedVersionError(BVINetError, RuntimeError):
    """A persisted file was written by an incompatible format version."""


class TrainingAborted(BVINetError, RuntimeError):
    """Training hit a non-finite loss; the last good checkpoint is kept."""
