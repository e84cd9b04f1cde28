"""Exception types shared across the package."""


class HaarweightError(Exception):
    """Base class for all package errors."""


class ShapeError(HaarweightError):
    """Grid or value-shape mismatch between operands."""


class CompletenessError(HaarweightError):
    """A Haar expansion is missing coefficient entries for its grid."""


class IntegrabilityError(HaarweightError):
    """A requested weight power is not integrable on the cell."""


class ShiftMapError(HaarweightError):
    """A shift map violates containment or scale constraints."""


class SparsenessError(HaarweightError):
    """A cube family fails the sparseness certificate."""


class ThresholdError(HaarweightError):
    """Stopping-time thresholds must exceed 1."""


class ConfigError(HaarweightError):
    """An experiment configuration failed validation."""
