"""Exception types raised by the library."""


class HybencError(Exception):
    """Base class for all library errors."""


class ShapeError(HybencError):
    """Operands have incompatible shapes."""


class InvalidMaskError(HybencError):
    """A mask row selects no valid token."""


class MaskLayoutError(HybencError):
    """A padding mask is not a prefix of ones per row (end-padding required)."""


class PatternError(HybencError):
    """A layer pattern string is malformed."""


class ConfigError(HybencError):
    """A configuration value violates its contract."""


class VocabularyError(HybencError):
    """A token id falls outside the vocabulary."""


class CheckpointError(HybencError):
    """A checkpoint file is malformed or inconsistent."""


class OracleError(HybencError):
    """The finite-difference oracle hit a non-finite value."""


class TrainingDivergedError(HybencError):
    """Training produced a non-finite loss."""


class DegenerateBatchError(HybencError):
    """An MLM batch contains no labeled position."""
