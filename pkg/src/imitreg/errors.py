"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`ImitregError`. The CLI maps the three middle-level classes onto
distinct exit codes.
"""


class ImitregError(Exception):
    """Base class for all package errors."""


class DataError(ImitregError):
    """Bad or inconsistent input data."""


class NumericError(ImitregError):
    """A numerical operation cannot be carried out (singular, degenerate)."""


class ConfigError(ImitregError):
    """Invalid or incompatible configuration."""


# geometry / numerics
class SingularTransform(NumericError):
    pass


class DegeneratePointSet(NumericError):
    pass


class DegenerateConfiguration(NumericError):
    pass


# shapes and counts
class DimensionMismatch(DataError):
    pass


class CountMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class InconsistentShapes(DataError):
    pass


class ImageTooSmall(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DatasetTooSmall(DataError):
    pass


class LeakageError(DataError):
    """A held-out pair leaked into a training or validation set."""


# files
class MissingFile(DataError):
    pass


class MalformedGroundTruth(DataError):
    pass


class UnknownCategory(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class CorruptFile(DataError):
    pass


class IoFailure(DataError):
    pass


class ConfigMismatch(ConfigError):
    pass
