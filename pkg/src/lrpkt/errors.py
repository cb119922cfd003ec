"""Exception hierarchy.

The CLI maps these onto exit codes, so every failure the library can
signal deliberately derives from :class:`LrpktError`.
"""


class LrpktError(Exception):
    pass


class ConfigError(LrpktError, ValueError):
    """Invalid configuration value (bad probability, fraction, size...)."""


class DataError(LrpktError, ValueError):
    """Input data is unusable: bad rows, empty results, missing columns."""


class SchemaError(DataError):
    pass


class EncodingError(DataError):
    """An interaction cannot be encoded, e.g. concept id out of range."""


class ModelError(LrpktError, ValueError):
    """Shape or value inconsistency between parameters and inputs."""


class NoPredictionsError(DataError):
    """A loss or metric was asked for with no next-step prediction points."""


class ModelFileError(LrpktError):
    pass


class FormatVersionError(ModelFileError):
    pass


class DimensionError(ModelFileError):
    pass


class MalformedModelError(ModelFileError):
    pass
