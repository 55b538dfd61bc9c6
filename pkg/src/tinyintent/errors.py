"""Exception hierarchy shared across the package."""


class TinyIntentError(Exception):
    """Base class for every error raised by tinyintent."""


class ShapeError(TinyIntentError, ValueError):
    pass


class NumericError(TinyIntentError, FloatingPointError):
    pass


class ProtocolError(TinyIntentError, RuntimeError):
    """An API was called out of order (e.g. Adam at step 0)."""


class InputError(TinyIntentError, ValueError):
    pass


class DataError(TinyIntentError, ValueError):
    pass


class EmbeddingFormatError(DataError):
    pass


class TrainingDiverged(TinyIntentError, RuntimeError):
    pass


class ConfigError(TinyIntentError, ValueError):
    pass


class ModelFormatError(TinyIntentError, ValueError):
    """Base class for model-file load failures."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class BenchError(TinyIntentError, RuntimeError):
    pass
