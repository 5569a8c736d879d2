"""Exception types shared across the package."""


class STPFormerError(Exception):
    pass


class DimensionError(STPFormerError, ValueError):
    pass


class StateError(STPFormerError, RuntimeError):
    pass


class InputError(STPFormerError, ValueError):
    pass


class ConfigError(STPFormerError, ValueError):
    pass


class LoadError(STPFormerError, IOError):
    pass


class NumericalError(STPFormerError, FloatingPointError):
    """Raised when a forward stage or the loss produces NaN/Inf."""

    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"non-finite values produced at stage '{stage}'")


class DataSizeError(LoadError):
    pass


class MetaError(LoadError):
    pass


class VersionError(LoadError):
    pass
