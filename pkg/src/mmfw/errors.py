"""Exception hierarchy shared by every module."""


class MmfwError(Exception):
    """Base class for all library errors."""


class ShapeError(MmfwError, ValueError):
    pass


class NotSymmetricError(MmfwError, ValueError):
    pass


class ConfigError(MmfwError, ValueError):
    pass


class FormatError(MmfwError, ValueError):
    """Malformed matrix, factorization, basis or checkpoint file."""


class DataError(MmfwError, ValueError):
    """Unusable input series or distance table."""


class DivergenceError(MmfwError, RuntimeError):
    """Training produced a non-finite loss."""
