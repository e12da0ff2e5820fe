"""Exception hierarchy shared by every module."""


class AplaError(Exception):
    pass


class ConfigError(AplaError, ValueError):
    """Invalid configuration: bad shapes, unknown names, out-of-range knobs."""


class DimensionError(AplaError, ValueError):
    pass


class DataError(AplaError, ValueError):
    pass


class FormatError(DataError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GenerationError(AplaError, RuntimeError):
    pass


class ConsistencyError(AplaError, RuntimeError):
    pass
