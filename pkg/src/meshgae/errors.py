class MeshGAEError(Exception):
    """Base class for all errors raised by meshgae."""


class DimensionError(MeshGAEError, ValueError):
    pass


class NumericError(MeshGAEError, FloatingPointError):
    pass


class ConfigError(MeshGAEError, ValueError):
    pass


class UsageError(MeshGAEError, ValueError):
    pass


class InputError(MeshGAEError, ValueError):
    pass


class CheckpointError(MeshGAEError):
    pass


class IngestionError(MeshGAEError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
