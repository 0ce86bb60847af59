"""Exception hierarchy shared by every module.

Each class carries a short ``code`` used by the CLI to print a single
machine-parsable error line.
"""


class VisfuseError(Exception):
    code = "ERROR"


class ShapeError(VisfuseError, ValueError):
    code = "SHAPE_ERROR"


class UsageError(VisfuseError, ValueError):
    code = "USAGE_ERROR"


class ConfigError(VisfuseError, ValueError):
    code = "CONFIG_ERROR"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateInputError(VisfuseError, ValueError):
    code = "DEGENERATE_INPUT"


class DataIOError(VisfuseError, OSError):
    code = "IO_ERROR"
