"""Exception hierarchy.

Everything derives from :class:`StereoHbError`.  The CLI maps
:class:`ConfigError` subclasses to exit code 2 and everything else to 1.
"""


class StereoHbError(Exception):
    pass


class ConfigError(StereoHbError, ValueError):
    """Bad user input: files, flags, calibration content."""


class ParseError(ConfigError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(ConfigError):
    pass


class AlignmentError(ConfigError):
    pass


class ModeError(ConfigError):
    pass


class PlacementError(ConfigError):
    pass


class FormatError(ConfigError):
    pass


class RangeError(StereoHbError, ValueError):
    pass


class ShapeError(StereoHbError, ValueError):
    pass


class SingularityError(StereoHbError, ArithmeticError):
    pass


class IlluminantError(StereoHbError, ValueError):
    pass


class NumericError(StereoHbError, ArithmeticError):
    pass


class EmptyComparisonError(StereoHbError, ValueError):
    pass
