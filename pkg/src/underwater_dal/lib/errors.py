"""Exception hierarchy shared by every module.

Each class carries the exit code the command line reports for it.
"""


class UnderwaterDALError(Exception):
    """Base class of all errors raised by the package."""

    exit_code = 2


class UsageError(UnderwaterDALError):
    exit_code = 1


class ConfigError(UnderwaterDALError, ValueError):
    """Inverted ranges, out-of-domain values, unknown config keys."""

    exit_code = 1


class InvalidInputError(UnderwaterDALError, ValueError):
    exit_code = 2


class ShapeError(UnderwaterDALError, ValueError):
    exit_code = 2


class StateError(UnderwaterDALError, RuntimeError):
    exit_code = 2


class SplitError(UnderwaterDALError, ValueError):
    exit_code = 2


class RankError(UnderwaterDALError, ValueError):
    exit_code = 2


class ManifestParseError(UnderwaterDALError, ValueError):
    def __init__(self, path, line_number, reason):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number


class DanglingReferenceError(UnderwaterDALError, FileNotFoundError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        preview = ", ".join(self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"{len(self.missing)} referenced file(s) missing: {preview}{more}")


class FormatError(UnderwaterDALError, ValueError):
    exit_code = 2


class CorruptionError(UnderwaterDALError, ValueError):
    exit_code = 2


class NumericError(UnderwaterDALError, ArithmeticError):
    exit_code = 3


class IllConditionedError(NumericError):
    def __init__(self, pixel_count, t_min):
        super().__init__(
            f"transmission below t_min={t_min:g} at {pixel_count} pixel channel(s)"
        )
        self.pixel_count = pixel_count
        self.t_min = t_min
