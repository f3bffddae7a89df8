"""Exception hierarchy shared by kernels, attention ops and the weight container."""


class EditKernelsError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(EditKernelsError, ValueError):
    pass


class ConfigError(EditKernelsError, ValueError):
    pass


class DegenerateAttentionError(EditKernelsError, ArithmeticError):
    """A normalizer fell below the denominator guard in strict mode."""

    def __init__(self, row: int, value: float, eps: float):
        self.row = row
        self.value = value
        self.eps = eps
        super().__init__(f"degenerate attention at row {row}: denominator {value!r} < {eps!r}")


class MissingWeightError(EditKernelsError, KeyError):
    def __init__(self, name: str, mechanism: str | None = None):
        self.name = name
        self.mechanism = mechanism
        where = f" for mechanism {mechanism!r}" if mechanism else ""
        super().__init__(f"missing weight {name!r}{where}")

    def __str__(self) -> str:
        return self.args[0]


class WeightFormatError(EditKernelsError):
    """Base class for malformed ``.edtw`` containers."""


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class DuplicateNameError(WeightFormatError):
    pass
