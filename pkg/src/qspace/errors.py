"""Exception types shared across the package."""


class QSpaceError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class MalformedEncoding(QSpaceError, ValueError):
    pass


class OutOfRangeDigit(QSpaceError, ValueError):
    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


class InvalidArchitecture(QSpaceError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InsufficientSamples(QSpaceError, LookupError):
    """The predictor has no table for a kernel it was asked about."""

    exit_code = 4

    def __init__(self, kind: str, detail: str = ""):
        msg = f"no latency samples for kernel kind {kind!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.kind = kind


class MissingEntry(QSpaceError, LookupError):
    """The accuracy LUT does not cover a key the architecture needs."""

    exit_code = 4

    def __init__(self, key):
        super().__init__(f"accuracy LUT has no entry for {key}")
        self.key = key


class InfeasibleConstraint(QSpaceError):
    exit_code = 3


class FormatError(QSpaceError, ValueError):
    """Malformed or unsupported input file."""
