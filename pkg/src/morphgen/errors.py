"""Exception hierarchy shared by all morphgen modules."""


class MorphgenError(Exception):
    """Base class for every error raised by morphgen."""


class BadParameter(MorphgenError, ValueError):
    pass


class MissingFile(MorphgenError, FileNotFoundError):
    pass


class IoFailure(MorphgenError, OSError):
    pass


class BadMagic(MorphgenError, ValueError):
    pass


class DimensionMismatch(MorphgenError, ValueError):
    pass


class InvariantViolation(MorphgenError, ValueError):
    pass


class BadRecord(MorphgenError, ValueError):
    """A malformed input record. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BehindCamera(MorphgenError, ValueError):
    pass


class DegenerateMesh(MorphgenError, ValueError):
    pass


class NotUnit(MorphgenError, ValueError):
    pass


class EmptyPrior(MorphgenError, ValueError):
    pass


class EmptyTexture(MorphgenError, ValueError):
    pass


class BadPairing(MorphgenError, ValueError):
    pass


class ZeroVector(MorphgenError, ValueError):
    pass


class OneClassOnly(MorphgenError, ValueError):
    pass


class BadFoldShape(MorphgenError, ValueError):
    pass


class ZeroDiagonal(MorphgenError, ValueError):
    pass


class EmptyInput(MorphgenError, ValueError):
    pass


class EmptyManifest(MorphgenError, ValueError):
    pass
