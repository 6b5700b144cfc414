"""Exception types raised across the package."""


class SpinefuseError(Exception):
    """Base class for all library errors."""


class GridMismatch(SpinefuseError, ValueError):
    pass


class RleError(SpinefuseError, ValueError):
    pass


class RleLengthMismatch(RleError):
    pass


class RleMalformed(RleError):
    pass


class EmptyMask(SpinefuseError, ValueError):
    pass


class NoSeeds(SpinefuseError, ValueError):
    pass


class SeedOutsideRegion(SpinefuseError, ValueError):
    pass


class ConfigInvalid(SpinefuseError, ValueError):
    pass


class EmptyInput(SpinefuseError, ValueError):
    pass


class NoReferenceFound(SpinefuseError):
    """No instance carries the reference flag, so labels cannot be anchored."""


class AmbiguousRegion(SpinefuseError):
    pass


class SequenceOverflow(SpinefuseError):
    """Label propagation walked past C1 or below S1."""


class InvalidReferenceIndex(SpinefuseError, IndexError):
    pass


class DuplicateLabel(SpinefuseError, ValueError):
    pass


class SchemaError(SpinefuseError, ValueError):
    """Input document does not match the expected JSON/PNG schema.

    ``field`` names the offending key path (e.g. ``instances[2].rle.runs``).
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
