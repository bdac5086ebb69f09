"""Exception hierarchy shared by the whole engine.

CLI exit-code mapping: ConfigError -> 2, input-side errors -> 3,
numeric failures -> 4.
"""


class VoltokError(Exception):
    """Base class for all engine errors."""


class ConfigError(VoltokError):
    """Run configuration is malformed or uses unknown keys."""


# -- volume store ------------------------------------------------------------

class MissingFile(VoltokError):
    pass


class MalformedHeader(VoltokError):
    pass


class PayloadSizeMismatch(VoltokError):
    pass


class IoFailure(VoltokError):
    pass


class InvalidSpec(VoltokError):
    pass


# -- wavelet -----------------------------------------------------------------

class OddSpatialDim(VoltokError):
    pass


class ParityMismatch(VoltokError):
    pass


# -- tensor ops / codec ------------------------------------------------------

class ShapeMismatch(VoltokError):
    pass


class ChannelMismatch(VoltokError):
    pass


class CodeOutOfRange(VoltokError):
    pass


class MixedBitWidth(VoltokError):
    pass


# -- tiling / token files ----------------------------------------------------

class InvalidLength(VoltokError):
    pass


class MalformedTokenFile(VoltokError):
    pass


# -- training ----------------------------------------------------------------

class DataShapeMismatch(VoltokError):
    pass


class NonFiniteLoss(VoltokError):
    """Raised when a loss or gradient goes non-finite; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


INPUT_ERRORS = (
    MissingFile, MalformedHeader, PayloadSizeMismatch, IoFailure, InvalidSpec,
    OddSpatialDim, ParityMismatch, ShapeMismatch, ChannelMismatch,
    CodeOutOfRange, MixedBitWidth, InvalidLength, MalformedTokenFile,
    DataShapeMismatch,
)
