"""Exception hierarchy for the SEOFP toolkit.

Every failure the toolkit signals is a ``SeofpError``; argument-style failures
are also ``ValueError`` so callers that only know the builtin still catch them.
"""


class SeofpError(Exception):
    """Base class for all toolkit errors"""


class NonFiniteError(SeofpError, ValueError):
    """Word has an all-ones exponent (infinity or NaN)"""


class SubnormalError(SeofpError, ValueError):
    """Word has a zero exponent with a nonzero fraction"""


class BitWidthError(SeofpError, ValueError):
    """Retained bit-width outside [9, 32]"""


class FractionNotZeroError(SeofpError, ValueError):
    """A sign-exponent-only word was required but fraction bits are set"""


class EmptyModelError(SeofpError, ValueError):
    """Operation needs at least one nonzero parameter"""


class ExponentRangeError(SeofpError, ArithmeticError):
    """Product exponent leaves the normal single-precision range"""


class ShapeError(SeofpError, ValueError):
    """Tensor or sequence shapes do not line up"""


class DivergenceError(SeofpError, ArithmeticError):
    """Training loss became NaN or infinite"""


class EncodingError(SeofpError, ValueError):
    """Model cannot be stored with the requested encoding"""


class ConfigError(SeofpError, ValueError):
    """Invalid configuration value"""


class VerificationError(SeofpError):
    """Integer-add and native inference disagree"""

    def __init__(self, message: str, mismatches: int):
        super().__init__(message)
        self.mismatches = mismatches


class ParameterError(SeofpError, ValueError):
    """A per-parameter failure with its location in the model"""

    def __init__(self, message: str, layer: int, tensor: str, index: int):
        super().__init__(f"layer {layer} {tensor}[{index}]: {message}")
        self.layer = layer
        self.tensor = tensor
        self.index = index


class FormatError(SeofpError, ValueError):
    """Packed model bytes cannot be decoded"""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class CorruptHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass
