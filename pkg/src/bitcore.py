"""Single-precision word anatomy.

A 32-bit word is read as three fields: sign (bit 31), a biased exponent
(bits 30-23) and a fraction (bits 22-0). Everything else in the toolkit
manipulates parameters through these views.

Subnormals, infinities and NaN are rejected wherever a value is interpreted;
signed zero is accepted on decode and canonicalized to +0 on encode.
"""

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.errors import NonFiniteError, SubnormalError

BIAS = 127
FRACTION_BITS = 23
EXPONENT_BITS = 8

SIGN_MASK = 0x8000_0000
EXPONENT_MASK = 0x7F80_0000
FRACTION_MASK = 0x007F_FFFF
MAGNITUDE_MASK = 0x7FFF_FFFF
WORD_MASK = 0xFFFF_FFFF

MAX_EXPONENT = 0xFF


@dataclass(frozen=True)
class FloatBits:
    """A 32-bit word with its sign / exponent / fraction views"""

    word: int

    def __post_init__(self):
        if not 0 <= self.word <= WORD_MASK:
            raise ValueError(f"not a 32-bit word: {self.word!r}")

    @property
    def sign(self) -> int:
        return self.word >> 31

    @property
    def exponent(self) -> int:
        return (self.word & EXPONENT_MASK) >> FRACTION_BITS

    @property
    def fraction(self) -> int:
        return self.word & FRACTION_MASK

    def bit(self, i: int) -> int:
        return (self.word >> i) & 1

    def __str__(self) -> str:
        return format_bits(self.word)


class ValueParts(NamedTuple):
    sign_factor: int
    significand: float
    unbiased_exponent: int


def split(word: int) -> FloatBits:
    return FloatBits(word)


def join(sign: int, exponent: int, fraction: int) -> int:
    if sign not in (0, 1):
        raise ValueError(f"sign must be 0 or 1, got {sign}")
    if not 0 <= exponent <= MAX_EXPONENT:
        raise ValueError(f"exponent out of range: {exponent}")
    if not 0 <= fraction <= FRACTION_MASK:
        raise ValueError(f"fraction out of range: {fraction}")
    return (sign << 31) | (exponent << FRACTION_BITS) | fraction


def is_zero_pattern(bits: FloatBits) -> bool:
    return bits.word & MAGNITUDE_MASK == 0


def check_normal(bits: FloatBits) -> None:
    """Raise unless ``bits`` is a normalized number or a signed zero"""
    if bits.exponent == MAX_EXPONENT:
        raise NonFiniteError(f"0x{bits.word:08X} is infinite or NaN")
    if bits.exponent == 0 and bits.fraction != 0:
        raise SubnormalError(f"0x{bits.word:08X} is subnormal")


def value_parts(bits: FloatBits) -> ValueParts:
    check_normal(bits)
    return ValueParts(
        sign_factor=-1 if bits.sign else 1,
        significand=1.0 + bits.fraction / (1 << FRACTION_BITS),
        unbiased_exponent=bits.exponent - BIAS,
    )


def decode_value(bits: FloatBits) -> float:
    """Decimal value of a word: (-1)^sign x significand x 2^(exponent - 127)"""
    check_normal(bits)
    if is_zero_pattern(bits):
        return -0.0 if bits.sign else 0.0
    # the 24-bit integer significand is exact in a double
    magnitude = math.ldexp((1 << FRACTION_BITS) | bits.fraction, bits.exponent - BIAS - FRACTION_BITS)
    return -magnitude if bits.sign else magnitude


def float_to_word(value: float) -> int:
    """Round ``value`` to single precision and return its word (+0 for -0)"""
    word = struct.unpack("<I", struct.pack("<f", value))[0]
    if word & MAGNITUDE_MASK == 0:
        return 0
    return word


def word_to_float(word: int) -> float:
    return struct.unpack("<f", struct.pack("<I", word))[0]


def format_bits(word: int) -> str:
    bits = split(word)
    return f"{bits.sign} {bits.exponent:08b} {bits.fraction:023b}"


# numpy views ---------------------------------------------------------------

def words_of(values) -> np.ndarray:
    """float32 array -> uint32 words (a copy, same shape)"""
    return np.array(values, dtype=np.float32).view(np.uint32)


def floats_of(words) -> np.ndarray:
    """uint32 words -> float32 array (a copy, same shape)"""
    return np.array(words, dtype=np.uint32).view(np.float32)


def canonical_zero(words: np.ndarray) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint32)
    return np.where(words & MAGNITUDE_MASK == 0, np.uint32(0), words)


def exponent_field(words: np.ndarray) -> np.ndarray:
    return (np.asarray(words, dtype=np.uint32) & EXPONENT_MASK) >> FRACTION_BITS


def fraction_field(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32) & FRACTION_MASK


def sign_field(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32) >> 31


def zero_mask(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32) & MAGNITUDE_MASK == 0


def first_invalid(words: np.ndarray) -> int | None:
    """Flat index of the first infinite, NaN or subnormal word, if any"""
    words = np.asarray(words, dtype=np.uint32).ravel()
    exponent = exponent_field(words)
    bad = np.flatnonzero((exponent == MAX_EXPONENT) | ((exponent == 0) & (fraction_field(words) != 0)))
    return int(bad[0]) if bad.size else None


def check_normal_words(words: np.ndarray) -> None:
    """Array form of ``check_normal``"""
    flat = np.asarray(words, dtype=np.uint32).ravel()
    index = first_invalid(flat)
    if index is not None:
        check_normal(split(int(flat[index])))
