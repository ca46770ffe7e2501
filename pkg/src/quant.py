"""Fraction and exponent quantization of single-precision parameters.

``fraction_quantize`` keeps the head ``x`` bits of each word with a
rounding-like step (an OR into the last kept bit for 9 < x < 32, an exponent
increment by the first fraction bit for x == 9). ``direct_remove`` is the
plain mask used as the comparison baseline. ``exponent_quantize`` maps the
exponents of a sign-exponent-only model onto offsets from its smallest
exponent so each parameter fits in ``width + 1`` bits.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.bitcore import (
    BIAS,
    EXPONENT_MASK,
    FRACTION_BITS,
    MAGNITUDE_MASK,
    MAX_EXPONENT,
    WORD_MASK,
    check_normal,
    check_normal_words,
    first_invalid,
    exponent_field,
    fraction_field,
    sign_field,
    split,
    zero_mask,
)
from src.errors import (
    BitWidthError,
    EmptyModelError,
    FractionNotZeroError,
    NonFiniteError,
    ParameterError,
    SeofpError,
)
from src.network import Model

logger = logging.getLogger(__name__)

MIN_BITS = 9
MAX_BITS = 32
ZERO_BUCKET = "zero"


@dataclass(frozen=True)
class QuantSpec:
    x: int

    def __post_init__(self):
        if not isinstance(self.x, (int, np.integer)) or not MIN_BITS <= self.x <= MAX_BITS:
            raise BitWidthError(f"retained bit-width must be in [{MIN_BITS}, {MAX_BITS}], got {self.x!r}")

    @classmethod
    def of(cls, x: "int | QuantSpec") -> "QuantSpec":
        return x if isinstance(x, QuantSpec) else cls(int(x))

    @property
    def kernel(self) -> int:
        """Mask with the head ``x`` bits set"""
        return (WORD_MASK << (32 - self.x)) & WORD_MASK


def fraction_quantize(param: int, spec: QuantSpec) -> int:
    bits = split(param)
    check_normal(bits)
    x = spec.x
    word = param
    if x == MAX_BITS:
        return word
    if x == MIN_BITS:
        # carry may reach the exponent, never the sign
        exponent = bits.exponent + bits.bit(22)
        if exponent == MAX_EXPONENT:
            raise NonFiniteError(f"0x{param:08X} rounds past the largest finite exponent")
        word = (word & ~EXPONENT_MASK & WORD_MASK) | (exponent << FRACTION_BITS)
    else:
        pos = 32 - x
        word |= bits.bit(pos - 1) << pos
    return word & spec.kernel


def direct_remove(param: int, spec: QuantSpec) -> int:
    check_normal(split(param))
    return param & spec.kernel


def fraction_quantize_words(words: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Array form of ``fraction_quantize``"""
    words = np.asarray(words, dtype=np.uint32)
    check_normal_words(words)
    x = spec.x
    if x == MAX_BITS:
        return words.copy()
    if x == MIN_BITS:
        overflow = np.flatnonzero(_carry_overflows(words))
        if overflow.size:
            word = int(words.ravel()[overflow[0]])
            raise NonFiniteError(f"0x{word:08X} rounds past the largest finite exponent")
        exponent = exponent_field(words) + ((words >> 22) & 1)
        words = (words & ~np.uint32(EXPONENT_MASK)) | (exponent << FRACTION_BITS)
    else:
        pos = 32 - x
        words = words | (((words >> (pos - 1)) & 1) << pos)
    return words & np.uint32(spec.kernel)


def direct_remove_words(words: np.ndarray, spec: QuantSpec) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint32)
    check_normal_words(words)
    return words & np.uint32(spec.kernel)


def _carry_overflows(words: np.ndarray) -> np.ndarray:
    """x == 9 words whose exponent increment would reach the all-ones exponent"""
    words = np.asarray(words, dtype=np.uint32).ravel()
    return (exponent_field(words) == MAX_EXPONENT - 1) & ((words >> 22) & 1 == 1)


def _failing_index(flat: np.ndarray, spec: QuantSpec) -> int:
    index = first_invalid(flat)
    if index is None and spec.x == MIN_BITS:
        overflow = np.flatnonzero(_carry_overflows(flat))
        index = int(overflow[0]) if overflow.size else None
    return 0 if index is None else index


def _in_context(fn, spec: QuantSpec):
    def apply(words: np.ndarray, layer: int, name: str) -> np.ndarray:
        try:
            return fn(words, spec)
        except SeofpError as e:
            raise ParameterError(str(e), layer, name, _failing_index(words.ravel(), spec)) from e
    return apply


def fraction_quantize_model(model: Model, spec: QuantSpec) -> Model:
    """Apply ``fraction_quantize`` to every weight and bias"""
    spec = QuantSpec.of(spec)
    return model.map_words(_in_context(fraction_quantize_words, spec))


def direct_remove_model(model: Model, spec: QuantSpec) -> Model:
    spec = QuantSpec.of(spec)
    return model.map_words(_in_context(direct_remove_words, spec))


# exponent quantization ------------------------------------------------------

def _exponent_width(max_exp: int, min_exp: int) -> int:
    # ceil(log2((max - min + 1) + 1)), code 0 being reserved for zero
    return (max_exp - min_exp + 1).bit_length()


@dataclass(frozen=True)
class ExponentCodebook:
    """Offsets of unbiased exponents from ``min_exp``; code 0 is zero"""

    max_exp: int
    min_exp: int
    width: int

    def __post_init__(self):
        if self.max_exp < self.min_exp:
            raise ValueError(f"max_exp {self.max_exp} below min_exp {self.min_exp}")
        if self.width != _exponent_width(self.max_exp, self.min_exp):
            raise ValueError(f"width {self.width} does not cover [{self.min_exp}, {self.max_exp}]")

    @classmethod
    def spanning(cls, max_exp: int, min_exp: int) -> "ExponentCodebook":
        return cls(max_exp, min_exp, _exponent_width(max_exp, min_exp))

    @property
    def bits_per_param(self) -> int:
        return self.width + 1

    def code(self, word: int) -> int:
        bits = split(word)
        if bits.word & MAGNITUDE_MASK == 0:
            return 0
        return bits.exponent - BIAS - self.min_exp + 1

    def encode_words(self, words: np.ndarray) -> np.ndarray:
        """words -> (sign << width) | code"""
        words = np.asarray(words, dtype=np.uint32)
        if np.any(fraction_field(words) != 0):
            raise FractionNotZeroError("exponent codes need sign-exponent-only words")
        zero = zero_mask(words)
        exponent = exponent_field(words).astype(np.int64) - BIAS
        nonzero = exponent[~zero]
        if nonzero.size and (nonzero.min() < self.min_exp or nonzero.max() > self.max_exp):
            raise ValueError(f"exponents outside codebook range [{self.min_exp}, {self.max_exp}]")
        codes = np.where(zero, 0, exponent - self.min_exp + 1).astype(np.uint32)
        return (sign_field(words) << self.width) | codes

    def decode_words(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.uint32)
        sign = (codes >> self.width) & 1
        code = codes & np.uint32((1 << self.width) - 1)
        exponent = np.where(code == 0, 0, code.astype(np.int64) + self.min_exp - 1 + BIAS)
        return (sign << 31) | (exponent.astype(np.uint32) << FRACTION_BITS)


class ExponentQuantized(NamedTuple):
    width: int
    min_exp: int
    model: Model


def _require_sign_exponent_only(model: Model) -> None:
    for layer, name, tensor in model.tensors():
        fraction = fraction_field(tensor.view(np.uint32)).ravel()
        bad = np.flatnonzero(fraction)
        if bad.size:
            raise FractionNotZeroError(
                f"layer {layer} {name}[{int(bad[0])}] has fraction bits set; "
                f"apply fraction quantization with x=9 first")


def codebook_for(model: Model) -> ExponentCodebook:
    """The smallest codebook covering every nonzero exponent of ``model``"""
    _require_sign_exponent_only(model)
    words = model.all_words()
    nonzero = words[~zero_mask(words)]
    if nonzero.size == 0:
        raise EmptyModelError("model has no nonzero parameters")
    exponent = exponent_field(nonzero).astype(np.int64) - BIAS
    return ExponentCodebook.spanning(int(exponent.max()), int(exponent.min()))


def exponent_quantize(model: Model) -> ExponentQuantized:
    """Remap every exponent field to its code; values are recovered with
    ``exponent_dequantize(width, min_exp, model)``."""
    codebook = codebook_for(model)

    def remap(words: np.ndarray, layer: int, name: str) -> np.ndarray:
        codes = codebook.encode_words(words)
        code = codes & np.uint32((1 << codebook.width) - 1)
        return (sign_field(words) << 31) | (code << FRACTION_BITS)

    remapped = model.map_words(remap)
    logger.debug(f"exponent codebook: width={codebook.width} min={codebook.min_exp} max={codebook.max_exp}")
    return ExponentQuantized(codebook.width, codebook.min_exp, remapped)


def exponent_dequantize(width: int, min_exp: int, model: Model) -> Model:
    """Inverse of ``exponent_quantize``"""

    def restore(words: np.ndarray, layer: int, name: str) -> np.ndarray:
        code = exponent_field(words)
        exponent = np.where(code == 0, 0, code.astype(np.int64) + min_exp - 1 + BIAS)
        return (words & np.uint32(1 << 31)) | (exponent.astype(np.uint32) << FRACTION_BITS)

    if width < 1:
        raise ValueError("width must be positive")
    return model.map_words(restore)


def exponent_histogram(model: Model) -> dict:
    """Parameter count per unbiased exponent (log2 magnitude); zeros under ``"zero"``"""
    words = model.all_words()
    zero = zero_mask(words)
    exponent = exponent_field(words[~zero]).astype(np.int64) - BIAS
    counts = Counter(int(e) for e in exponent)
    histogram: dict = {e: counts[e] for e in sorted(counts)}
    if zero.any():
        histogram[ZERO_BUCKET] = int(zero.sum())
    return histogram
