"""Floating-point multiplication by one integer addition.

With a parameter ``b`` whose fraction is zero, the product ``a * b`` has
``a``'s fraction, the XOR of the signs and the sum of the biased exponents
minus 127. Pre-subtracting 63 from every parameter exponent and 64 from every
input exponent leaves a single 32-bit integer addition of whole words:

    adjust_input(a).word + adjust_parameter(b).word  (carry out of bit 31 dropped)
        == (a * b).word

Both exponent MSBs are 0 after the adjustment (operands lie in [-1, 1]), so
the exponent sum never reaches the sign bit; the two sign bits add to their
XOR once the carry is discarded. Zero operands are caught separately.

Adjusted operands whose exponent would drop below 1 are flushed to +0 and
counted in a ``FlushCounter``.
"""

from dataclasses import dataclass

import numpy as np

from src.bitcore import (
    BIAS,
    FRACTION_BITS,
    FRACTION_MASK,
    MAGNITUDE_MASK,
    MAX_EXPONENT,
    SIGN_MASK,
    WORD_MASK,
    check_normal,
    check_normal_words,
    exponent_field,
    fraction_field,
    join,
    split,
    word_to_float,
    zero_mask,
)
from src.errors import ExponentRangeError, FractionNotZeroError, ShapeError

PARAMETER_SHIFT = 63
INPUT_SHIFT = 64
# adjusted operands keep the exponent MSB clear
MAX_OPERAND_EXPONENT = 0x7F

HIDDEN_BIT = 1 << FRACTION_BITS


@dataclass
class FlushCounter:
    """Diagnostics register for operands flushed to zero during adjustment"""

    inputs: int = 0
    parameters: int = 0

    @property
    def total(self) -> int:
        return self.inputs + self.parameters

    def merge(self, other: "FlushCounter") -> "FlushCounter":
        return FlushCounter(self.inputs + other.inputs, self.parameters + other.parameters)


@dataclass(frozen=True)
class AdjustedParam:
    word: int


@dataclass(frozen=True)
class AdjustedInput:
    word: int


@dataclass(frozen=True)
class ProductWord:
    word: int

    @property
    def value(self) -> float:
        return word_to_float(self.word)


def reference_multiply(a: int, b: int) -> ProductWord:
    """Single-precision multiply the way a hardware multiplier does it.

    Sign XOR, a 9-bit exponent sum minus the bias, a 24 x 24 bit significand
    product renormalized once if it reaches 2. The significand is truncated;
    with one zero-fraction operand the product is exact, so this agrees with
    native multiplication.
    """
    A, B = split(a), split(b)
    check_normal(A)
    check_normal(B)
    sign = A.sign ^ B.sign
    if A.word & MAGNITUDE_MASK == 0 or B.word & MAGNITUDE_MASK == 0:
        return ProductWord(sign << 31)

    t_e = A.exponent + B.exponent - BIAS
    t_f = (HIDDEN_BIT | A.fraction) * (HIDDEN_BIT | B.fraction)
    if t_f >> (2 * FRACTION_BITS + 1):
        t_f >>= FRACTION_BITS + 1
        t_e += 1
    else:
        t_f >>= FRACTION_BITS

    if t_e >= MAX_EXPONENT:
        raise ExponentRangeError(f"product of 0x{a:08X} and 0x{b:08X} overflows")
    if t_e <= 0:
        raise ExponentRangeError(f"product of 0x{a:08X} and 0x{b:08X} underflows")
    return ProductWord(join(sign, t_e, t_f & FRACTION_MASK))


def adjust_parameter(p: int, counter: FlushCounter | None = None) -> AdjustedParam:
    """Divide a sign-exponent-only parameter by 2^63 (exponent - 63)"""
    bits = split(p)
    check_normal(bits)
    if bits.fraction:
        raise FractionNotZeroError(f"parameter 0x{p:08X} has fraction bits set")
    if bits.word & MAGNITUDE_MASK == 0:
        return AdjustedParam(0)
    if bits.exponent > MAX_OPERAND_EXPONENT:
        raise ExponentRangeError(f"parameter 0x{p:08X} exceeds magnitude 1")
    if bits.exponent <= PARAMETER_SHIFT:
        if counter is not None:
            counter.parameters += 1
        return AdjustedParam(0)
    return AdjustedParam(p - (PARAMETER_SHIFT << FRACTION_BITS))


def adjust_input(a: int, counter: FlushCounter | None = None) -> AdjustedInput:
    """Divide a normalized input by 2^64 (exponent - 64), fraction untouched"""
    bits = split(a)
    check_normal(bits)
    if bits.word & MAGNITUDE_MASK == 0:
        return AdjustedInput(0)
    if bits.exponent > MAX_OPERAND_EXPONENT:
        raise ExponentRangeError(f"input 0x{a:08X} is not normalized to [-1, 1]")
    if bits.exponent <= INPUT_SHIFT:
        if counter is not None:
            counter.inputs += 1
        return AdjustedInput(0)
    return AdjustedInput(a - (INPUT_SHIFT << FRACTION_BITS))


def seofp_multiply(a_adj: AdjustedInput, b_adj: AdjustedParam) -> ProductWord:
    a, b = a_adj.word, b_adj.word
    # two ORs over bits 30..0 followed by a NAND
    a_nonzero = a & MAGNITUDE_MASK != 0
    b_nonzero = b & MAGNITUDE_MASK != 0
    if not (a_nonzero and b_nonzero):
        return ProductWord(0)
    assert (a & MAGNITUDE_MASK) + (b & MAGNITUDE_MASK) <= MAGNITUDE_MASK, "exponent carried into the sign bit"
    return ProductWord((a + b) & WORD_MASK)


def mac_row(inputs, params) -> float:
    """Left-to-right float32 sum of integer-add products"""
    inputs, params = list(inputs), list(params)
    if len(inputs) != len(params):
        raise ShapeError(f"{len(inputs)} inputs against {len(params)} parameters")
    acc = np.float32(0.0)
    for a, b in zip(inputs, params):
        acc = np.float32(acc + np.float32(seofp_multiply(a, b).value))
    return float(acc)


def native_mac_row(inputs, params) -> float:
    """The same row with float32 multiplies, for comparison"""
    inputs, params = list(inputs), list(params)
    if len(inputs) != len(params):
        raise ShapeError(f"{len(inputs)} inputs against {len(params)} parameters")
    acc = np.float32(0.0)
    for a, b in zip(inputs, params):
        acc = np.float32(acc + np.float32(word_to_float(a)) * np.float32(word_to_float(b)))
    return float(acc)


def sign_truth_table() -> list[tuple[tuple[int, int], int]]:
    """The four sign cases and the sign produced by add-with-carry-drop"""
    return [((sa, sb), (((sa << 31) + (sb << 31)) & WORD_MASK) >> 31)
            for sa in (0, 1) for sb in (0, 1)]


# array forms ----------------------------------------------------------------

def reference_multiply_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise ``reference_multiply`` over broadcast uint32 arrays"""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint32), np.asarray(b, dtype=np.uint32))
    check_normal_words(a)
    check_normal_words(b)
    sign = ((a ^ b) & np.uint32(SIGN_MASK)).astype(np.uint64)
    zero = zero_mask(a) | zero_mask(b)

    t_e = exponent_field(a).astype(np.int64) + exponent_field(b).astype(np.int64) - BIAS
    t_f = ((fraction_field(a).astype(np.uint64) | HIDDEN_BIT)
           * (fraction_field(b).astype(np.uint64) | HIDDEN_BIT))
    carry = (t_f >> np.uint64(2 * FRACTION_BITS + 1)) != 0
    t_f = np.where(carry, t_f >> np.uint64(FRACTION_BITS + 1), t_f >> np.uint64(FRACTION_BITS))
    t_e = t_e + carry

    live = ~zero
    if np.any(live & (t_e >= MAX_EXPONENT)):
        raise ExponentRangeError("product overflows the single-precision range")
    if np.any(live & (t_e <= 0)):
        raise ExponentRangeError("product underflows the single-precision range")
    word = sign | (np.clip(t_e, 0, MAX_EXPONENT).astype(np.uint64) << np.uint64(FRACTION_BITS)) \
        | (t_f & np.uint64(FRACTION_MASK))
    return np.where(zero, sign, word).astype(np.uint32)


def adjust_parameter_array(words: np.ndarray, counter: FlushCounter | None = None) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint32)
    check_normal_words(words)
    if np.any(fraction_field(words) != 0):
        raise FractionNotZeroError("parameters must have zero fraction before adjustment")
    return _shift_exponent(words, PARAMETER_SHIFT, counter, "parameters")


def adjust_input_array(words: np.ndarray, counter: FlushCounter | None = None) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint32)
    check_normal_words(words)
    return _shift_exponent(words, INPUT_SHIFT, counter, "inputs")


def _shift_exponent(words: np.ndarray, shift: int, counter: FlushCounter | None, kind: str) -> np.ndarray:
    exponent = exponent_field(words)
    if np.any(exponent > MAX_OPERAND_EXPONENT):
        raise ExponentRangeError(f"{kind} must be normalized to [-1, 1]")
    zero = zero_mask(words)
    flushed = ~zero & (exponent <= shift)
    if counter is not None and flushed.any():
        setattr(counter, kind, getattr(counter, kind) + int(flushed.sum()))
    shifted = words - np.uint32(shift << FRACTION_BITS)
    return np.where(zero | flushed, np.uint32(0), shifted)


def seofp_multiply_array(a_adj: np.ndarray, b_adj: np.ndarray) -> np.ndarray:
    """Element-wise ``seofp_multiply`` over broadcast adjusted words"""
    a = np.asarray(a_adj, dtype=np.uint32)
    b = np.asarray(b_adj, dtype=np.uint32)
    total = (a.astype(np.uint64) + b.astype(np.uint64)) & np.uint64(WORD_MASK)
    return np.where(zero_mask(a) | zero_mask(b), np.uint32(0), total.astype(np.uint32))
