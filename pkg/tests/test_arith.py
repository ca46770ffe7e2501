import numpy as np
import pytest
from hypothesis import given, strategies as st

from src.arith import (
    FlushCounter,
    adjust_input,
    adjust_input_array,
    adjust_parameter,
    adjust_parameter_array,
    mac_row,
    native_mac_row,
    reference_multiply,
    reference_multiply_array,
    seofp_multiply,
    seofp_multiply_array,
    sign_truth_table,
)
from src.bitcore import float_to_word, floats_of, split, word_to_float, words_of
from src.errors import ExponentRangeError, FractionNotZeroError, ShapeError

# parameters that survive adjustment: |p| in [2^-63, 1], fraction 0
LEGAL_PARAMETERS = np.array([(s << 31) | (e << 23) for s in (0, 1) for e in range(64, 128)], dtype=np.uint32)

inputs_in_range = st.builds(
    lambda s, e, f: (s << 31) | (e << 23) | f,
    st.integers(0, 1), st.integers(65, 126), st.integers(0, (1 << 23) - 1),
)
parameters_in_range = st.sampled_from(LEGAL_PARAMETERS.tolist())


def random_inputs(rng, n: int) -> np.ndarray:
    """Normalized input words that the -64 adjustment keeps, plus +-1.0"""
    words = (rng.integers(0, 2, n, dtype=np.uint32) << 31) \
        | (rng.integers(65, 127, n, dtype=np.uint32) << 23) \
        | rng.integers(0, 1 << 23, n, dtype=np.uint32)
    return np.concatenate([words, np.array([0x3F80_0000, 0xBF80_0000], dtype=np.uint32)])


def test_reference_multiply_exponent_path():
    product = reference_multiply(float_to_word(32.0), float_to_word(8.0))
    assert product.value == 256.0
    assert split(product.word).exponent == 0b10000111


def test_worked_example_product():
    a, b = float_to_word(-0.8765), float_to_word(-0.125)
    assert adjust_parameter(b).word == 0x9E80_0000
    assert adjust_input(a).word == a - (64 << 23)
    expected = float_to_word(0.1095625)
    assert reference_multiply(a, b).word == expected
    assert seofp_multiply(adjust_input(a), adjust_parameter(b)).word == expected


@given(inputs_in_range)
def test_multiply_by_one_is_identity(word):
    assert reference_multiply(word, float_to_word(1.0)).word == word


def test_reference_multiply_range_errors():
    big, tiny = float_to_word(2.0 ** 100), float_to_word(2.0 ** -100)
    with pytest.raises(ExponentRangeError):
        reference_multiply(big, big)
    with pytest.raises(ExponentRangeError):
        reference_multiply(tiny, tiny)


def test_adjustments_shift_the_exponent():
    assert split(adjust_parameter(float_to_word(1.0)).word).exponent == 64
    assert split(adjust_input(float_to_word(1.0)).word).exponent == 63
    assert adjust_parameter(0).word == 0
    assert adjust_input(0x8000_0000).word == 0


def test_adjust_parameter_rejects_fraction_and_large_values():
    with pytest.raises(FractionNotZeroError):
        adjust_parameter(float_to_word(0.75))
    with pytest.raises(ExponentRangeError):
        adjust_parameter(float_to_word(2.0))
    with pytest.raises(ExponentRangeError):
        adjust_input(float_to_word(-1.5))


def test_flush_to_zero_is_counted():
    counter = FlushCounter()
    assert adjust_input(float_to_word(2.0 ** -70), counter).word == 0
    assert adjust_parameter(float_to_word(-(2.0 ** -64)), counter).word == 0
    assert adjust_parameter(float_to_word(2.0 ** -63), counter).word != 0
    assert (counter.inputs, counter.parameters, counter.total) == (1, 1, 2)


def test_zero_operands_give_positive_zero():
    x = adjust_input(float_to_word(-0.3))
    assert seofp_multiply(x, adjust_parameter(0)).word == 0
    assert seofp_multiply(adjust_input(0), adjust_parameter(float_to_word(-0.5))).word == 0


def test_sign_truth_table():
    assert sign_truth_table() == [((0, 0), 0), ((0, 1), 1), ((1, 0), 1), ((1, 1), 0)]


@given(inputs_in_range, parameters_in_range)
def test_scalar_paths_agree(a, b):
    reference = reference_multiply(a, b).word
    native = float_to_word(float(np.float32(word_to_float(a)) * np.float32(word_to_float(b))))
    assert seofp_multiply(adjust_input(a), adjust_parameter(b)).word == reference == native


def test_exhaustive_parameter_sweep(rng):
    """Every legal parameter word against 10^5 inputs: integer add == reference == native"""
    inputs = random_inputs(rng, 100_000)
    adjusted_inputs = adjust_input_array(inputs)
    input_values = floats_of(inputs)
    mismatches = 0
    for p in LEGAL_PARAMETERS:
        reference = reference_multiply_array(inputs, p)
        native = words_of(input_values * floats_of(p))
        added = seofp_multiply_array(adjusted_inputs, adjust_parameter_array(np.array([p]))[0])
        mismatches += int(np.count_nonzero(added != reference)) + int(np.count_nonzero(reference != native))
    assert mismatches == 0


def test_array_forms_agree_with_scalar(rng):
    inputs = random_inputs(rng, 500)
    params = rng.choice(np.concatenate([LEGAL_PARAMETERS, np.array([0], dtype=np.uint32)]), inputs.size)
    counter = FlushCounter()
    added = seofp_multiply_array(adjust_input_array(inputs, counter), adjust_parameter_array(params, counter))
    scalar = [seofp_multiply(adjust_input(int(a)), adjust_parameter(int(b))).word for a, b in zip(inputs, params)]
    assert added.tolist() == scalar
    assert counter.total == 0


def test_array_adjustment_counts_flushes():
    counter = FlushCounter()
    words = words_of(np.array([0.5, 2.0 ** -64, 0.0, -(2.0 ** -65)], dtype=np.float32))
    adjusted = adjust_input_array(words, counter)
    assert adjusted.tolist()[1:] == [0, 0, 0]
    assert counter.inputs == 2


def test_mac_row_examples(rng):
    assert mac_row([], []) == 0.0
    a, b = float_to_word(0.5), float_to_word(-0.25)
    assert mac_row([adjust_input(a)], [adjust_parameter(b)]) == -0.125

    inputs = random_inputs(rng, 14)
    params = rng.choice(LEGAL_PARAMETERS, inputs.size)
    assert inputs.size == 16
    adjusted = mac_row([adjust_input(int(x)) for x in inputs], [adjust_parameter(int(p)) for p in params])
    assert adjusted == native_mac_row(inputs.tolist(), params.tolist())


def test_mac_row_length_mismatch():
    with pytest.raises(ShapeError):
        mac_row([adjust_input(0)], [])
    with pytest.raises(ShapeError):
        native_mac_row([0, 0], [0])
