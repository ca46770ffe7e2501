import math

import numpy as np
import pytest

from src.bitcore import float_to_word, fraction_field, words_of
from src.config import TrainConfig
from src.datasets import generate
from src.errors import DivergenceError, FractionNotZeroError, ShapeError
from src.network import IDENTITY, LayerSpec, Model
from src.nn import (
    backward,
    build_inference_model,
    build_native_model,
    conv_preset,
    dense_preset,
    evaluate_mse,
    forward,
    gradients_with,
    init_model,
    loss_with,
    train,
    train_step,
)
from src.quant import QuantSpec, direct_remove_model, fraction_quantize_model


def identity_model(n: int) -> Model:
    return Model((LayerSpec.dense(n, n, IDENTITY),), [np.eye(n)], [np.zeros(n)])


def test_zero_model_outputs_zero(rng):
    model = Model.zeros((LayerSpec.dense(5, 4), LayerSpec.dense(4, 3)))
    batch = rng.uniform(-1, 1, (7, 5))
    assert not forward(model, batch).any()
    for engine in (build_native_model(model), build_inference_model(model)):
        outputs, counter = engine.run(batch)
        assert not words_of(outputs).any()
        assert counter.total == 0


def test_identity_layer_passes_input_through(rng):
    batch = rng.uniform(-1, 1, (6, 4)).astype(np.float32)
    model = identity_model(4)
    assert np.array_equal(forward(model, batch), batch.astype(np.float64))
    assert np.array_equal(words_of(build_inference_model(model).predict(batch)), words_of(batch))


def test_conv_layer_is_zero_padded_cross_correlation():
    model = Model((LayerSpec.conv1d(1, 1, 3, IDENTITY),), [np.array([[[0.25, 0.5, -0.125]]])], [np.zeros(1)])
    x = np.array([[0.5, -0.25, 0.75, 1.0, -1.0]])
    padded = np.pad(x[0], 1)
    expected = [0.25 * padded[t] + 0.5 * padded[t + 1] - 0.125 * padded[t + 2] for t in range(5)]
    assert forward(model, x)[0].tolist() == pytest.approx(expected, abs=1e-15)


def test_forward_is_deterministic(make_model, rng):
    model = make_model((LayerSpec.dense(8, 6), LayerSpec.dense(6, 8, IDENTITY)))
    batch = rng.uniform(-1, 1, (5, 8))
    assert np.array_equal(forward(model, batch), forward(model.copy(), batch))
    seeded = init_model(dense_preset(16, 3, 8), seed=11)
    assert seeded.same_words(init_model(dense_preset(16, 3, 8), seed=11))


def test_forward_rejects_wrong_shapes(dense_model):
    with pytest.raises(ShapeError):
        forward(dense_model, np.zeros((3, 7)))
    with pytest.raises(ShapeError):
        forward(dense_model, np.zeros(8))


def test_gradients_vanish_when_predictions_match(dense_model, rng):
    batch = rng.uniform(-1, 1, (4, 8))
    grads = backward(dense_model, batch, forward(dense_model, batch))
    assert all(not g.any() for g in grads.weights + grads.biases)


def test_single_linear_unit_gradient():
    w, x, t = 0.375, 0.5, 0.8
    model = Model((LayerSpec.dense(1, 1, IDENTITY),), [[[w]]], [[0.0]])
    grads = backward(model, [[x]], [[t]])
    assert grads.weights[0][0, 0] == pytest.approx(2 * (w * x - t) * x)
    assert grads.biases[0][0] == pytest.approx(2 * (w * x - t))


def _finite_difference_check(layers, batch, targets, rng):
    weights = [rng.uniform(-0.3, 0.3, spec.weight_shape) for spec in layers]
    biases = [rng.uniform(-0.1, 0.1, spec.bias_shape) for spec in layers]
    sigma = [1.0] * len(layers)
    _, grads = gradients_with(layers, weights, biases, sigma, batch, targets)
    eps = 1e-6
    for params, analytic in ((weights, grads.weights), (biases, grads.biases)):
        for tensor, expected in zip(params, analytic):
            numeric = np.zeros_like(tensor)
            for idx in np.ndindex(tensor.shape):
                saved = tensor[idx]
                tensor[idx] = saved + eps
                up = loss_with(layers, weights, biases, sigma, batch, targets)
                tensor[idx] = saved - eps
                down = loss_with(layers, weights, biases, sigma, batch, targets)
                tensor[idx] = saved
                numeric[idx] = (up - down) / (2 * eps)
            np.testing.assert_allclose(expected, numeric, rtol=1e-3, atol=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_dense_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    layers = (LayerSpec.dense(5, 4), LayerSpec.dense(4, 3, IDENTITY))
    _finite_difference_check(layers, rng.uniform(-0.9, 0.9, (6, 5)), rng.uniform(-0.5, 0.5, (6, 3)), rng)


@pytest.mark.parametrize("seed", range(10))
def test_conv_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    layers = (LayerSpec.conv1d(1, 2, 3), LayerSpec.conv1d(2, 1, 5, IDENTITY))
    _finite_difference_check(layers, rng.uniform(-0.9, 0.9, (3, 8)), rng.uniform(-0.5, 0.5, (3, 8)), rng)


def test_train_step_at_32_bits_is_plain_sgd(make_model, rng):
    model = make_model((LayerSpec.dense(6, 4), LayerSpec.dense(4, 6, IDENTITY)), x=32)
    batch, targets = rng.uniform(-1, 1, (8, 6)), rng.uniform(-0.5, 0.5, (8, 6))
    config = TrainConfig(x=32, learning_rate=0.1)
    _, grads = gradients_with(model.layers, model.weights, model.biases, model.sigma, batch, targets)
    # dense layers step along the per-frame gradient: 6 outputs per frame
    expected = [np.clip(w - 0.1 * (6.0 * d), -1.0, 1.0).astype(np.float32) for w, d in zip(model.weights, grads.weights)]
    stepped = train_step(model, batch, targets, config)
    for got, want in zip(stepped.weights, expected):
        assert np.array_equal(words_of(got), words_of(want))


def test_train_step_at_9_bits_leaves_sign_exponent_only(make_model, rng):
    model = make_model((LayerSpec.dense(6, 4), LayerSpec.dense(4, 6, IDENTITY)), x=32)
    config = TrainConfig(x=9, learning_rate=0.5)
    for _ in range(3):
        model = train_step(model, rng.uniform(-1, 1, (8, 6)), rng.uniform(-1, 1, (8, 6)), config)
        words = model.all_words()
        assert not fraction_field(words).any()
        assert np.all(np.abs(model.all_words().view(np.float32)) <= 1.0)


def test_train_step_with_zero_learning_rate_keeps_quantized_model(small_trained_model, rng):
    config = TrainConfig(x=9, learning_rate=0.0)
    stepped = train_step(small_trained_model, rng.uniform(-1, 1, (4, 16)), rng.uniform(-1, 1, (4, 16)), config)
    assert stepped.same_words(small_trained_model)


def test_train_step_guards_divergence(small_trained_model):
    batch = np.full((2, 16), np.nan)
    with pytest.raises(DivergenceError):
        train_step(small_trained_model, batch, np.zeros((2, 16)), TrainConfig())


def test_train_reduces_loss(rng):
    inputs = rng.uniform(-1, 1, (128, 8))
    targets = 0.5 * inputs
    model = init_model((LayerSpec.dense(8, 8, IDENTITY),), seed=2, x=32)
    result = train(model, inputs, targets, TrainConfig(x=32, learning_rate=0.1, epochs=10))
    assert len(result.losses) == 10
    assert result.losses[-1] < result.losses[0]
    assert evaluate_mse(result.model, inputs, targets) < evaluate_mse(model, inputs, targets)


def test_init_model_scales_by_fan_in_and_quantizes():
    model = init_model(conv_preset(3, 4, 5), seed=4, input_peak=0.8)
    assert model.sigma[0] == pytest.approx(0.8, rel=1e-7)
    assert model.sigma[1:] == [1.0, 1.0]
    assert not fraction_field(model.all_words()).any()
    for spec, w in zip(model.layers, model.weights):
        # rounding to a power of two at most doubles a magnitude
        assert np.abs(w).max() <= 1.0 / math.sqrt(spec.fan_in)


def test_presets_chain():
    dense = dense_preset(64, 3, 32)
    assert [(s.in_size, s.out_size) for s in dense] == [(64, 32), (32, 32), (32, 64)]
    assert dense[-1].activation == IDENTITY
    conv = conv_preset(3, 8, 9)
    assert [(s.in_size, s.out_size, s.kernel_length) for s in conv] == [(1, 8, 9), (8, 8, 9), (8, 1, 9)]


def test_worked_example_through_one_layer():
    model = Model((LayerSpec.dense(1, 1, IDENTITY),), [[[-0.125]]], [[0.0]])
    engine = build_inference_model(model)
    outputs, counter = engine.run(np.array([[-0.8765]], dtype=np.float32))
    assert int(words_of(outputs)[0, 0]) == float_to_word(0.1095625)
    assert counter.total == 0
    assert engine.sigma_prime == (2.0 ** 64,)


def test_build_inference_model_rejects_fractions(make_model):
    model = make_model((LayerSpec.dense(4, 4),), x=20)
    with pytest.raises(FractionNotZeroError):
        build_inference_model(model)


@pytest.mark.parametrize("index", range(10))
def test_inference_engines_agree_bitwise(make_model, rng, index):
    if index % 2:
        layers = (LayerSpec.dense(12, 10), LayerSpec.dense(10, 10), LayerSpec.dense(10, 12, IDENTITY))
        batch = rng.uniform(-1, 1, (100, 12)).astype(np.float32)
    else:
        layers = (LayerSpec.conv1d(1, 3, 5), LayerSpec.conv1d(3, 2, 3), LayerSpec.conv1d(2, 1, 3, IDENTITY))
        batch = rng.uniform(-1, 1, (100, 16)).astype(np.float32)
    model = make_model(layers, sigma=[0.99] + [1.0] * (len(layers) - 1))
    expected, native_flush = build_native_model(model).run(batch)
    actual, flush = build_inference_model(model).run(batch)
    assert np.array_equal(words_of(actual), words_of(expected))
    assert flush.total == 0 and native_flush.total == 0


def test_native_engine_flushes_the_same_operands():
    model = Model((LayerSpec.dense(2, 1, IDENTITY),), [[[0.5, 2.0 ** -64]]], [[0.0]])
    native = build_native_model(model)
    seofp = build_inference_model(model)
    assert native.flushed_parameters == seofp.flushed_parameters == 1
    batch = np.array([[2.0 ** -66, 0.5]], dtype=np.float32)
    (expected, native_flush), (actual, flush) = native.run(batch), seofp.run(batch)
    assert np.array_equal(words_of(actual), words_of(expected))
    assert native_flush.inputs == flush.inputs == 1


def test_quantized_training_model_feeds_inference(rng):
    model = fraction_quantize_model(init_model(dense_preset(16, 2, 8), seed=5, x=32), QuantSpec(9))
    batch = rng.uniform(-1, 1, (10, 16))
    assert np.array_equal(words_of(build_native_model(model).predict(batch)),
                          words_of(build_inference_model(model).predict(batch)))


def test_conv_steps_are_averaged_over_positions(rng):
    layers = (LayerSpec.conv1d(1, 1, 3, IDENTITY),)
    model = Model(layers, [[[[0.25, 0.5, 0.125]]]], [[0.0]])
    batch, targets = rng.uniform(-1, 1, (4, 20)), rng.uniform(-0.5, 0.5, (4, 20))
    _, grads = gradients_with(layers, model.weights, model.biases, model.sigma, batch, targets)
    stepped = train_step(model, batch, targets, TrainConfig(x=32, learning_rate=0.2))
    # 20 outputs per frame, each tap shared over 20 positions
    expected = np.clip(model.weights[0] - 0.2 * (1.0 * grads.weights[0]), -1.0, 1.0).astype(np.float32)
    assert np.array_equal(words_of(stepped.weights[0]), words_of(expected))


def test_steps_below_the_smallest_normal_flush_to_zero():
    model = Model((LayerSpec.dense(1, 1, IDENTITY),), [[[2.0 ** -126]]], [[0.0]])
    # w - lr * 2 * (w - t) == t, and the bias lands on -t; both below 2^-126
    stepped = train_step(model, [[1.0]], [[2.0 ** -127]], TrainConfig(x=32, learning_rate=0.5))
    assert not stepped.all_words().any()


def test_cosine_schedule_decays_from_the_learning_rate():
    config = TrainConfig(learning_rate=0.2, epochs=4)
    assert [config.learning_rate_at(e) for e in range(4)] == pytest.approx([0.2, 0.170711, 0.1, 0.029289], abs=1e-6)
    constant = TrainConfig(learning_rate=0.2, epochs=4, schedule="constant")
    assert {constant.learning_rate_at(e) for e in range(4)} == {0.2}
    with pytest.raises(ValueError):
        TrainConfig(schedule="step")
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)


def test_training_on_generated_speech_beats_trivial_predictors():
    dataset = generate(seed=3, n_utterances=16, samples=2048)
    inputs, targets = dataset.frames("train", 32)
    test_inputs, test_targets = dataset.frames("test", 32)
    noisy_mse = float(np.mean((test_inputs.astype(np.float64) - test_targets) ** 2))
    silent_mse = float(np.mean(test_targets.astype(np.float64) ** 2))
    layers = dense_preset(32, 2, 32)
    peak = float(np.abs(inputs).max())
    config = TrainConfig(epochs=15, batch_size=32, seed=3)

    baseline = train(init_model(layers, 3, 32, peak), inputs, targets, config.model_copy(update={"x": 32}))
    baseline_mse = evaluate_mse(baseline.model, test_inputs, test_targets)
    assert baseline.losses[-1] < baseline.losses[0]
    assert baseline_mse < 0.8 * noisy_mse < silent_mse

    in_loop = train(init_model(layers, 3, 9, peak), inputs, targets, config)
    in_loop_mse = evaluate_mse(in_loop.model, test_inputs, test_targets)
    removed_mse = evaluate_mse(direct_remove_model(baseline.model, QuantSpec(9)), test_inputs, test_targets)
    assert not fraction_field(in_loop.model.all_words()).any()
    assert in_loop_mse < noisy_mse
    assert in_loop_mse <= removed_mse
