"""Dense / conv1d regression networks trained with quantization in the loop.

Training runs in float64 on the float32 parameter values: after every SGD
update the parameters are clamped to [-1, 1] and fraction-quantized, and the
quantized parameters feed the next forward pass.

Inference runs in float32 through one of two engines that share layout and
accumulation order: ``NativeInferenceModel`` multiplies, ``SeofpInferenceModel``
(from ``build_inference_model``) adds adjusted words. Their outputs are
bit-identical when no operand is flushed.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from src.arith import (
    INPUT_SHIFT,
    PARAMETER_SHIFT,
    FlushCounter,
    adjust_input_array,
    adjust_parameter_array,
    seofp_multiply_array,
)
from src.bitcore import exponent_field, floats_of, fraction_field, words_of, zero_mask
from src.config import TrainConfig
from src.errors import DivergenceError, FractionNotZeroError, ShapeError
from src.network import CLAMPED, CONV1D, DENSE, IDENTITY, LayerSpec, Model
from src.quant import QuantSpec, fraction_quantize_model

logger = logging.getLogger(__name__)


class Gradients(NamedTuple):
    weights: list
    biases: list


class TrainResult(NamedTuple):
    model: Model
    losses: list


# layout helpers ---------------------------------------------------------------

def _patches(u: np.ndarray, k: int) -> np.ndarray:
    """(n, C, L) -> (n, L, C*k) zero-padded windows, taps ordered (channel, tap)"""
    n, c, length = u.shape
    pad = k // 2
    padded = np.pad(u, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)  # (n, C, L, k)
    return windows.transpose(0, 2, 1, 3).reshape(n, length, c * k)


def _unpatch(d_cols: np.ndarray, c: int, k: int) -> np.ndarray:
    """Adjoint of ``_patches``: (n, L, C*k) -> (n, C, L)"""
    n, length, _ = d_cols.shape
    pad = k // 2
    d_cols = d_cols.reshape(n, length, c, k)
    d_padded = np.zeros((n, c, length + 2 * pad), dtype=d_cols.dtype)
    for j in range(k):
        d_padded[:, :, j:j + length] += d_cols[:, :, :, j].transpose(0, 2, 1)
    return d_padded[:, :, pad:pad + length]


def _layer_rows(spec: LayerSpec, u: np.ndarray) -> tuple[np.ndarray, int]:
    """Rows of layer inputs for the weight matrix, plus the conv length (0 for dense)"""
    n = u.shape[0]
    if spec.kind == DENSE:
        rows = u.reshape(n, -1)
        if rows.shape[1] != spec.in_size:
            raise ShapeError(f"dense layer expects {spec.in_size} inputs, got {rows.shape[1]}")
        return rows, 0
    u3 = u[:, None, :] if u.ndim == 2 else u
    if u3.ndim != 3 or u3.shape[1] != spec.in_size:
        raise ShapeError(f"conv1d layer expects {spec.in_size} channels, got shape {u.shape}")
    length = u3.shape[2]
    return _patches(u3, spec.kernel_length).reshape(n * length, -1), length


def _layer_output(spec: LayerSpec, flat: np.ndarray, n: int, length: int) -> np.ndarray:
    if spec.kind == DENSE:
        return flat
    return flat.reshape(n, length, spec.out_size).transpose(0, 2, 1)


def _check_batch(batch) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim not in (2, 3):
        raise ShapeError(f"batch must be (n, features) or (n, channels, length), got {batch.shape}")
    return batch


# training path ----------------------------------------------------------------

@dataclass
class _Cache:
    shape_in: tuple
    in_mask: np.ndarray
    rows: np.ndarray
    length: int
    act_mask: np.ndarray | None


def _forward_trace(layers, weights, biases, sigma, batch):
    x = _check_batch(batch).astype(np.float64)
    n = x.shape[0]
    caches = []
    for spec, w, b, s in zip(layers, weights, biases, sigma):
        r = x / s
        u = np.clip(r, -1.0, 1.0)
        rows, length = _layer_rows(spec, u)
        w_flat = np.asarray(w, dtype=np.float64).reshape(spec.out_size, -1)
        z = _layer_output(spec, rows @ w_flat.T + np.asarray(b, dtype=np.float64), n, length)
        act_mask = None
        if spec.activation == CLAMPED:
            act_mask = (z > -1.0) & (z < 1.0)
            z = np.clip(z, -1.0, 1.0)
        caches.append(_Cache(x.shape, (r > -1.0) & (r < 1.0), rows, length, act_mask))
        x = z
    return x.reshape(n, -1), caches


def _mse(predictions: np.ndarray, targets) -> tuple[float, np.ndarray]:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size != predictions.size:
        raise ShapeError(f"targets have {targets.size} values, predictions {predictions.size}")
    diff = predictions - targets.reshape(predictions.shape)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_with(layers, weights, biases, sigma, batch, targets) -> float:
    predictions, _ = _forward_trace(layers, weights, biases, sigma, batch)
    return _mse(predictions, targets)[0]


def gradients_with(layers, weights, biases, sigma, batch, targets) -> tuple[float, Gradients]:
    """MSE loss and its gradient for explicit parameter arrays (any float dtype)"""
    predictions, caches = _forward_trace(layers, weights, biases, sigma, batch)
    loss, g = _mse(predictions, targets)
    n = predictions.shape[0]
    d_weights, d_biases = [], []
    for spec, w, s, cache in reversed(list(zip(layers, weights, sigma, caches))):
        out_shape = (n, spec.out_size) if spec.kind == DENSE else (n, spec.out_size, cache.length)
        g = g.reshape(out_shape)
        if cache.act_mask is not None:
            g = g * cache.act_mask
        g_flat = g if spec.kind == DENSE else g.transpose(0, 2, 1).reshape(-1, spec.out_size)
        w_flat = np.asarray(w, dtype=np.float64).reshape(spec.out_size, -1)
        d_weights.append((g_flat.T @ cache.rows).reshape(spec.weight_shape))
        d_biases.append(g_flat.sum(axis=0))
        d_rows = g_flat @ w_flat
        if spec.kind == DENSE:
            d_u = d_rows.reshape(cache.shape_in)
        else:
            d_u = _unpatch(d_rows.reshape(n, cache.length, -1), spec.in_size, spec.kernel_length)
            d_u = d_u.reshape(cache.shape_in)
        g = d_u * cache.in_mask / s
    d_weights.reverse()
    d_biases.reverse()
    return loss, Gradients(d_weights, d_biases)


def forward(model: Model, batch) -> np.ndarray:
    """Training-path predictions, flattened to (n, features)"""
    return _forward_trace(model.layers, model.weights, model.biases, model.sigma, batch)[0]


def backward(model: Model, batch, targets) -> Gradients:
    return gradients_with(model.layers, model.weights, model.biases, model.sigma, batch, targets)[1]


def evaluate_mse(model: Model, inputs, targets) -> float:
    return loss_with(model.layers, model.weights, model.biases, model.sigma, inputs, targets)


_TINY = float(np.finfo(np.float32).tiny)


def _step_scales(layers, batch, targets) -> list[float]:
    """Per layer: MSE gradient -> per-frame gradient, averaged over shared conv positions"""
    batch = np.asarray(batch)
    features = np.asarray(targets).size / batch.shape[0]
    return [features / (batch.shape[-1] if spec.kind == CONV1D else 1) for spec in layers]


def _as_trained(values: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1]; magnitudes below the smallest normal single become 0"""
    values = np.clip(values, -1.0, 1.0)
    return np.where(np.abs(values) < _TINY, 0.0, values).astype(np.float32)


def _sgd_step(model: Model, batch, targets, config: TrainConfig, lr: float,
              velocity: Gradients | None = None) -> tuple[Model, float, Gradients]:
    loss, grads = gradients_with(model.layers, model.weights, model.biases, model.sigma, batch, targets)
    if not math.isfinite(loss):
        raise DivergenceError(f"loss is {loss}; lower the learning rate (now {config.learning_rate})")
    scales = _step_scales(model.layers, batch, targets)
    steps = Gradients([s * d for s, d in zip(scales, grads.weights)],
                      [s * d for s, d in zip(scales, grads.biases)])
    if velocity is not None:
        mu = config.momentum
        steps = Gradients([mu * v + d for v, d in zip(velocity.weights, steps.weights)],
                          [mu * v + d for v, d in zip(velocity.biases, steps.biases)])
    weights = [_as_trained(w - lr * d) for w, d in zip(model.weights, steps.weights)]
    biases = [_as_trained(b - lr * d) for b, d in zip(model.biases, steps.biases)]
    updated = Model(model.layers, weights, biases, list(model.sigma))
    return fraction_quantize_model(updated, QuantSpec.of(config.x)), loss, steps


def train_step(model: Model, batch, targets, config: TrainConfig) -> Model:
    """One SGD update at ``config.learning_rate``, clamp to [-1, 1], then
    fraction quantization at ``config.x``"""
    return _sgd_step(model, batch, targets, config, config.learning_rate)[0]


def train(model: Model, inputs, targets, config: TrainConfig) -> TrainResult:
    """Shuffled mini-batch SGD with momentum; the momentum buffer lives across
    steps while the parameters themselves are the quantized ones"""
    inputs = _check_batch(inputs)
    targets = np.asarray(targets)
    rng = np.random.default_rng(config.seed)
    losses = []
    velocity = None
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model, loss, velocity = _sgd_step(model, inputs[idx], targets[idx], config, lr, velocity)
            total += loss * len(idx)
        losses.append(total / max(n, 1))
        logger.info(f"epoch {epoch + 1}/{config.epochs}: x={config.x} lr={lr:.4g} loss={losses[-1]:.6g}")
    return TrainResult(model, losses)


def init_model(layers, seed: int, x: int = 9, input_peak: float = 1.0) -> Model:
    """Uniform [-0.5, 0.5] / sqrt(fan_in) weights, zero biases, quantized at ``x``.

    ``input_peak`` becomes layer 0's sigma so normalized inputs span [-1, 1].
    """
    layers = tuple(layers)
    rng = np.random.default_rng(seed)
    weights = [rng.uniform(-0.5, 0.5, spec.weight_shape) / math.sqrt(spec.fan_in) for spec in layers]
    biases = [np.zeros(spec.bias_shape) for spec in layers]
    sigma = [float(input_peak)] + [1.0] * (len(layers) - 1) if layers else []
    return fraction_quantize_model(Model(layers, weights, biases, sigma), QuantSpec.of(x))


def dense_preset(frame: int, layers: int = 2, width: int = 64) -> tuple[LayerSpec, ...]:
    if layers < 1:
        raise ShapeError("need at least one layer")
    if layers == 1:
        return (LayerSpec.dense(frame, frame, IDENTITY),)
    specs = [LayerSpec.dense(frame, width)]
    specs += [LayerSpec.dense(width, width) for _ in range(layers - 2)]
    specs.append(LayerSpec.dense(width, frame, IDENTITY))
    return tuple(specs)


def conv_preset(layers: int = 3, filters: int = 8, kernel: int = 9) -> tuple[LayerSpec, ...]:
    if layers < 1:
        raise ShapeError("need at least one layer")
    if layers == 1:
        return (LayerSpec.conv1d(1, 1, kernel, IDENTITY),)
    specs = [LayerSpec.conv1d(1, filters, kernel)]
    specs += [LayerSpec.conv1d(filters, filters, kernel) for _ in range(layers - 2)]
    specs.append(LayerSpec.conv1d(filters, 1, kernel, IDENTITY))
    return tuple(specs)


# inference path ---------------------------------------------------------------

def _mac(rows: np.ndarray, weights: np.ndarray, product) -> np.ndarray:
    """acc[i, o] = sum_j product(rows[i, j], weights[o, j]), float32, j ascending"""
    acc = np.zeros((rows.shape[0], weights.shape[0]), dtype=np.float32)
    for j in range(rows.shape[1]):
        acc += product(rows[:, j][:, None], weights[:, j][None, :])
    return acc


@dataclass(frozen=True)
class _InferenceLayer:
    spec: LayerSpec
    weights: np.ndarray  # (out, fan_in), float32 or adjusted uint32 words
    bias: np.ndarray
    sigma: np.float32


@dataclass(frozen=True)
class InferenceModel:
    """Immutable float32 evaluator; subclasses choose the multiply"""

    layers: tuple
    flushed_parameters: int = 0
    sigma_prime: tuple = field(default=())

    def _prepare(self, u: np.ndarray, counter: FlushCounter) -> np.ndarray:
        raise NotImplementedError

    def _product(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def run(self, batch) -> tuple[np.ndarray, FlushCounter]:
        """Outputs (n, features) float32 and the input flush count of this run"""
        x = _check_batch(batch).astype(np.float32)
        n = x.shape[0]
        counter = FlushCounter(parameters=self.flushed_parameters)
        for layer in self.layers:
            u = np.clip(x / layer.sigma, np.float32(-1.0), np.float32(1.0)).astype(np.float32)
            operands = self._prepare(u, counter)
            rows, length = _layer_rows(layer.spec, operands)
            flat = _mac(rows, layer.weights, self._product) + layer.bias
            z = _layer_output(layer.spec, flat, n, length)
            if layer.spec.activation == CLAMPED:
                z = np.clip(z, np.float32(-1.0), np.float32(1.0))
            x = z.astype(np.float32)
        return x.reshape(n, -1), counter

    def predict(self, batch) -> np.ndarray:
        return self.run(batch)[0]


class NativeInferenceModel(InferenceModel):
    """float32 multiplies; operands that the integer-add path would flush are zeroed"""

    def _prepare(self, u, counter):
        words = words_of(u)
        exponent = exponent_field(words)
        flushed = ~zero_mask(words) & (exponent <= INPUT_SHIFT)
        counter.inputs += int(flushed.sum())
        return np.where(flushed, np.float32(0.0), u)

    def _product(self, a, w):
        return a * w


class SeofpInferenceModel(InferenceModel):
    """Integer addition of adjusted words in place of every multiply"""

    def _prepare(self, u, counter):
        return adjust_input_array(words_of(u), counter)

    def _product(self, a, w):
        return floats_of(seofp_multiply_array(a, w))


def _require_sign_exponent_only(model: Model) -> None:
    for layer, name, tensor in model.tensors():
        if np.any(fraction_field(words_of(tensor)) != 0):
            raise FractionNotZeroError(
                f"layer {layer} {name} has fraction bits set; train or quantize with x=9 first")


def _inference_layers(model: Model, weight_fn) -> tuple[tuple, int]:
    counter = FlushCounter()
    layers = []
    for spec, w, b, s in zip(model.layers, model.weights, model.biases, model.sigma):
        flat = w.reshape(spec.out_size, -1)
        layers.append(_InferenceLayer(spec, weight_fn(flat, counter), b.astype(np.float32), np.float32(s)))
    return tuple(layers), counter.parameters


def build_native_model(model: Model) -> NativeInferenceModel:
    def weights(flat, counter):
        words = words_of(flat)
        flushed = ~zero_mask(words) & (exponent_field(words) <= PARAMETER_SHIFT)
        counter.parameters += int(flushed.sum())
        return np.where(flushed, np.float32(0.0), flat).astype(np.float32)

    layers, flushed = _inference_layers(model, weights)
    return NativeInferenceModel(layers, flushed)


def build_inference_model(model: Model) -> SeofpInferenceModel:
    """Adjust a sign-exponent-only model for integer-add inference.

    Weights are divided by 2^63 (exponent - 63); each layer's sigma becomes
    sigma * 2^64, which the engine realizes as a 64 exponent decrement of
    every normalized activation. Biases are added, not multiplied, and stay.
    """
    _require_sign_exponent_only(model)

    def weights(flat, counter):
        return adjust_parameter_array(words_of(flat), counter).reshape(flat.shape)

    layers, flushed = _inference_layers(model, weights)
    if flushed:
        logger.warning(f"{flushed} parameters below 2^-63 flushed to zero")
    sigma_prime = tuple(math.ldexp(s, INPUT_SHIFT) for s in model.sigma)
    return SeofpInferenceModel(layers, flushed, sigma_prime)
