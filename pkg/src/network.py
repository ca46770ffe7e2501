"""Layer and model containers.

Parameters are stored as float32 arrays (one weight tensor and one bias
vector per layer); their uint32 words are what the quantizers and the
integer-add kernel operate on.
"""

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from src.bitcore import canonical_zero, check_normal_words, floats_of, words_of
from src.errors import SeofpError, ShapeError

DENSE = "dense"
CONV1D = "conv1d"
IDENTITY = "identity"
CLAMPED = "clamped"

KINDS = (DENSE, CONV1D)
ACTIVATIONS = (IDENTITY, CLAMPED)


@dataclass(frozen=True)
class LayerSpec:
    """One layer.

    dense:  ``in_size`` inputs -> ``out_size`` units
    conv1d: ``in_size`` channels -> ``out_size`` filters of ``kernel_length``
            taps, zero padded so the output length equals the input length
    """

    kind: str
    in_size: int
    out_size: int
    kernel_length: int = 1
    activation: str = CLAMPED

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.in_size < 1 or self.out_size < 1 or self.kernel_length < 1:
            raise ShapeError(f"layer sizes must be positive: {self}")
        if self.kind == DENSE and self.kernel_length != 1:
            raise ShapeError("dense layers have kernel_length 1")
        if self.kind == CONV1D and self.kernel_length % 2 == 0:
            raise ShapeError("same-length padding needs an odd kernel_length")

    @classmethod
    def dense(cls, in_units: int, out_units: int, activation: str = CLAMPED) -> "LayerSpec":
        return cls(DENSE, in_units, out_units, 1, activation)

    @classmethod
    def conv1d(cls, in_channels: int, filters: int, kernel_length: int, activation: str = CLAMPED) -> "LayerSpec":
        return cls(CONV1D, in_channels, filters, kernel_length, activation)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == DENSE:
            return (self.out_size, self.in_size)
        return (self.out_size, self.in_size, self.kernel_length)

    @property
    def bias_shape(self) -> tuple[int, ...]:
        return (self.out_size,)

    @property
    def fan_in(self) -> int:
        return self.in_size * self.kernel_length


def _as_parameter(values, shape: tuple[int, ...], what: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float32)
    if array.shape != shape:
        raise ShapeError(f"{what} has shape {array.shape}, expected {shape}")
    words = words_of(array)
    try:
        check_normal_words(words)
    except SeofpError as e:
        raise type(e)(f"{what}: {e}") from None
    # -0 is stored as +0
    return floats_of(canonical_zero(words))


@dataclass
class Model:
    layers: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    sigma: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.sigma:
            self.sigma = [1.0] * len(self.layers)
        if not (len(self.weights) == len(self.biases) == len(self.sigma) == len(self.layers)):
            raise ShapeError("layers, weights, biases and sigma must have equal length")
        self.weights = [_as_parameter(w, spec.weight_shape, f"layer {i} weights")
                        for i, (spec, w) in enumerate(zip(self.layers, self.weights))]
        self.biases = [_as_parameter(b, spec.bias_shape, f"layer {i} bias")
                       for i, (spec, b) in enumerate(zip(self.layers, self.biases))]
        self.sigma = [float(np.float32(s)) for s in self.sigma]
        if any(not np.isfinite(s) or s <= 0 for s in self.sigma):
            raise ShapeError(f"sigma must be positive and finite: {self.sigma}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.kind == b.kind and a.out_size != b.in_size:
                raise ShapeError(f"layer {a} feeds {b}: size mismatch")

    @classmethod
    def zeros(cls, layers, sigma=None) -> "Model":
        layers = tuple(layers)
        return cls(
            layers,
            [np.zeros(spec.weight_shape, dtype=np.float32) for spec in layers],
            [np.zeros(spec.bias_shape, dtype=np.float32) for spec in layers],
            list(sigma) if sigma else [],
        )

    def tensors(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield i, "weights", w
            yield i, "bias", b

    def map_words(self, fn: Callable[[np.ndarray, int, str], np.ndarray]) -> "Model":
        """New model whose every tensor is ``fn(words, layer, name)``"""
        weights = [floats_of(fn(words_of(w), i, "weights")).reshape(w.shape)
                   for i, w in enumerate(self.weights)]
        biases = [floats_of(fn(words_of(b), i, "bias")).reshape(b.shape)
                  for i, b in enumerate(self.biases)]
        return Model(self.layers, weights, biases, list(self.sigma))

    def all_words(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0, dtype=np.uint32)
        return np.concatenate([words_of(t).ravel() for _, _, t in self.tensors()])

    @property
    def parameter_count(self) -> int:
        return sum(t.size for _, _, t in self.tensors())

    def copy(self) -> "Model":
        return Model(self.layers, [w.copy() for w in self.weights],
                     [b.copy() for b in self.biases], list(self.sigma))

    def same_words(self, other: "Model") -> bool:
        return (self.layers == other.layers
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(words_of(a), words_of(b))
                        for (_, _, a), (_, _, b) in zip(self.tensors(), other.tensors())))
