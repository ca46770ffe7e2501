import numpy as np
import pytest

from src.network import LayerSpec, Model
from src.nn import init_model
from src.quant import QuantSpec, fraction_quantize_model


@pytest.fixture(autouse=True)
def registry(tmp_path, monkeypatch):
    """Every test records runs into its own SQLite file"""
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    monkeypatch.setenv("DATABASE_URL", url)
    return url


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_model(rng, layers, x: int = 9, sigma=None) -> Model:
    """Weights and biases spread over [-1, 1] in log scale, quantized at ``x``"""
    layers = tuple(layers)
    def draw(shape):
        magnitude = 2.0 ** rng.uniform(-20, 0, shape)
        return np.where(rng.random(shape) < 0.5, -magnitude, magnitude)
    model = Model(layers, [draw(s.weight_shape) for s in layers], [draw(s.bias_shape) * 0.1 for s in layers],
                  sigma or [1.0] * len(layers))
    return fraction_quantize_model(model, QuantSpec(x))


@pytest.fixture
def make_model(rng):
    return lambda layers, x=9, sigma=None: random_model(rng, layers, x, sigma)


@pytest.fixture
def dense_model(rng):
    return random_model(rng, (LayerSpec.dense(8, 6), LayerSpec.dense(6, 4, "identity")))


@pytest.fixture
def conv_model(rng):
    return random_model(rng, (LayerSpec.conv1d(1, 3, 5), LayerSpec.conv1d(3, 1, 3, "identity")))


@pytest.fixture
def small_trained_model():
    return init_model((LayerSpec.dense(16, 8), LayerSpec.dense(8, 16, "identity")), seed=3, x=9)
