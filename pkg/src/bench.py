"""Throughput comparison of float32 multiply inference against integer-add inference.

Both engines are timed on the same frames with the same accumulation order.
"""

import logging
import math
import statistics
import time
from typing import Callable

import numpy as np
from pydantic import BaseModel

from src.bitcore import words_of
from src.errors import ShapeError
from src.network import LayerSpec, Model
from src.nn import build_inference_model, build_native_model
from src.quant import QuantSpec, fraction_quantize_model

logger = logging.getLogger(__name__)

METHODOLOGY = (
    "single thread, no parallelism; each engine is run once as warm-up, then "
    "timed with time.perf_counter over {repeats} repeats on the same {frames} "
    "frames ({seconds:.3f} s of audio at {sample_rate} Hz); the headline figures "
    "are the mean wall time per second of input audio (medians reported "
    "alongside), and the speedup is the ratio of the means. Both engines accumulate "
    "in float32 in the same order; the integer-add engine replaces every "
    "multiply by a uint32 addition of pre-adjusted words."
)


class DeeperCheck(BaseModel):
    layers: int
    baseline_ms_per_input_second: float
    seofp_ms_per_input_second: float
    speedup: float


class BenchReport(BaseModel):
    baseline_ms_per_input_second: float
    seofp_ms_per_input_second: float
    baseline_median_ms_per_input_second: float
    seofp_median_ms_per_input_second: float
    speedup: float
    flush_to_zero: int
    equivalent: bool
    mismatched_outputs: int
    repeats: int
    threads: int = 1
    methodology: str
    deeper: DeeperCheck | None = None


def time_call(fn: Callable[[], object], repeats: int) -> list[float]:
    """Wall times of ``repeats`` calls after one warm-up call"""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def deepen(model: Model, extra: int = 2, seed: int = 1) -> Model:
    """Insert ``extra`` hidden layers of the model's hidden width before its last layer"""
    last = model.layers[-1]
    width = last.in_size
    rng = np.random.default_rng(seed)
    added = [LayerSpec(last.kind, width, width, last.kernel_length) for _ in range(extra)]
    weights = [rng.uniform(-0.5, 0.5, spec.weight_shape) / math.sqrt(spec.fan_in) for spec in added]
    biases = [np.zeros(spec.bias_shape) for spec in added]
    deeper = Model(
        model.layers[:-1] + tuple(added) + (last,),
        model.weights[:-1] + weights + [model.weights[-1]],
        model.biases[:-1] + biases + [model.biases[-1]],
        model.sigma[:-1] + [1.0] * extra + [model.sigma[-1]],
    )
    return fraction_quantize_model(deeper, QuantSpec(9))


def _frames_seconds(inputs: np.ndarray, sample_rate: int) -> float:
    return inputs.shape[0] * inputs.shape[-1] / sample_rate


def _ms_per_second(times: list[float], seconds: float, average=statistics.fmean) -> float:
    return average(times) * 1000.0 / seconds


def run_bench(model: Model, inputs, sample_rate: int = 16000, repeats: int = 5,
              deeper: bool = True) -> BenchReport:
    inputs = np.asarray(inputs, dtype=np.float32)
    if inputs.ndim not in (2, 3) or inputs.shape[0] == 0:
        raise ShapeError(f"bench needs a non-empty batch of frames, got shape {inputs.shape}")
    if repeats < 1:
        raise ShapeError("repeats must be at least 1")
    seconds = _frames_seconds(inputs, sample_rate)
    native = build_native_model(model)
    seofp = build_inference_model(model)
    native_times = time_call(lambda: native.run(inputs), repeats)
    seofp_times = time_call(lambda: seofp.run(inputs), repeats)
    baseline = _ms_per_second(native_times, seconds)
    adder = _ms_per_second(seofp_times, seconds)

    expected, _ = native.run(inputs)
    actual, counter = seofp.run(inputs)
    mismatched = int(np.count_nonzero(words_of(expected) != words_of(actual)))
    report = BenchReport(
        baseline_ms_per_input_second=baseline,
        seofp_ms_per_input_second=adder,
        baseline_median_ms_per_input_second=_ms_per_second(native_times, seconds, statistics.median),
        seofp_median_ms_per_input_second=_ms_per_second(seofp_times, seconds, statistics.median),
        speedup=baseline / adder,
        flush_to_zero=counter.total,
        equivalent=mismatched == 0,
        mismatched_outputs=mismatched,
        repeats=repeats,
        methodology=METHODOLOGY.format(repeats=repeats, frames=inputs.shape[0],
                                       seconds=seconds, sample_rate=sample_rate),
    )
    if deeper and model.layers:
        # k+2 integer-add layers against the k-layer multiply baseline
        bigger = build_inference_model(deepen(model))
        deep_adder = _ms_per_second(time_call(lambda: bigger.run(inputs), repeats), seconds)
        report.deeper = DeeperCheck(
            layers=len(bigger.layers),
            baseline_ms_per_input_second=baseline,
            seofp_ms_per_input_second=deep_adder,
            speedup=baseline / deep_adder,
        )
    logger.info(f"bench: baseline {baseline:.3f} ms/s, seofp {adder:.3f} ms/s, "
                f"speedup {report.speedup:.3f}, equivalent={report.equivalent}")
    return report
