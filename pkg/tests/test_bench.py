import numpy as np
import pytest

from src import bench
from src.bench import BenchReport, deepen, run_bench, time_call
from src.errors import ShapeError
from src.network import LayerSpec


def test_time_call_warms_up_then_times():
    calls = []
    times = time_call(lambda: calls.append(1), repeats=3)
    assert len(calls) == 4
    assert len(times) == 3 and all(t >= 0 for t in times)


def test_deepen_adds_hidden_layers(dense_model, conv_model):
    deeper = deepen(dense_model)
    assert len(deeper.layers) == len(dense_model.layers) + 2
    assert deeper.layers[-1] == dense_model.layers[-1]
    assert deeper.layers[1] == LayerSpec.dense(6, 6)
    assert len(deepen(conv_model, extra=1).layers) == 3


def test_bench_report(dense_model, rng):
    inputs = rng.uniform(-1, 1, (32, 8))
    report = run_bench(dense_model, inputs, repeats=2)
    assert isinstance(report, BenchReport)
    assert report.equivalent and report.mismatched_outputs == 0
    assert report.threads == 1
    assert report.speedup == pytest.approx(report.baseline_ms_per_input_second / report.seofp_ms_per_input_second)
    assert "perf_counter" in report.methodology and "2 repeats" in report.methodology
    assert report.deeper.layers == 4
    assert report.deeper.baseline_ms_per_input_second == report.baseline_ms_per_input_second


def test_bench_without_deeper_check(conv_model, rng):
    report = run_bench(conv_model, rng.uniform(-1, 1, (4, 16)), repeats=1, deeper=False)
    assert report.deeper is None
    assert report.model_dump()["flush_to_zero"] == report.flush_to_zero


def test_bench_rejects_bad_input(dense_model):
    with pytest.raises(ShapeError):
        run_bench(dense_model, np.zeros(8))
    with pytest.raises(ShapeError):
        run_bench(dense_model, np.zeros((2, 8)), repeats=0)


def test_headline_figures_are_means_with_medians_alongside(dense_model, monkeypatch):
    timings = iter([[1.0, 2.0, 6.0], [1.0, 1.0, 4.0]])
    monkeypatch.setattr(bench, "time_call", lambda fn, repeats: next(timings))
    # 4 frames of 8 samples at 32 Hz is one second of audio
    report = run_bench(dense_model, np.zeros((4, 8)), sample_rate=32, repeats=3, deeper=False)
    assert report.baseline_ms_per_input_second == pytest.approx(3000.0)
    assert report.seofp_ms_per_input_second == pytest.approx(2000.0)
    assert report.baseline_median_ms_per_input_second == pytest.approx(2000.0)
    assert report.seofp_median_ms_per_input_second == pytest.approx(1000.0)
    assert report.speedup == pytest.approx(1.5)
    assert "mean wall time" in report.methodology
