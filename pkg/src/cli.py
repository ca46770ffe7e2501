"""``seofp`` command line: data, training, quantization, packing, inference,
equivalence checks, benchmarks and reports.

Each ``cmd_*`` function is usable on its own (the tool server calls them) and
returns a plain dict or text; ``main`` wires them to argparse subcommands.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from sqlalchemy.exc import SQLAlchemyError

from src.arith import sign_truth_table
from src.bench import run_bench
from src.bitcore import fraction_field, words_of
from src.config import SCHEDULES, Settings, TrainConfig, get_settings
from src.datasets import TEST_SNR_LEVELS, Dataset, DatasetStore, generate, snr_db
from src.errors import SeofpError, ShapeError, VerificationError
from src.models import list_runs, record_run
from src.network import CONV1D, Model
from src.nn import (
    build_inference_model,
    build_native_model,
    conv_preset,
    dense_preset,
    evaluate_mse,
    forward,
    init_model,
    train,
)
from src.pack import ENCODINGS, FULL32, compression_ratio, pack_file, packed_size, unpack_file
from src.quant import QuantSpec, direct_remove_model, exponent_histogram, fraction_quantize_model
from src.report import (
    ReportBuilder,
    bitwidth_table,
    histogram_table,
    per_snr_table,
    runs_table,
    size_table,
    to_markdown,
)

logger = logging.getLogger(__name__)

SWEEP_BITS = (32, 26, 20, 14, 10, 9)
ARCHITECTURES = ("dense", "conv")
ENGINES = ("auto", "seofp", "native")


# helpers -----------------------------------------------------------------------

def _record(command: str, metrics: dict, **fields) -> None:
    try:
        record_run(command, metrics, database_url=get_settings().database_url, **fields)
    except SQLAlchemyError as e:
        logger.warning(f"run registry unavailable, {command} not recorded: {e}")


def load_dataset(path) -> Dataset:
    path = Path(path)
    return DatasetStore(str(path.parent)).load(str(path))


def build_layers(arch: str, frame: int, layers: int, width: int = 64, kernel: int = 9) -> tuple:
    if arch == "dense":
        return dense_preset(frame, layers, width)
    if arch == "conv":
        return conv_preset(layers, width, kernel)
    raise ShapeError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")


def is_sign_exponent_only(model: Model) -> bool:
    return not np.any(fraction_field(model.all_words()))


def _frame_of(model: Model, frame: int) -> int:
    first = model.layers[0]
    return frame if first.kind == CONV1D else first.in_size


def random_inputs(model: Model, count: int, length: int, seed: int) -> np.ndarray:
    """Uniform [-1, 1] inputs shaped for the model's first layer"""
    first = model.layers[0]
    shape = (count, first.in_size, length) if first.kind == CONV1D else (count, first.in_size)
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, shape).astype(np.float32)


def _inputs(model: Model, data: str | None, count: int, frame: int, seed: int) -> np.ndarray:
    if data:
        noisy, _ = load_dataset(data).frames("test", _frame_of(model, frame))
        return noisy[:count]
    return random_inputs(model, count, frame, seed)


def _engine(model: Model, engine: str):
    if engine == "auto":
        engine = "seofp" if is_sign_exponent_only(model) else "native"
    if engine == "seofp":
        return build_inference_model(model)
    if engine == "native":
        return build_native_model(model)
    raise ShapeError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")


def train_on(dataset: Dataset, layers: tuple, config: TrainConfig, frame: int):
    """Train from scratch on the train split; returns (TrainResult, test MSE)"""
    inputs, targets = dataset.frames("train", frame)
    test_inputs, test_targets = dataset.frames("test", frame)
    if len(inputs) == 0 or len(test_inputs) == 0:
        raise ShapeError("dataset needs utterances in both the train and the test split")
    peak = float(np.abs(inputs).max()) or 1.0
    model = init_model(layers, config.seed, config.x, peak)
    result = train(model, inputs, targets, config)
    return result, evaluate_mse(result.model, test_inputs, test_targets)


def bitwidth_sweep(dataset: Dataset, layers: tuple, config: TrainConfig, frame: int,
                   bits: tuple = SWEEP_BITS) -> tuple[list[dict], dict]:
    """Test MSE per bit-width: quantized in the loop vs directly removed after x=32 training.

    Also returns the trained models keyed by bit-width (32 is the baseline).
    """
    baseline, baseline_mse = train_on(dataset, layers, config.model_copy(update={"x": 32}), frame)
    test_inputs, test_targets = dataset.frames("test", frame)
    rows, models = [], {32: baseline.model}
    for x in bits:
        if x == 32:
            in_loop = baseline_mse
        else:
            result, in_loop = train_on(dataset, layers, config.model_copy(update={"x": x}), frame)
            models[x] = result.model
        removed = direct_remove_model(baseline.model, QuantSpec(x))
        rows.append({
            "bits": x,
            "in_loop_mse": in_loop,
            "direct_remove_mse": evaluate_mse(removed, test_inputs, test_targets),
        })
        logger.info(f"sweep x={x}: in-loop {rows[-1]['in_loop_mse']:.6g}, "
                    f"direct-remove {rows[-1]['direct_remove_mse']:.6g}")
    return rows, models


def snr_breakdown(dataset: Dataset, models: dict, frame: int) -> pd.DataFrame:
    """Per (SNR, noise kind) test metrics of each named model's training-path output"""
    noisy, clean = dataset.frames("test", frame)
    outputs = {name: forward(model, noisy) for name, model in models.items()}
    return per_snr_table(dataset.frame_meta("test", frame), clean, noisy, outputs)


# commands ----------------------------------------------------------------------

def cmd_gen_data(seed: int, n_utterances: int, snr_levels=TEST_SNR_LEVELS, out: str = "./data/synthetic",
                 samples: int = 4096, test_fraction: float = 0.2) -> dict:
    dataset = generate(seed, n_utterances, snr_levels, samples, test_fraction)
    out = Path(out)
    info = DatasetStore(str(out.parent)).save(dataset, out.name)
    measured = dataset.measured_snr()
    info["max_snr_error_db"] = float(np.abs(measured - dataset.meta["snr_db"].to_numpy()).max())
    _record("gen-data", {"utterances": n_utterances, "max_snr_error_db": info["max_snr_error_db"]},
            seed=seed, detail={"snr_levels": [float(s) for s in snr_levels], "path": str(out)})
    return info


def cmd_train(config: TrainConfig, data: str, out: str, arch: str = "dense", layers: int = 2,
              width: int = 64, kernel: int = 9, frame: int = 64) -> dict:
    dataset = load_dataset(data)
    specs = build_layers(arch, frame, layers, width, kernel)
    result, test_mse = train_on(dataset, specs, config, frame)
    path = pack_file(result.model, out, FULL32)
    metrics = {
        "train_loss": result.losses[-1] if result.losses else float("nan"),
        "test_mse": test_mse,
    }
    _record("train", metrics, model_path=path, bits=config.x, encoding=FULL32, seed=config.seed,
            detail={"arch": arch, "layers": layers, "width": width, "kernel": kernel,
                    "frame": frame, "epochs": config.epochs, "learning_rate": config.learning_rate,
                    "momentum": config.momentum, "schedule": config.schedule})
    return {"model_path": str(path), "parameters": result.model.parameter_count, **metrics}


def cmd_quantize(model_path: str, bits: int, out: str, mode: str = "fraction") -> dict:
    spec = QuantSpec.of(bits)
    model = unpack_file(model_path)
    if mode == "fraction":
        quantized = fraction_quantize_model(model, spec)
    elif mode == "direct":
        quantized = direct_remove_model(model, spec)
    else:
        raise ShapeError(f"unknown quantization mode {mode!r}")
    changed = int(np.count_nonzero(model.all_words() != quantized.all_words()))
    path = pack_file(quantized, out, FULL32)
    _record("quantize", {"changed_parameters": changed}, model_path=path, bits=spec.x, encoding=FULL32,
            detail={"mode": mode, "source": str(model_path)})
    return {"model_path": str(path), "bits": spec.x, "mode": mode,
            "parameters": quantized.parameter_count, "changed_parameters": changed}


def cmd_pack(model_path: str, encoding: str, out: str) -> dict:
    model = unpack_file(model_path)
    path = pack_file(model, out, encoding)
    size = path.stat().st_size
    baseline = packed_size(model, FULL32)
    change = compression_ratio(size, baseline)
    _record("pack", {"size_bytes": size, "change_pct": change}, model_path=path, encoding=encoding)
    return {"path": str(path), "encoding": encoding, "parameters": model.parameter_count,
            "size_bytes": size, "baseline_bytes": baseline, "change_pct": change}


def cmd_infer(packed: str, data: str, out: str | None = None, frame: int = 64, engine: str = "auto") -> dict:
    """Enhance the test split; MSE against clean and output-SNR improvement,
    overall and per (input SNR, noise kind) group"""
    model = unpack_file(packed)
    dataset = load_dataset(data)
    frame = _frame_of(model, frame)
    noisy, clean = dataset.frames("test", frame)
    evaluator = _engine(model, engine)
    enhanced, counter = evaluator.run(noisy)
    enhanced = enhanced.reshape(clean.shape)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        np.save(out, enhanced)
    diff = enhanced.astype(np.float64) - clean
    metrics = {
        "mse": float(np.mean(diff * diff)),
        "input_mse": float(np.mean((noisy.astype(np.float64) - clean) ** 2)),
        "snr_in_db": snr_db(clean, noisy),
        "snr_out_db": snr_db(clean, enhanced),
    }
    metrics["snr_improvement_db"] = metrics["snr_out_db"] - metrics["snr_in_db"]
    metrics["flush_to_zero"] = counter.total
    groups = per_snr_table(dataset.frame_meta("test", frame), clean, noisy, {"model": enhanced})
    per_snr = groups.drop(columns="model").astype(object).to_dict(orient="records")
    _record("infer", metrics, model_path=packed,
            detail={"engine": type(evaluator).__name__, "per_snr": per_snr})
    return {"frames": len(noisy), "engine": type(evaluator).__name__, **metrics, "per_snr": per_snr}


def cmd_verify(model_path: str, data: str | None = None, count: int = 100, frame: int = 64, seed: int = 1) -> dict:
    """Bitwise comparison of integer-add and native-multiply inference"""
    model = unpack_file(model_path)
    inputs = _inputs(model, data, count, frame, seed)
    expected, native_flush = build_native_model(model).run(inputs)
    actual, seofp_flush = build_inference_model(model).run(inputs)
    mismatched = int(np.count_nonzero(words_of(expected) != words_of(actual)))
    result = {
        "verdict": "PASS" if mismatched == 0 else "FAIL",
        "mismatched_words": mismatched,
        "outputs_compared": int(expected.size),
        "flush_to_zero": seofp_flush.total,
        "native_flush_to_zero": native_flush.total,
        "sign_cases": [f"{a}{b}->{s}" for (a, b), s in sign_truth_table()],
    }
    _record("verify", {"mismatched_words": mismatched, "flush_to_zero": seofp_flush.total},
            model_path=model_path, bits=9, seed=seed)
    logger.info(f"verify {model_path}: {result['verdict']} ({mismatched} of {expected.size} words differ)")
    return result


def cmd_bench(packed: str, data: str | None = None, count: int = 64, frame: int = 64, repeats: int = 5,
              sample_rate: int = 16000, seed: int = 1, deeper: bool = True) -> dict:
    model = unpack_file(packed)
    inputs = _inputs(model, data, count, frame, seed)
    report = run_bench(model, inputs, sample_rate, repeats, deeper)
    _record("bench", {"baseline_ms_per_s": report.baseline_ms_per_input_second,
                      "seofp_ms_per_s": report.seofp_ms_per_input_second,
                      "speedup": report.speedup},
            model_path=packed, detail={"repeats": repeats, "equivalent": report.equivalent})
    return report.model_dump()


def cmd_histogram(model_path: str) -> str:
    return to_markdown(histogram_table(exponent_histogram(unpack_file(model_path))))


def cmd_report(data: str | None = None, model_path: str | None = None, config: TrainConfig | None = None,
               arch: str = "dense", layers: int = 2, width: int = 64, kernel: int = 9, frame: int = 64,
               runs: int = 20) -> str:
    builder = ReportBuilder()
    if data:
        config = config or TrainConfig()
        dataset = load_dataset(data)
        rows, models = bitwidth_sweep(dataset, build_layers(arch, frame, layers, width, kernel), config, frame)
        builder.add("Test MSE by retained bit-width", bitwidth_table(rows),
                    f"{arch} x{layers}, {config.epochs} epochs, seed {config.seed}; "
                    "in-loop = fraction quantization after every update, "
                    "direct-remove = trailing bits masked after x=32 training")
        compared = {f"x={x}": models[x] for x in (32, 9) if x in models}
        builder.add("Test MSE by SNR and noise kind", snr_breakdown(dataset, compared, frame),
                    "x=32 baseline against x=9 quantized in the loop")
    if model_path:
        model = unpack_file(model_path)
        builder.add("Packed sizes", size_table(model), f"model {model_path}")
        builder.add("Exponent histogram", histogram_table(exponent_histogram(model)))
        if data:
            builder.add("Model test MSE by SNR and noise kind",
                        snr_breakdown(dataset, {Path(model_path).name: model}, _frame_of(model, frame)))
    try:
        recent = list_runs(limit=runs, database_url=get_settings().database_url)
    except SQLAlchemyError as e:
        logger.warning(f"run registry unavailable: {e}")
        recent = []
    builder.add("Recorded runs", runs_table(recent))
    return builder.render()


# argument parsing ----------------------------------------------------------------

def _bits(value: str) -> int:
    try:
        return QuantSpec(int(value)).x
    except (ValueError, SeofpError) as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _architecture(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", choices=ARCHITECTURES, default="dense")
    parser.add_argument("--layers", type=int, default=2, help="Number of layers (default 2)")
    parser.add_argument("--width", type=int, default=64, help="Hidden units or conv filters")
    parser.add_argument("--kernel", type=int, default=9, help="Conv kernel length (odd)")
    parser.add_argument("--frame", type=int, default=64, help="Samples per frame")


def _training(parser: argparse.ArgumentParser, settings: Settings) -> None:
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--lr", type=float, default=0.1, help="SGD learning rate (per-frame loss)")
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--schedule", choices=SCHEDULES, default="cosine", help="Learning-rate schedule")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=settings.seed)


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    default_data = os.path.join(settings.data_dir, "synthetic")
    parser = argparse.ArgumentParser(prog="seofp", description="Sign-exponent-only floating point toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-data", help="Generate a synthetic noisy/clean dataset")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--utterances", type=int, default=40)
    p.add_argument("--snr-db", type=float, nargs="+", default=list(TEST_SNR_LEVELS))
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--out", default=default_data, help="Dataset directory")

    p = commands.add_parser("train", help="Train with fraction quantization in the loop")
    p.add_argument("--data", default=default_data)
    p.add_argument("--bits", type=_bits, default=9, metavar="{9..32}")
    _architecture(p)
    _training(p, settings)
    p.add_argument("--out", default=None, help="Model file (.seofp)")

    p = commands.add_parser("quantize", help="Quantize a trained model's fractions")
    p.add_argument("model")
    p.add_argument("--bits", type=_bits, default=9, metavar="{9..32}")
    p.add_argument("--mode", choices=("fraction", "direct"), default="fraction")
    p.add_argument("--out", required=True)

    p = commands.add_parser("pack", help="Write a model in a packed encoding")
    p.add_argument("model")
    p.add_argument("--encoding", choices=ENCODINGS, default="se9")
    p.add_argument("--out", required=True)

    p = commands.add_parser("infer", help="Denoise the test split and report MSE / SNR")
    p.add_argument("model")
    p.add_argument("--data", default=default_data)
    p.add_argument("--frame", type=int, default=64)
    p.add_argument("--engine", choices=ENGINES, default="auto")
    p.add_argument("--out", default=None, help="Write enhanced frames (.npy)")

    p = commands.add_parser("verify", help="Compare integer-add and native inference bit for bit")
    p.add_argument("model")
    p.add_argument("--data", default=None, help="Use test frames instead of random inputs")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--frame", type=int, default=64)
    p.add_argument("--seed", type=int, default=settings.seed)

    p = commands.add_parser("bench", help="Time native vs integer-add inference")
    p.add_argument("model")
    p.add_argument("--data", default=None)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--frame", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--no-deeper", action="store_true", help="Skip the k+2 layer parity timing")

    p = commands.add_parser("report", help="Markdown tables: bit-width sweep, sizes, runs")
    p.add_argument("--data", default=None, help="Dataset for the bit-width sweep")
    p.add_argument("--model", default=None, help="Model for the size and histogram tables")
    _architecture(p)
    _training(p, settings)
    p.add_argument("--out", default=None, help="Write the report here instead of stdout")

    p = commands.add_parser("histogram", help="Exponent histogram of a model")
    p.add_argument("model")
    return parser


def _show(title: str, result: dict) -> None:
    print(title)
    for key, value in result.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"  {key}: {value}")


def _dispatch(args: argparse.Namespace, settings: Settings) -> int:
    if args.command == "gen-data":
        _show("Dataset", cmd_gen_data(args.seed, args.utterances, args.snr_db, args.out, args.samples))
    elif args.command in ("train", "report"):
        config = TrainConfig.build(x=getattr(args, "bits", 9), learning_rate=args.lr, momentum=args.momentum,
                                   schedule=args.schedule, epochs=args.epochs,
                                   batch_size=args.batch_size, seed=args.seed)
        if args.command == "train":
            out = args.out or os.path.join(settings.model_dir, f"{args.arch}-x{config.x}.seofp")
            _show("Trained", cmd_train(config, args.data, out, args.arch, args.layers,
                                       args.width, args.kernel, args.frame))
        else:
            text = cmd_report(args.data, args.model, config, args.arch, args.layers,
                              args.width, args.kernel, args.frame)
            if args.out:
                Path(args.out).write_text(text)
                print(f"wrote {args.out}")
            else:
                print(text)
    elif args.command == "quantize":
        _show("Quantized", cmd_quantize(args.model, args.bits, args.out, args.mode))
    elif args.command == "pack":
        _show("Packed", cmd_pack(args.model, args.encoding, args.out))
    elif args.command == "infer":
        result = cmd_infer(args.model, args.data, args.out, args.frame, args.engine)
        per_snr = result.pop("per_snr")
        _show("Inference", result)
        print(to_markdown(pd.DataFrame.from_records(per_snr)))
    elif args.command == "verify":
        result = cmd_verify(args.model, args.data, args.count, args.frame, args.seed)
        _show("Verify", result)
        if result["verdict"] != "PASS":
            raise VerificationError(f"{result['mismatched_words']} output words differ", result["mismatched_words"])
    elif args.command == "bench":
        report = cmd_bench(args.model, args.data, args.count, args.frame, args.repeats,
                           args.sample_rate, args.seed, not args.no_deeper)
        _show("Bench", report)
    elif args.command == "histogram":
        print(cmd_histogram(args.model))
    return 0


def main(argv=None) -> int:
    try:
        settings = get_settings()
    except SeofpError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser(settings).parse_args(argv)
    try:
        return _dispatch(args, settings)
    except VerificationError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 2
    except (SeofpError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
