import logging
import math
from datetime import datetime

import numpy as np
import pandas as pd

from src.bitcore import fraction_field
from src.errors import EncodingError
from src.network import Model
from src.pack import ENCODINGS, FULL32, compression_ratio, packed_size
from src.quant import ZERO_BUCKET

logger = logging.getLogger(__name__)


def bitwidth_table(rows: list[dict]) -> pd.DataFrame:
    """rows of {bits, in_loop_mse, direct_remove_mse}, widest first"""
    frame = pd.DataFrame.from_records(rows, columns=["bits", "in_loop_mse", "direct_remove_mse"])
    return frame.sort_values("bits", ascending=False).reset_index(drop=True)


def size_table(model: Model) -> pd.DataFrame:
    """Packed size and signed change vs full32 for each encoding the model admits"""
    baseline = packed_size(model, FULL32)
    encodings = ENCODINGS
    if not model.layers or np.any(fraction_field(model.all_words()) != 0):
        logger.info("model keeps fraction bits; only full32 applies")
        encodings = (FULL32,)
    records = []
    for encoding in encodings:
        try:
            size = packed_size(model, encoding)
        except EncodingError as e:
            logger.info(f"skipping {encoding}: {e}")
            continue
        records.append({
            "encoding": encoding,
            "parameters": model.parameter_count,
            "size_bytes": size,
            "size_kb": size / 1024,
            "change_pct": compression_ratio(size, baseline),
        })
    return pd.DataFrame.from_records(records)


def histogram_table(histogram: dict) -> pd.DataFrame:
    total = sum(histogram.values()) or 1
    records = [{"exponent": str(e), "count": c, "share_pct": 100.0 * c / total}
               for e, c in histogram.items()]
    frame = pd.DataFrame.from_records(records, columns=["exponent", "count", "share_pct"])
    # numeric exponents ascending, zero bucket last
    frame["order"] = [float("inf") if e == ZERO_BUCKET else float(e) for e in frame["exponent"]]
    return frame.sort_values("order").drop(columns="order").reset_index(drop=True)


def _snr_db(signal: float, error: float) -> float:
    return 10.0 * math.log10(signal / error) if error > 0 else float("inf")


def per_snr_table(frame_meta: pd.DataFrame, clean, noisy, enhanced: dict) -> pd.DataFrame:
    """MSE and SNR gain per (input SNR, noise kind) group for each named output.

    ``frame_meta`` holds one row per frame with ``snr_db`` and ``noise``;
    ``enhanced`` maps a model name to its frames, shaped like ``clean``.
    """
    clean = np.asarray(clean, dtype=np.float64).reshape(len(frame_meta), -1)
    noisy = np.asarray(noisy, dtype=np.float64).reshape(clean.shape)
    energy = pd.DataFrame({"snr_db": frame_meta["snr_db"].to_numpy(),
                           "noise": frame_meta["noise"].to_numpy(),
                           "signal": (clean * clean).sum(axis=1),
                           "input_error": ((noisy - clean) ** 2).sum(axis=1)})
    records = []
    for name, output in enhanced.items():
        output = np.asarray(output, dtype=np.float64).reshape(clean.shape)
        energy["error"] = ((output - clean) ** 2).sum(axis=1)
        for (snr, noise), group in energy.groupby(["snr_db", "noise"], sort=True):
            samples = len(group) * clean.shape[1]
            snr_in = _snr_db(group["signal"].sum(), group["input_error"].sum())
            snr_out = _snr_db(group["signal"].sum(), group["error"].sum())
            records.append({
                "model": name,
                "snr_db": float(snr),
                "noise": noise,
                "frames": len(group),
                "input_mse": group["input_error"].sum() / samples,
                "mse": group["error"].sum() / samples,
                "snr_in_db": snr_in,
                "snr_out_db": snr_out,
                "snr_improvement_db": snr_out - snr_in,
            })
    return pd.DataFrame.from_records(records, columns=[
        "model", "snr_db", "noise", "frames", "input_mse", "mse",
        "snr_in_db", "snr_out_db", "snr_improvement_db"])


def runs_table(runs: list[dict]) -> pd.DataFrame:
    return pd.DataFrame.from_records(runs)


def to_markdown(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "_no rows_"
    return frame.to_markdown(index=False, floatfmt=".6g")


class ReportBuilder:
    """Collects titled tables and renders them as one markdown document"""

    def __init__(self, title: str = "SEOFP report"):
        self.title = title
        self.sections: list[tuple[str, pd.DataFrame, str]] = []

    def add(self, heading: str, frame: pd.DataFrame, note: str = "") -> "ReportBuilder":
        self.sections.append((heading, frame, note))
        logger.info(f"report section '{heading}': {len(frame)} rows")
        return self

    def render(self) -> str:
        parts = [f"# {self.title}", f"_generated {datetime.now():%Y-%m-%d %H:%M}_"]
        for heading, frame, note in self.sections:
            parts.append(f"## {heading}")
            if note:
                parts.append(note)
            parts.append(to_markdown(frame))
        return "\n\n".join(parts) + "\n"
