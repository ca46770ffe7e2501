"""Synthetic denoising data.

Clean utterances are sums of 3-8 random-phase sinusoids; noisy copies add
white (stationary) or amplitude-modulated (non-stationary) noise scaled to an
exact SNR. Each dataset directory holds ``clean.npy``, ``noisy.npy`` and
``meta.csv``.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from src.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

TEST_SNR_LEVELS = (-6.0, 0.0, 6.0, 12.0)
NOISE_KINDS = ("white", "modulated")
FILES = ("clean.npy", "noisy.npy", "meta.csv")


def snr_db(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * math.log10(np.sum(clean * clean) / np.sum(noise * noise))


@dataclass
class Dataset:
    clean: np.ndarray
    noisy: np.ndarray
    meta: pd.DataFrame

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape or self.clean.shape[0] != len(self.meta):
            raise ShapeError("clean, noisy and meta disagree on the utterance count")

    def rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.meta["split"].to_numpy() == split)

    def frames(self, split: str, frame: int) -> tuple[np.ndarray, np.ndarray]:
        """(noisy, clean) frames of ``frame`` samples from one split"""
        rows = self.rows(split)
        usable = self.clean.shape[1] // frame * frame
        if usable == 0:
            raise ShapeError(f"utterances of {self.clean.shape[1]} samples are shorter than frame {frame}")
        noisy = self.noisy[rows, :usable].reshape(-1, frame)
        clean = self.clean[rows, :usable].reshape(-1, frame)
        return noisy, clean

    def frame_meta(self, split: str, frame: int) -> pd.DataFrame:
        """One meta row per frame of ``frames(split, frame)``, same order"""
        per_utterance = self.clean.shape[1] // frame
        meta = self.meta.iloc[self.rows(split)]
        return meta.loc[meta.index.repeat(per_utterance)].reset_index(drop=True)

    def measured_snr(self) -> np.ndarray:
        return np.array([snr_db(c, n) for c, n in zip(self.clean, self.noisy)])


def _clean_utterance(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    tones = int(rng.integers(3, 9))
    freqs = rng.uniform(0.005, 0.12, tones)
    amps = rng.uniform(0.2, 1.0, tones)
    phases = rng.uniform(0.0, 2.0 * np.pi, tones)
    return np.sum(amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t + phases[:, None]), axis=0)


def _noise(rng: np.random.Generator, t: np.ndarray, kind: str) -> np.ndarray:
    noise = rng.standard_normal(t.size)
    if kind == "modulated":
        rate = rng.uniform(0.0005, 0.003)
        noise *= 1.0 + 0.9 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))
    return noise


def generate(seed: int, n_utterances: int, snr_levels: Sequence[float] = TEST_SNR_LEVELS,
             samples: int = 4096, test_fraction: float = 0.2) -> Dataset:
    """Deterministic for ``seed``; each pair's SNR equals its requested level"""
    snr_levels = [float(s) for s in snr_levels]
    if not snr_levels or not all(math.isfinite(s) for s in snr_levels):
        raise ConfigError(f"SNR levels must be finite dB values, got {snr_levels}")
    if n_utterances < 1 or samples < 1:
        raise ConfigError("need at least one utterance of at least one sample")
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in [0, 1), got {test_fraction}")

    rng = np.random.default_rng(seed)
    t = np.arange(samples, dtype=np.float64)
    clean = np.empty((n_utterances, samples), dtype=np.float32)
    noisy = np.empty_like(clean)
    records = []
    n_test = math.ceil(n_utterances * test_fraction)
    for i in range(n_utterances):
        snr = snr_levels[i % len(snr_levels)]
        kind = NOISE_KINDS[(i // len(snr_levels)) % len(NOISE_KINDS)]
        c = _clean_utterance(rng, t)
        v = _noise(rng, t, kind)
        v *= math.sqrt(np.sum(c * c) / (np.sum(v * v) * 10.0 ** (snr / 10.0)))
        n = c + v
        gain = 0.99 / max(np.abs(n).max(), np.abs(c).max())
        clean[i] = c * gain
        noisy[i] = n * gain
        split = "test" if i >= n_utterances - n_test else "train"
        records.append({"utterance": i, "snr_db": snr, "noise": kind, "split": split})
    return Dataset(clean, noisy, pd.DataFrame.from_records(records))


class DatasetStore:
    def __init__(self, data_dir: str = "./data"):
        """Datasets live in one sub-directory each under ``data_dir``"""
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)

    def path_of(self, name: str) -> str:
        return os.path.join(self.data_dir, name)

    def save(self, dataset: Dataset, name: str) -> Dict[str, object]:
        path = self.path_of(name)
        os.makedirs(path, exist_ok=True)
        np.save(os.path.join(path, "clean.npy"), dataset.clean)
        np.save(os.path.join(path, "noisy.npy"), dataset.noisy)
        dataset.meta.to_csv(os.path.join(path, "meta.csv"), index=False)
        files = [os.path.join(path, f) for f in FILES]
        logger.info(f"wrote dataset {name}: {len(dataset.meta)} utterances to {path}")
        return {
            "dataset_name": name,
            "path": path,
            "utterances": len(dataset.meta),
            "samples": dataset.clean.shape[1],
            "files": files,
            "size_mb": round(sum(os.path.getsize(f) for f in files) / (1024 * 1024), 2),
        }

    def generate_dataset(self, name: str, seed: int, n_utterances: int,
                         snr_levels: Sequence[float] = TEST_SNR_LEVELS, samples: int = 4096,
                         test_fraction: float = 0.2) -> Dict[str, object]:
        dataset = generate(seed, n_utterances, snr_levels, samples, test_fraction)
        return self.save(dataset, name)

    def load(self, name_or_path: str) -> Dataset:
        path = name_or_path if os.path.isdir(name_or_path) else self.path_of(name_or_path)
        missing = [f for f in FILES if not os.path.exists(os.path.join(path, f))]
        if missing:
            raise FileNotFoundError(f"dataset at {path} is missing {', '.join(missing)}")
        return Dataset(
            np.load(os.path.join(path, "clean.npy")),
            np.load(os.path.join(path, "noisy.npy")),
            pd.read_csv(os.path.join(path, "meta.csv")),
        )

    def list_datasets(self) -> List[Dict[str, object]]:
        """List dataset directories under ``data_dir``"""
        datasets = []
        for item in sorted(os.listdir(self.data_dir)):
            item_path = os.path.join(self.data_dir, item)
            if os.path.isdir(item_path) and os.path.exists(os.path.join(item_path, "meta.csv")):
                meta = pd.read_csv(os.path.join(item_path, "meta.csv"))
                datasets.append({
                    "name": item,
                    "path": item_path,
                    "utterances": len(meta),
                    "snr_levels": sorted(meta["snr_db"].unique().tolist()),
                })
        return datasets
