"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
signal_prep.py file for preprocessing
--------------------------------------
Turns Recordings into fixed-shape training samples (resample, normalize,
harmonize channel count, segment into 3-epoch windows) and provides the real
FFT primitives used by PhaseSwap.
"""

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import fft
from scipy.signal import firwin, resample_poly

from edf_io import EPOCH_SECONDS, Channel, Recording, Stage
from errors import DataError, PrepError, ShapeError
from logging_config import get_logger

logger = get_logger(__name__)

TARGET_RATE = 102.4
N_CHANNELS = 9
N_CLASSES = 5
WINDOW_EPOCHS = 3
KAISER_BETA = 8.6
TAPS_PER_PHASE = 32
PHASE_ZERO_TOL = 1e-12

CACHE_DATA_FILE = "samples.bin"
CACHE_MANIFEST_FILE = "samples.jsonl"


@dataclass
class PrepConfig:
    target_rate: float = TARGET_RATE
    n_channels: int = N_CHANNELS
    epoch_seconds: float = EPOCH_SECONDS
    window_epochs: int = WINDOW_EPOCHS
    zscore_eps: float = 1e-8

    @property
    def epoch_points(self):
        return int(round(self.epoch_seconds * self.target_rate))

    @property
    def window_points(self):
        return self.window_epochs * self.epoch_points


@dataclass
class Sample:
    x: np.ndarray
    y: int
    subject_id: str = ""
    dataset_id: str = ""
    recording_id: str = ""

    @property
    def y_onehot(self):
        onehot = np.zeros(N_CLASSES, dtype=np.float32)
        onehot[self.y] = 1.0
        return onehot


@dataclass
class SpectralPair:
    magnitude: np.ndarray
    phase: np.ndarray

    @property
    def n_bins(self):
        return self.magnitude.shape[-1]


# --------------------------------
# Channel-level operations
# --------------------------------


def _rational_ratio(rate, target):
    ratio = Fraction(target).limit_denominator(10000) / Fraction(rate).limit_denominator(10000)
    return ratio.limit_denominator(4096)


def resample(ch, target=TARGET_RATE):
    """Band-limited polyphase resampling with a Kaiser-windowed sinc filter"""
    if ch.rate <= 0 or target <= 0:
        raise PrepError(f"resample: rates must be positive (rate={ch.rate}, target={target})")
    samples = np.asarray(ch.samples, dtype=np.float64)
    if samples.size == 0:
        return Channel(samples=samples.copy(), rate=float(target), label=ch.label)
    if abs(ch.rate - target) < 1e-12:
        return Channel(samples=samples.copy(), rate=float(target), label=ch.label)

    ratio = _rational_ratio(ch.rate, target)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = firwin(TAPS_PER_PHASE * max_rate + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))
    out = resample_poly(samples, up, down, window=taps)

    n_out = int(round(len(samples) * target / ch.rate))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        out = np.pad(out, (0, n_out - len(out)))
    logger.debug(f"Resampled '{ch.label}' {ch.rate}Hz -> {target}Hz (up={up}, down={down}), {len(samples)} -> {n_out}")
    return Channel(samples=out, rate=float(target), label=ch.label)


def zscore(ch, eps=1e-8):
    """Zero mean, unit population std; constant channels become all zeros"""
    samples = np.asarray(ch.samples, dtype=np.float64)
    if samples.size == 0:
        return Channel(samples=samples.copy(), rate=ch.rate, label=ch.label)
    out = (samples - samples.mean()) / (samples.std() + eps)
    return Channel(samples=out, rate=ch.rate, label=ch.label)


def harmonize_channels(chs, n=N_CHANNELS, rng=None):
    """Randomly subset or zero-pad to exactly n channels, then shuffle them"""
    if not chs:
        raise PrepError("harmonize_channels: no input channels")
    rng = rng if rng is not None else np.random.default_rng()
    rates = {round(ch.rate, 9) for ch in chs}
    if len(rates) > 1:
        raise PrepError(f"harmonize_channels: channels have different rates {sorted(rates)}")
    length = min(len(ch.samples) for ch in chs)
    if any(len(ch.samples) != length for ch in chs):
        logger.debug(f"harmonize_channels: trimming channels to {length} samples")
    rate = chs[0].rate

    if len(chs) > n:
        keep = rng.choice(len(chs), size=n, replace=False)
        chosen = [chs[i] for i in sorted(keep)]
    else:
        chosen = list(chs)
    out = [Channel(samples=np.asarray(ch.samples[:length]), rate=rate, label=ch.label) for ch in chosen]
    while len(out) < n:
        out.append(Channel(samples=np.zeros(length), rate=rate, label=""))
    order = rng.permutation(n)
    return [out[i] for i in order]


# --------------------------------
# Segmentation
# --------------------------------


def segment(rec, rng=None, cfg=None):
    """Cut non-overlapping 3-epoch windows labelled by the central epoch.

    Windows touching an EXCLUDED epoch are dropped and the scan restarts just
    after the excluded epoch. When rng is given the sample order is shuffled.
    """
    cfg = cfg or PrepConfig()
    labels = np.asarray(rec.hypnogram)
    if not rec.channels:
        return []
    epoch_points = int(round(cfg.epoch_seconds * rec.channels[0].rate))
    n_points = min(len(ch.samples) for ch in rec.channels)
    n_epochs = min(len(labels), n_points // epoch_points) if epoch_points else 0
    width = cfg.window_epochs
    centre = width // 2

    signal = np.stack([np.asarray(ch.samples, dtype=np.float32)[:n_points] for ch in rec.channels])
    samples = []
    start = 0
    while start + width <= n_epochs:
        window = labels[start:start + width]
        excluded = np.flatnonzero(window == int(Stage.EXCLUDED))
        if excluded.size:
            start += int(excluded[-1]) + 1
            continue
        lo, hi = start * epoch_points, (start + width) * epoch_points
        samples.append(
            Sample(
                x=signal[:, lo:hi].copy(),
                y=int(window[centre]),
                subject_id=rec.subject_id,
                dataset_id=rec.dataset_id,
                recording_id=rec.recording_id,
            )
        )
        start += width
    if rng is not None and samples:
        order = rng.permutation(len(samples))
        samples = [samples[i] for i in order]
    return samples


def preprocess_recording(rec, rng, cfg=None):
    """Resample, normalize, harmonize and segment one recording"""
    cfg = cfg or PrepConfig()
    channels = [zscore(resample(ch, cfg.target_rate), cfg.zscore_eps) for ch in rec.channels]
    channels = harmonize_channels(channels, cfg.n_channels, rng)
    prepared = Recording(
        subject_id=rec.subject_id,
        dataset_id=rec.dataset_id,
        channels=channels,
        hypnogram=rec.hypnogram,
        recording_id=rec.recording_id,
    )
    samples = segment(prepared, rng, cfg)
    logger.debug(f"Recording {rec.recording_id or rec.subject_id}: {len(samples)} samples")
    return samples


def preprocess_recordings(recordings, seed, cfg=None, dataset_id=None):
    """Preprocess a dataset's recordings into one SampleSet.

    Each recording gets its own generator spawned from the seed, so results do
    not depend on processing order. A recording that fails is logged and skipped.
    """
    cfg = cfg or PrepConfig()
    children = np.random.SeedSequence(seed).spawn(len(recordings))
    samples = []
    failures = 0
    for rec, child in zip(recordings, children):
        try:
            samples.extend(preprocess_recording(rec, np.random.default_rng(child), cfg))
        except (DataError, ValueError) as e:
            failures += 1
            logger.error(f"Skipping recording {rec.recording_id or rec.subject_id}: {e}")
    if dataset_id is None:
        dataset_id = recordings[0].dataset_id if recordings else ""
    logger.info(
        f"Dataset {dataset_id}: {len(samples)} samples from {len(recordings) - failures} recordings"
        + (f" ({failures} skipped)" if failures else "")
    )
    return SampleSet.from_samples(samples, dataset_id, cfg)


# --------------------------------
# Real FFT primitives
# --------------------------------


def rfft(x):
    """Real FFT along the last axis in magnitude/phase form"""
    spectrum = fft.rfft(np.asarray(x, dtype=np.float64), axis=-1)
    magnitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    # Phase of a (numerically) zero bin is undefined; pin it to 0
    scale = magnitude.max(axis=-1, keepdims=True) if magnitude.size else 0.0
    phase = np.where(magnitude <= PHASE_ZERO_TOL * np.maximum(scale, np.finfo(float).tiny), 0.0, phase)
    return SpectralPair(magnitude=magnitude, phase=phase)


def irfft(sp, n):
    """Inverse of rfft for a real signal of length n"""
    if n < 1:
        raise ShapeError("irfft", f"length must be >= 1, got {n}")
    expected = n // 2 + 1
    if sp.magnitude.shape != sp.phase.shape or sp.n_bins != expected:
        raise ShapeError(
            "irfft",
            f"expected {expected} bins for n={n}",
            dims={"magnitude": sp.magnitude.shape, "phase": sp.phase.shape},
        )
    return fft.irfft(sp.magnitude * np.exp(1j * sp.phase), n=n, axis=-1)


def spectral_energy(sp, n):
    """Signal energy sum(x**2) recovered from the one-sided spectrum"""
    power = sp.magnitude ** 2
    weights = np.full(sp.n_bins, 2.0)
    weights[0] = 1.0
    if n % 2 == 0 and sp.n_bins > 1:
        weights[-1] = 1.0
    return float((power * weights).sum(axis=-1).sum() / n)


# --------------------------------
# Sample collections
# --------------------------------


@dataclass
class SampleSet:
    """Columnar samples of one dataset"""

    x: np.ndarray
    y: np.ndarray
    subject_ids: np.ndarray
    recording_ids: np.ndarray
    dataset_id: str = ""
    config: PrepConfig = field(default_factory=PrepConfig)

    @classmethod
    def empty(cls, dataset_id="", cfg=None):
        cfg = cfg or PrepConfig()
        return cls(
            x=np.zeros((0, cfg.n_channels, cfg.window_points), dtype=np.float32),
            y=np.zeros(0, dtype=np.int64),
            subject_ids=np.array([], dtype=object),
            recording_ids=np.array([], dtype=object),
            dataset_id=dataset_id,
            config=cfg,
        )

    @classmethod
    def from_samples(cls, samples, dataset_id="", cfg=None):
        cfg = cfg or PrepConfig()
        if not samples:
            return cls.empty(dataset_id, cfg)
        return cls(
            x=np.stack([s.x for s in samples]).astype(np.float32),
            y=np.array([s.y for s in samples], dtype=np.int64),
            subject_ids=np.array([str(s.subject_id) for s in samples], dtype=object),
            recording_ids=np.array([str(s.recording_id) for s in samples], dtype=object),
            dataset_id=dataset_id,
            config=cfg,
        )

    @classmethod
    def concat(cls, sets, dataset_id=None):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(dataset_id or "")
        return cls(
            x=np.concatenate([s.x for s in sets]),
            y=np.concatenate([s.y for s in sets]),
            subject_ids=np.concatenate([s.subject_ids for s in sets]),
            recording_ids=np.concatenate([s.recording_ids for s in sets]),
            dataset_id=dataset_id if dataset_id is not None else sets[0].dataset_id,
            config=sets[0].config,
        )

    def __len__(self):
        return len(self.y)

    def sample(self, i):
        return Sample(
            x=self.x[i],
            y=int(self.y[i]),
            subject_id=self.subject_ids[i],
            dataset_id=self.dataset_id,
            recording_id=self.recording_ids[i],
        )

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(
            x=self.x[indices],
            y=self.y[indices],
            subject_ids=self.subject_ids[indices],
            recording_ids=self.recording_ids[indices],
            dataset_id=self.dataset_id,
            config=self.config,
        )

    def subjects(self):
        return sorted(set(self.subject_ids.tolist()))

    @cached_property
    def subject_index(self):
        return {s: np.flatnonzero(self.subject_ids == s) for s in self.subjects()}

    def by_subject(self):
        """Map subject id -> array of sample indices"""
        return self.subject_index

    def class_counts(self):
        return np.bincount(self.y, minlength=N_CLASSES)


# --------------------------------
# Sample cache
# --------------------------------


def write_sample_cache(directory, sample_set):
    """Write the flat binary container plus its line-delimited manifest"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, c, length = sample_set.x.shape
    with open(directory / CACHE_DATA_FILE, "wb") as f:
        f.write(struct.pack("<III", n, c, length))
        f.write(np.ascontiguousarray(sample_set.x, dtype="<f4").tobytes())
        f.write(sample_set.y.astype(np.uint8).tobytes())
    manifest = pd.DataFrame(
        {
            "subject_id": sample_set.subject_ids.astype(str),
            "dataset_id": [sample_set.dataset_id] * n,
            "recording_id": sample_set.recording_ids.astype(str),
        }
    )
    manifest.to_json(directory / CACHE_MANIFEST_FILE, orient="records", lines=True)
    with open(directory / "prep.json", "w", encoding="utf-8") as f:
        json.dump(sample_set.config.__dict__, f, indent=2)
    logger.info(f"Cached {n} samples of dataset {sample_set.dataset_id} in {directory}")
    return directory


def read_sample_cache(directory):
    """Load a SampleSet previously written by write_sample_cache"""
    directory = Path(directory)
    data_path = directory / CACHE_DATA_FILE
    manifest_path = directory / CACHE_MANIFEST_FILE
    if not data_path.is_file() or not manifest_path.is_file():
        raise DataError(f"Sample cache not found in {directory}")
    raw = data_path.read_bytes()
    if len(raw) < 12:
        raise DataError(f"{data_path}: truncated cache header")
    n, c, length = struct.unpack("<III", raw[:12])
    n_values = n * c * length
    expected = 12 + 4 * n_values + n
    if len(raw) != expected:
        raise DataError(f"{data_path}: expected {expected} bytes for shape ({n}, {c}, {length}), got {len(raw)}")
    x = np.frombuffer(raw, dtype="<f4", count=n_values, offset=12).reshape(n, c, length).astype(np.float32)
    y = np.frombuffer(raw, dtype=np.uint8, count=n, offset=12 + 4 * n_values).astype(np.int64)

    if n:
        manifest = pd.read_json(manifest_path, orient="records", lines=True, dtype=False, convert_dates=False)
    else:
        manifest = pd.DataFrame(columns=["subject_id", "dataset_id", "recording_id"])
    if len(manifest) != n:
        raise DataError(f"{manifest_path}: {len(manifest)} manifest rows for {n} samples")
    dataset_ids = set(manifest["dataset_id"].astype(str)) if n else set()
    if len(dataset_ids) > 1:
        raise DataError(f"{manifest_path}: cache mixes datasets {sorted(dataset_ids)}")

    cfg = PrepConfig()
    prep_path = directory / "prep.json"
    if prep_path.is_file():
        cfg = PrepConfig(**json.loads(prep_path.read_text(encoding="utf-8")))
    return SampleSet(
        x=x,
        y=y,
        subject_ids=manifest["subject_id"].astype(str).to_numpy(dtype=object),
        recording_ids=manifest["recording_id"].astype(str).to_numpy(dtype=object),
        dataset_id=dataset_ids.pop() if dataset_ids else directory.name,
        config=cfg,
    )


def one_hot(labels, n_classes=N_CLASSES, dtype=np.float32):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out

