"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
synth.py file for synthetic polysomnography corpora
--------------------------------------
Generates multi-dataset PSG-like recordings whose stages differ by spectral
band, with per-subject and per-dataset nuisance so that unseen subjects and
unseen datasets are genuinely shifted.
"""

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import fft
from scipy.signal import butter, lfilter

from edf_io import EPOCH_SECONDS, Channel, EdfMetadata, Recording, Stage, write_edf_file, write_hypnogram_csv
from errors import ConfigError
from logging_config import get_logger
from signal_prep import TARGET_RATE, preprocess_recordings

logger = get_logger(__name__)

INDEX_FILE = "recordings.csv"

DEFAULT_BANDS = {
    "W": (9.0, 11.0),
    "N1": (5.0, 7.0),
    "N2": (12.0, 15.0),
    "N3": (0.5, 3.0),
    "REM": (5.0, 7.0),
}
DEFAULT_AMPLITUDES = {"W": 1.0, "N1": 0.8, "N2": 1.0, "N3": 1.5, "REM": 0.8}
# N1 and REM share a band; REM carries more broadband activity
DEFAULT_BROADBAND = {"W": 0.1, "N1": 0.1, "N2": 0.1, "N3": 0.1, "REM": 0.4}


@dataclass
class SynthSpec:
    n_datasets: int = 5
    subjects_per_dataset: int = 8
    recordings_per_subject: int = 2
    minutes_per_recording: float = 20.0
    rates: Tuple[float, ...] = (100.0, 128.0, 200.0, 256.0, 102.4)
    channel_counts: Tuple[int, ...] = (5, 9, 12, 7, 9)
    bands: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BANDS))
    amplitudes: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_AMPLITUDES))
    broadband: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BROADBAND))
    noise_level: float = 0.1
    subject_gain: Tuple[float, float] = (0.7, 1.3)
    subject_noise_exponent: Tuple[float, float] = (0.5, 1.5)
    dataset_gain: Tuple[float, float] = (0.5, 2.0)
    dataset_cutoff: Tuple[float, float] = (25.0, 45.0)
    run_epochs: Tuple[int, int] = (2, 6)
    excluded_fraction: float = 0.0
    nuisance: bool = True
    dataset_ids: Optional[List[str]] = None

    @property
    def epochs_per_recording(self):
        return int(self.minutes_per_recording * 60 // EPOCH_SECONDS)

    def ids(self):
        if self.dataset_ids:
            return list(self.dataset_ids)
        return [string.ascii_uppercase[k] if k < 26 else f"D{k}" for k in range(self.n_datasets)]

    def validate(self, target_rate=TARGET_RATE):
        names = [s.name for s in (Stage.W, Stage.N1, Stage.N2, Stage.N3, Stage.REM)]
        for table in ("bands", "amplitudes", "broadband"):
            missing = [n for n in names if n not in getattr(self, table)]
            if missing:
                raise ConfigError(f"synth.{table} is missing stages {missing}")
        nyquist = min([target_rate] + list(self.rates)) / 2.0
        for name, (low, high) in self.bands.items():
            if not 0.0 < low < high:
                raise ConfigError(f"synth band for {name} must satisfy 0 < low < high, got ({low}, {high})")
            if high >= nyquist:
                raise ConfigError(f"synth band for {name} ({low}-{high} Hz) exceeds the Nyquist limit {nyquist} Hz")
        if self.dataset_ids and len(self.dataset_ids) != self.n_datasets:
            raise ConfigError(f"synth.dataset_ids lists {len(self.dataset_ids)} ids for {self.n_datasets} datasets")
        if not self.rates or not self.channel_counts or min(self.channel_counts) < 1:
            raise ConfigError("synth.rates and synth.channel_counts must be non-empty and positive")
        if self.epochs_per_recording < 1:
            raise ConfigError(f"synth recordings of {self.minutes_per_recording} min hold no 30 s epoch")
        low, high = self.run_epochs
        if not 1 <= low <= high:
            raise ConfigError(f"synth.run_epochs must satisfy 1 <= min <= max, got {self.run_epochs}")
        if not 0.0 <= self.excluded_fraction < 1.0:
            raise ConfigError(f"synth.excluded_fraction must be in [0, 1), got {self.excluded_fraction}")
        return self


# --------------------------------
# Signal building blocks
# --------------------------------


def band_noise(n, rate, band, rng):
    """Unit-RMS noise whose spectrum is confined to band (Hz)"""
    freqs = fft.rfftfreq(n, d=1.0 / rate)
    inside = (freqs >= band[0]) & (freqs <= band[1])
    spectrum = np.zeros(len(freqs), dtype=np.complex128)
    spectrum[inside] = rng.normal(size=inside.sum()) + 1j * rng.normal(size=inside.sum())
    x = fft.irfft(spectrum, n=n)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def colored_noise(n, rate, exponent, rng, f_min=0.5):
    """Unit-RMS noise with a 1/f**exponent power spectrum above f_min"""
    freqs = fft.rfftfreq(n, d=1.0 / rate)
    shape = np.zeros(len(freqs))
    keep = freqs >= f_min
    shape[keep] = freqs[keep] ** (-exponent / 2.0)
    spectrum = shape * (rng.normal(size=len(freqs)) + 1j * rng.normal(size=len(freqs)))
    x = fft.irfft(spectrum, n=n)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def stage_sequence(n_epochs, rng, run_epochs=(2, 6), excluded_fraction=0.0):
    """Piecewise-constant hypnogram built from runs of run_epochs epochs"""
    stages = [int(s) for s in (Stage.W, Stage.N1, Stage.N2, Stage.N3, Stage.REM)]
    labels = np.empty(n_epochs, dtype=np.int8)
    pos = 0
    previous = None
    while pos < n_epochs:
        length = int(rng.integers(run_epochs[0], run_epochs[1] + 1))
        choices = [s for s in stages if s != previous]
        stage = choices[int(rng.integers(len(choices)))]
        if excluded_fraction and rng.random() < excluded_fraction:
            stage = int(Stage.EXCLUDED)
        labels[pos:pos + length] = stage
        previous = stage
        pos += length
    return labels


@dataclass
class _Nuisance:
    gain: float
    weights: np.ndarray
    noise_exponent: float
    cutoff: Optional[float]


def _epoch_signal(stage, spec, n, rate, rng):
    name = Stage.W.name if stage == int(Stage.EXCLUDED) else Stage(stage).name
    x = spec.amplitudes[name] * band_noise(n, rate, spec.bands[name], rng)
    return x + spec.broadband[name] * rng.normal(size=n)


def synth_recording(spec, dataset_id, subject_id, recording_id, rate, n_channels, subject, dataset, rng):
    """One recording at the dataset's native rate"""
    labels = stage_sequence(spec.epochs_per_recording, rng, spec.run_epochs, spec.excluded_fraction)
    n = int(round(EPOCH_SECONDS * rate))
    total = n * len(labels)
    channels = []
    for k in range(n_channels):
        x = np.concatenate([_epoch_signal(int(s), spec, n, rate, rng) for s in labels])
        x = x + spec.noise_level * colored_noise(total, rate, subject.noise_exponent, rng)
        x = x * subject.weights[k] * subject.gain * dataset.gain
        if dataset.cutoff is not None:
            b, a = butter(4, dataset.cutoff, btype="low", fs=rate)
            x = lfilter(b, a, x)
        channels.append(Channel(samples=x.astype(np.float64), rate=rate, label=f"{dataset_id}-EEG{k}"))
    return Recording(
        subject_id=subject_id,
        dataset_id=dataset_id,
        channels=channels,
        hypnogram=labels,
        recording_id=recording_id,
    ).validate()


def synth_generate(spec, rng):
    """Generate spec.n_datasets lists of Recordings; deterministic per rng seed"""
    spec.validate()
    if spec.subjects_per_dataset <= 0 or spec.n_datasets <= 0:
        return []
    datasets = []
    for k, dataset_id in enumerate(spec.ids()):
        rate = float(spec.rates[k % len(spec.rates)])
        n_channels = int(spec.channel_counts[k % len(spec.channel_counts)])
        base_weights = rng.uniform(0.5, 1.5, size=n_channels)
        if spec.nuisance:
            dataset = _Nuisance(
                gain=float(rng.uniform(*spec.dataset_gain)),
                weights=base_weights,
                noise_exponent=0.0,
                cutoff=float(min(rng.uniform(*spec.dataset_cutoff), 0.45 * rate)),
            )
        else:
            dataset = _Nuisance(1.0, np.ones(n_channels), 0.0, None)

        recordings = []
        for s in range(spec.subjects_per_dataset):
            subject_id = f"{dataset_id}{s:02d}"
            if spec.nuisance:
                subject = _Nuisance(
                    gain=float(rng.uniform(*spec.subject_gain)),
                    weights=base_weights[rng.permutation(n_channels)],
                    noise_exponent=float(rng.uniform(*spec.subject_noise_exponent)),
                    cutoff=None,
                )
            else:
                subject = _Nuisance(1.0, np.ones(n_channels), 1.0, None)
            for r in range(spec.recordings_per_subject):
                recordings.append(
                    synth_recording(spec, dataset_id, subject_id, f"{subject_id}R{r}", rate, n_channels, subject, dataset, rng)
                )
        logger.info(
            f"Synthetic dataset {dataset_id}: {spec.subjects_per_dataset} subjects, "
            f"{len(recordings)} recordings at {rate} Hz x {n_channels} channels"
        )
        datasets.append(recordings)
    return datasets


def synth_sample_sets(spec, seed, prep_cfg=None):
    """Generate and preprocess a synthetic corpus into one SampleSet per dataset"""
    corpora = synth_generate(spec, np.random.default_rng(seed))
    return [preprocess_recordings(recs, seed + k, prep_cfg) for k, recs in enumerate(corpora)]


def write_corpus(directory, datasets):
    """Write every recording as EDF + CSV hypnogram plus a recordings.csv index"""
    directory = Path(directory)
    rows = []
    for recordings in datasets:
        for rec in recordings:
            folder = directory / rec.dataset_id
            edf_path = write_edf_file(
                folder / f"{rec.recording_id}.edf",
                rec,
                EdfMetadata(patient_id=rec.subject_id, recording_id=rec.recording_id),
            )
            csv_path = write_hypnogram_csv(folder / f"{rec.recording_id}.csv", rec.hypnogram)
            rows.append(
                {
                    "dataset_id": rec.dataset_id,
                    "subject_id": rec.subject_id,
                    "recording_id": rec.recording_id,
                    "edf": str(edf_path.relative_to(directory)),
                    "hypnogram": str(csv_path.relative_to(directory)),
                }
            )
    index = pd.DataFrame(rows, columns=["dataset_id", "subject_id", "recording_id", "edf", "hypnogram"])
    directory.mkdir(parents=True, exist_ok=True)
    index.to_csv(directory / INDEX_FILE, index=False)
    logger.info(f"Wrote {len(rows)} synthetic recordings to {directory}")
    return directory / INDEX_FILE
