import numpy as np
import pandas as pd
import pytest

from edf_io import EPOCH_SECONDS, Stage, load_recording
from errors import ConfigError
from synth import (
    DEFAULT_BANDS,
    INDEX_FILE,
    SynthSpec,
    band_noise,
    colored_noise,
    stage_sequence,
    synth_generate,
    synth_sample_sets,
    write_corpus,
)


def _small_spec(**changes):
    values = dict(
        n_datasets=1,
        subjects_per_dataset=2,
        recordings_per_subject=1,
        minutes_per_recording=1.5,
        rates=(100.0,),
        channel_counts=(2,),
    )
    values.update(changes)
    return SynthSpec(**values)


# --------------------------------
# Building blocks
# --------------------------------


def test_band_noise_is_confined_to_its_band(rng):
    x = band_noise(3000, 100.0, (9.0, 11.0), rng)
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(3000, d=0.01)
    outside = (freqs < 9.0) | (freqs > 11.0)
    assert spectrum[outside].sum() < 1e-12 * spectrum.sum()


def test_colored_noise_falls_with_frequency(rng):
    x = colored_noise(30000, 100.0, 1.0, rng)
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(30000, d=0.01)
    low = power[(freqs >= 1.0) & (freqs < 2.0)].mean()
    high = power[(freqs >= 20.0) & (freqs < 40.0)].mean()
    assert low > 5.0 * high


def test_stage_sequence_runs(rng):
    labels = stage_sequence(200, rng, run_epochs=(2, 6))
    assert len(labels) == 200
    assert set(labels.tolist()) <= {0, 1, 2, 3, 4}
    changes = np.flatnonzero(np.diff(labels)) + 1
    runs = np.diff(np.concatenate([[0], changes, [len(labels)]]))
    assert runs[:-1].min() >= 2


def test_stage_sequence_can_exclude(rng):
    labels = stage_sequence(500, rng, excluded_fraction=0.3)
    assert (labels == int(Stage.EXCLUDED)).any()


# --------------------------------
# Corpus generation
# --------------------------------


def test_each_epoch_peaks_in_its_stage_band(rng):
    spec = _small_spec(minutes_per_recording=10.0, channel_counts=(1,), nuisance=False)
    corpus = synth_generate(spec, rng)
    n = int(EPOCH_SECONDS * 100)
    freqs = np.fft.rfftfreq(n, d=0.01)
    hits = total = 0
    for rec in corpus[0]:
        x = rec.channels[0].samples
        for e, stage in enumerate(rec.hypnogram):
            low, high = spec.bands[Stage(int(stage)).name]
            peak = freqs[np.argmax(np.abs(np.fft.rfft(x[e * n:(e + 1) * n])))]
            hits += low <= peak <= high
            total += 1
    assert total == 40
    assert hits >= 0.99 * total


def test_generation_is_deterministic():
    spec = _small_spec()
    first = synth_generate(spec, np.random.default_rng(5))
    second = synth_generate(spec, np.random.default_rng(5))
    for a, b in zip(first[0], second[0]):
        np.testing.assert_array_equal(a.hypnogram, b.hypnogram)
        for ca, cb in zip(a.channels, b.channels):
            np.testing.assert_array_equal(ca.samples, cb.samples)


def test_datasets_cycle_rates_and_channel_counts(rng):
    spec = _small_spec(n_datasets=3, subjects_per_dataset=1, rates=(100.0, 128.0), channel_counts=(2, 3))
    corpus = synth_generate(spec, rng)
    assert [recs[0].dataset_id for recs in corpus] == ["A", "B", "C"]
    assert [recs[0].channels[0].rate for recs in corpus] == [100.0, 128.0, 100.0]
    assert [len(recs[0].channels) for recs in corpus] == [2, 3, 2]
    assert corpus[1][0].subject_id == "B00"
    assert len(corpus[0][0].hypnogram) == 3


def test_no_subjects_gives_empty_corpus(rng):
    assert synth_generate(SynthSpec(subjects_per_dataset=0), rng) == []


def test_band_above_nyquist_is_rejected():
    with pytest.raises(ConfigError):
        _small_spec(bands={**DEFAULT_BANDS, "W": (9.0, 60.0)}).validate()
    # the target rate bounds the band even when the native rate allows it
    with pytest.raises(ConfigError):
        _small_spec(rates=(256.0,), bands={**DEFAULT_BANDS, "W": (40.0, 55.0)}).validate(target_rate=102.4)


@pytest.mark.parametrize(
    "changes",
    [{"bands": {"W": (9.0, 11.0)}}, {"dataset_ids": ["X", "Y"]}, {"run_epochs": (3, 2)}, {"minutes_per_recording": 0.2}],
)
def test_invalid_specs(changes):
    with pytest.raises(ConfigError):
        _small_spec(**changes).validate()


def test_sample_sets_are_preprocessed():
    sets = synth_sample_sets(_small_spec(n_datasets=2), seed=3)
    assert [s.dataset_id for s in sets] == ["A", "B"]
    for s in sets:
        assert s.x.shape == (2, 9, 9216)
        assert s.subjects() == [f"{s.dataset_id}00", f"{s.dataset_id}01"]


def test_write_corpus(tmp_path, rng):
    corpus = synth_generate(_small_spec(), rng)
    index_path = write_corpus(tmp_path, corpus)
    assert index_path == tmp_path / INDEX_FILE
    index = pd.read_csv(index_path)
    assert list(index.columns) == ["dataset_id", "subject_id", "recording_id", "edf", "hypnogram"]
    assert index["recording_id"].tolist() == ["A00R0", "A01R0"]

    row = index.iloc[0]
    loaded = load_recording(tmp_path / row["edf"], tmp_path / row["hypnogram"], subject_id=row["subject_id"])
    original = corpus[0][0]
    np.testing.assert_array_equal(loaded.hypnogram, original.hypnogram)
    for got, want in zip(loaded.channels, original.channels):
        step = (np.ceil(want.samples.max()) - np.floor(want.samples.min())) / 65535
        assert got.rate == want.rate
        np.testing.assert_allclose(got.samples, want.samples, rtol=0, atol=step)
