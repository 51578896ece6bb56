import numpy as np
import pytest

from edf_io import Channel, Recording, Stage
from errors import PrepError, ShapeError
from signal_prep import (
    PrepConfig,
    SampleSet,
    SpectralPair,
    harmonize_channels,
    irfft,
    one_hot,
    preprocess_recording,
    preprocess_recordings,
    read_sample_cache,
    resample,
    rfft,
    segment,
    spectral_energy,
    write_sample_cache,
    zscore,
)


# --------------------------------
# Resampling
# --------------------------------


@pytest.mark.parametrize("rate", [100.0, 102.4, 128.0, 173.0, 200.0, 256.0])
def test_resample_one_epoch_to_target_rate(rate):
    ch = Channel(np.random.default_rng(0).normal(size=int(round(30 * rate))), rate=rate)
    out = resample(ch, 102.4)
    assert len(out.samples) == 3072
    assert out.rate == 102.4


def test_resample_identity_rates_is_exact():
    samples = np.random.default_rng(1).normal(size=500)
    out = resample(Channel(samples, rate=102.4), 102.4)
    np.testing.assert_array_equal(out.samples, samples)


def test_resample_empty_input_gives_empty_output():
    out = resample(Channel(np.zeros(0), rate=256.0), 102.4)
    assert out.samples.size == 0


def test_resample_rejects_non_positive_rate():
    with pytest.raises(PrepError):
        resample(Channel(np.zeros(10), rate=0.0), 102.4)


def test_resample_keeps_tone_in_band():
    rate, target, freq = 256.0, 102.4, 5.0
    t = np.arange(int(10 * rate)) / rate
    out = resample(Channel(np.sin(2 * np.pi * freq * t), rate=rate), target)
    assert len(out.samples) == 1024

    spectrum = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(len(out.samples), d=1.0 / target)
    assert freqs[np.argmax(spectrum)] == pytest.approx(freq)

    # Compare away from the edges, where the filter sees zero padding
    t_out = np.arange(len(out.samples)) / target
    ideal = np.sin(2 * np.pi * freq * t_out)
    interior = slice(64, -64)
    error = out.samples[interior] - ideal[interior]
    snr_db = 10 * np.log10(np.sum(ideal[interior] ** 2) / np.sum(error ** 2))
    assert snr_db >= 40.0


# --------------------------------
# Normalization and channel count
# --------------------------------


def test_zscore_formula():
    out = zscore(Channel(np.array([1.0, 2.0, 3.0, 4.0]), rate=1.0))
    np.testing.assert_allclose(out.samples, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)


def test_zscore_constant_channel_is_zero():
    out = zscore(Channel(np.full(20, 7.5), rate=1.0))
    np.testing.assert_array_equal(out.samples, np.zeros(20))


def test_zscore_of_normalized_input_is_unchanged():
    x = np.random.default_rng(2).normal(size=1000)
    x = (x - x.mean()) / x.std()
    np.testing.assert_allclose(zscore(Channel(x, rate=1.0)).samples, x, atol=1e-6)


def _labelled_channels(n, length=50):
    rng = np.random.default_rng(n)
    return [Channel(rng.normal(size=length), rate=10.0, label=f"C{i}") for i in range(n)]


def test_harmonize_nine_channels_is_a_permutation(rng):
    chs = _labelled_channels(9)
    out = harmonize_channels(chs, 9, rng)
    assert sorted(ch.label for ch in out) == sorted(ch.label for ch in chs)


def test_harmonize_selects_distinct_originals(rng):
    chs = _labelled_channels(12)
    out = harmonize_channels(chs, 9, rng)
    labels = [ch.label for ch in out]
    assert len(out) == 9
    assert len(set(labels)) == 9
    assert set(labels) <= {ch.label for ch in chs}


def test_harmonize_pads_with_zero_rows(rng):
    chs = _labelled_channels(5)
    out = harmonize_channels(chs, 9, rng)
    zero_rows = [ch for ch in out if not np.any(ch.samples)]
    assert len(out) == 9
    assert len(zero_rows) == 4
    assert {ch.label for ch in out if ch.label} == {ch.label for ch in chs}


def test_harmonize_requires_channels(rng):
    with pytest.raises(PrepError):
        harmonize_channels([], 9, rng)


# --------------------------------
# Segmentation
# --------------------------------


def _recording(stages, rate=1.0, n_channels=2):
    n_points = int(len(stages) * 30 * rate)
    channels = [Channel(np.arange(n_points, dtype=float) + i, rate=rate) for i in range(n_channels)]
    return Recording("s", "d", channels, np.array(stages, dtype=np.int8), recording_id="s-r")


def test_segment_single_window():
    samples = segment(_recording([Stage.N2] * 3))
    assert len(samples) == 1
    assert samples[0].y == Stage.N2
    assert samples[0].x.shape == (2, 90)


def test_segment_non_overlapping_windows():
    samples = segment(_recording([Stage.W] * 10))
    assert len(samples) == 3
    starts = [s.x[0, 0] for s in samples]
    assert starts == [0.0, 90.0, 180.0]


def test_segment_labels_by_central_epoch():
    samples = segment(_recording([Stage.W, Stage.N1, Stage.REM]))
    assert [s.y for s in samples] == [Stage.N1]


def test_segment_drops_windows_with_excluded_epochs():
    stages = [Stage.W, Stage.EXCLUDED, Stage.W, Stage.N1, Stage.N2]
    samples = segment(_recording(stages))
    assert len(samples) == 1
    assert samples[0].y == Stage.N1
    assert samples[0].x[0, 0] == 60.0


def test_segment_short_recording_gives_nothing():
    assert segment(_recording([Stage.W, Stage.W])) == []


def test_segment_shuffles_with_generator(rng):
    samples = segment(_recording([Stage.W] * 30), rng)
    starts = sorted(s.x[0, 0] for s in samples)
    assert starts == [90.0 * i for i in range(10)]


def test_preprocess_recording_shape(rng):
    rec = Recording(
        "s",
        "d",
        [Channel(rng.normal(size=30000), rate=100.0, label=f"E{i}") for i in range(3)],
        np.array([0, 1, 2, 3, 4, 0, 1, 2, 3, 4], dtype=np.int8),
    )
    samples = preprocess_recording(rec, rng)
    assert len(samples) == 3
    for s in samples:
        assert s.x.shape == (9, 9216)
        assert s.x.dtype == np.float32


def test_preprocess_recording_normalizes_whole_recording(rng):
    t = np.linspace(0.0, 10.0, 18000)
    rec = Recording(
        "s",
        "d",
        [
            Channel(40.0 + 7.0 * (rng.normal(size=t.size) + t), rate=100.0),
            Channel(-3.0 + 0.2 * (rng.normal(size=t.size) - t), rate=100.0),
        ],
        np.full(6, int(Stage.N2), dtype=np.int8),
    )
    samples = preprocess_recording(rec, rng, PrepConfig(n_channels=2))
    assert len(samples) == 2
    # windows cover the recording, so their union carries the recording statistics
    joined = np.concatenate([s.x for s in samples], axis=1).astype(np.float64)
    np.testing.assert_allclose(joined.mean(axis=1), 0.0, atol=1e-5)
    np.testing.assert_allclose(joined.std(axis=1), 1.0, atol=1e-4)
    # the trend makes each window off-centre, which per-window scaling would hide
    for s in samples:
        assert np.all(np.abs(s.x.mean(axis=1)) > 0.5)


def test_preprocess_recordings_is_seeded():
    rng = np.random.default_rng(3)
    recs = [
        Recording(f"s{i}", "d", [Channel(rng.normal(size=900), rate=10.0) for _ in range(4)], np.zeros(3, dtype=np.int8))
        for i in range(3)
    ]
    cfg = PrepConfig(target_rate=10.0, n_channels=3)
    a = preprocess_recordings(recs, 5, cfg)
    b = preprocess_recordings(recs, 5, cfg)
    assert len(a) == 3
    np.testing.assert_array_equal(a.x, b.x)
    assert a.dataset_id == "d"


# --------------------------------
# Real FFT
# --------------------------------


def test_rfft_of_impulse():
    sp = rfft([1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(sp.magnitude, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(sp.phase, [0.0, 0.0, 0.0])


def test_rfft_of_constant_pins_zero_bin_phase():
    sp = rfft(np.full(8, 2.5))
    np.testing.assert_allclose(sp.magnitude, [20.0, 0, 0, 0, 0], atol=1e-12)
    np.testing.assert_array_equal(sp.phase, np.zeros(5))


@pytest.mark.parametrize("n", [4, 15, 3072])
def test_irfft_inverts_rfft(n):
    x = np.random.default_rng(n).normal(size=n)
    sp = rfft(x)
    assert sp.n_bins == n // 2 + 1
    assert np.all(sp.magnitude >= 0)
    back = irfft(sp, n)
    assert np.sqrt(np.mean((back - x) ** 2)) < 1e-6


@pytest.mark.parametrize("n", [7, 16, 3072])
def test_spectral_energy_matches_signal_energy(n):
    x = np.random.default_rng(n + 1).normal(size=n)
    assert spectral_energy(rfft(x), n) == pytest.approx(np.sum(x ** 2), rel=1e-5)


def test_irfft_bin_count_mismatch():
    with pytest.raises(ShapeError):
        irfft(SpectralPair(np.ones(3), np.zeros(3)), 8)


# --------------------------------
# Sample sets and cache
# --------------------------------


def test_sample_cache_round_trip(tmp_path, sample_set_factory, rng):
    original = sample_set_factory("C", 3, 4, rng, n_recordings=2)
    write_sample_cache(tmp_path / "C", original)
    loaded = read_sample_cache(tmp_path / "C")
    np.testing.assert_array_equal(loaded.x, original.x)
    np.testing.assert_array_equal(loaded.y, original.y)
    assert list(loaded.subject_ids) == list(original.subject_ids)
    assert list(loaded.recording_ids) == list(original.recording_ids)
    assert loaded.dataset_id == "C"
    assert loaded.config == original.config


def test_sample_set_grouping(sample_set_factory, rng):
    ds = sample_set_factory("D", 3, 5, rng)
    groups = ds.by_subject()
    assert sorted(groups) == ["D00", "D01", "D02"]
    assert all(len(idx) == 5 for idx in groups.values())
    assert ds.class_counts().sum() == 15
    assert len(SampleSet.concat([ds, ds.subset([0, 1])])) == 17


def test_one_hot():
    np.testing.assert_array_equal(one_hot([0, 4]), [[1, 0, 0, 0, 0], [0, 0, 0, 0, 1]])
