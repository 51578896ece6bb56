import numpy as np
import pytest

from edf_io import (
    ANNOTATION_LABEL,
    Channel,
    EdfHeader,
    EdfMetadata,
    Hypnogram,
    HypnogramEntry,
    Recording,
    SignalHeader,
    Stage,
    annotation_bytes,
    load_recording,
    map_stages,
    parse_edf,
    parse_hypnogram,
    scale_digital,
    to_physical,
    write_edf,
    write_edf_file,
    write_edf_raw,
    write_hypnogram_csv,
)
from errors import CalibrationError, EdfFormatError


# --------------------------------
# Calibration
# --------------------------------


def test_scale_digital_endpoints_are_exact():
    sig = SignalHeader(label="EEG", phys_min=-250.0, phys_max=250.0, dig_min=-32768, dig_max=32767)
    assert scale_digital(-32768, sig) == -250.0
    assert scale_digital(32767, sig) == 250.0


def test_scale_digital_zero_matches_formula():
    sig = SignalHeader(label="EEG", phys_min=-250.0, phys_max=250.0, dig_min=-32768, dig_max=32767)
    assert scale_digital(0, sig) == pytest.approx(250.0 * (32768 * 2 / 65535 - 1), abs=1e-12)
    assert scale_digital(0, sig) == pytest.approx(0.003815, abs=1e-6)


def test_scale_digital_is_strictly_increasing():
    sig = SignalHeader(label="EEG", phys_min=-100.0, phys_max=300.0, dig_min=-2048, dig_max=2047)
    phys = scale_digital(np.arange(-2048, 2048), sig)
    assert np.all(np.diff(phys) > 0)


def test_scale_digital_equal_digital_range_is_calibration_error():
    sig = SignalHeader(label="EEG", dig_min=5, dig_max=5)
    with pytest.raises(CalibrationError):
        scale_digital(5, sig)


def test_out_of_range_samples_are_clamped_and_counted():
    sig = SignalHeader(label="EEG", phys_min=0.0, phys_max=1.0, dig_min=0, dig_max=100)
    phys, n_clamped = to_physical(np.array([-5, 0, 50, 100, 120]), sig)
    assert n_clamped == 2
    np.testing.assert_allclose(phys, [0.0, 0.0, 0.5, 1.0, 1.0])


# --------------------------------
# EDF parse / write
# --------------------------------


def _random_edf(rng):
    ns = int(rng.integers(1, 5))
    n_records = int(rng.integers(0, 4))
    signals, digital = [], []
    for i in range(ns):
        dig_min = int(rng.integers(-32768, 0))
        dig_max = int(rng.integers(1, 32768))
        phys_min = round(float(rng.uniform(-500, -1)), 1)
        sig = SignalHeader(
            label=f"EEG{i}",
            transducer="AgAgCl electrode",
            physical_dim="uV",
            phys_min=phys_min,
            phys_max=round(phys_min + float(rng.uniform(1, 900)), 1),
            dig_min=dig_min,
            dig_max=dig_max,
            prefiltering="HP:0.1Hz",
            samples_per_record=int(rng.integers(1, 20)),
        )
        signals.append(sig)
        digital.append(rng.integers(dig_min, dig_max + 1, size=n_records * sig.samples_per_record).astype(np.int16))
    header = EdfHeader(patient_id="P 001", recording_id="Startdate X", record_duration=float(rng.choice([1, 2, 30])))
    return header, signals, digital


def test_parse_reproduces_written_headers_and_samples():
    rng = np.random.default_rng(0)
    for _ in range(100):
        header, signals, digital = _random_edf(rng)
        contents = parse_edf(write_edf_raw(header, signals, digital))
        assert contents.header.n_signals == len(signals)
        assert contents.header.header_bytes == 256 * (1 + len(signals))
        assert contents.header.patient_id == header.patient_id
        assert contents.header.record_duration == header.record_duration
        assert contents.signals == signals
        for got, want in zip(contents.digital, digital):
            np.testing.assert_array_equal(got, want)


def test_one_sample_file_has_expected_size():
    rec = Recording("s1", "d1", [Channel(np.array([0.0]), rate=1.0, label="EEG")], np.zeros(0, dtype=np.int8))
    data = write_edf(rec)
    assert len(data) == 512 + 2


def test_empty_file_parses_to_no_signals():
    contents = parse_edf(write_edf_raw(EdfHeader(), [], []))
    assert contents.signals == []
    assert contents.header.n_records == 0
    assert contents.header.header_bytes == 256


def test_inconsistent_header_bytes_names_both_values():
    header, signals, digital = _random_edf(np.random.default_rng(3))
    data = bytearray(write_edf_raw(header, signals, digital))
    data[184:192] = b"999     "
    with pytest.raises(EdfFormatError) as info:
        parse_edf(bytes(data))
    assert info.value.offset == 184
    assert "999" in str(info.value)
    assert str(256 * (1 + len(signals))) in str(info.value)


def test_non_numeric_field_reports_offset():
    data = bytearray(write_edf_raw(EdfHeader(), [], []))
    data[236:244] = b"abc     "
    with pytest.raises(EdfFormatError) as info:
        parse_edf(bytes(data))
    assert info.value.field == "n_records"
    assert info.value.offset == 236


def test_truncated_stream_is_rejected():
    header = EdfHeader(record_duration=1.0)
    sig = SignalHeader(label="EEG", samples_per_record=4)
    data = write_edf_raw(header, [sig], [np.arange(8, dtype=np.int16)])
    with pytest.raises(EdfFormatError):
        parse_edf(data[:-3])
    with pytest.raises(EdfFormatError):
        parse_edf(data[:100])


def test_label_longer_than_field_is_rejected():
    rec = Recording("s1", "d1", [Channel(np.zeros(4), rate=1.0, label="x" * 17)], np.zeros(0, dtype=np.int8))
    with pytest.raises(EdfFormatError):
        write_edf(rec)


def test_inconsistent_channel_lengths_are_rejected():
    channels = [Channel(np.zeros(100), rate=100.0, label="A"), Channel(np.zeros(150), rate=100.0, label="B")]
    rec = Recording("s1", "d1", channels, np.zeros(0, dtype=np.int8))
    with pytest.raises(EdfFormatError):
        write_edf(rec)


def test_recording_round_trip_within_quantization():
    rng = np.random.default_rng(5)
    samples = rng.normal(scale=40.0, size=3000)
    rec = Recording("s1", "d1", [Channel(samples, rate=100.0, label="Fpz-Cz")], np.zeros(1, dtype=np.int8))
    contents = parse_edf(write_edf(rec, EdfMetadata(patient_id="s1")))
    sig = contents.signals[0]
    phys, _ = to_physical(contents.digital[0], sig)
    step = (sig.phys_max - sig.phys_min) / (sig.dig_max - sig.dig_min)
    assert np.max(np.abs(phys - samples)) <= step
    assert contents.header.n_records * contents.header.record_duration == pytest.approx(30.0)


# --------------------------------
# Stages and hypnograms
# --------------------------------


def test_map_stages_merges_and_excludes():
    assert map_stages("Sleep stage 4") == Stage.N3
    assert map_stages("Sleep stage 3") == Stage.N3
    assert map_stages("Sleep stage R") == Stage.REM
    assert map_stages("Movement time") == Stage.EXCLUDED
    assert map_stages("Sleep stage ?") == Stage.EXCLUDED
    assert map_stages("something else") == Stage.EXCLUDED


def test_parse_hypnogram_rows():
    hyp = parse_hypnogram([(0, 30, "W"), (30, 30, "N2")])
    assert [(e.onset, e.duration, e.stage) for e in hyp.entries] == [(0.0, 30.0, Stage.W), (30.0, 30.0, Stage.N2)]


def test_parse_hypnogram_tal():
    hyp = parse_hypnogram(b"+0\x15 30\x14Sleep stage W\x14\x00")
    assert len(hyp) == 1
    entry = hyp.entries[0]
    assert (entry.onset, entry.duration, entry.stage) == (0.0, 30.0, Stage.W)


def test_parse_hypnogram_empty_sources():
    assert len(parse_hypnogram([])) == 0
    assert len(parse_hypnogram(b"")) == 0
    assert len(parse_hypnogram("")) == 0


def test_unknown_stage_tokens_are_counted_and_excluded():
    hyp = parse_hypnogram("onset,duration,stage\n0,30,W\n30,30,banana\n")
    assert hyp.n_unknown == 1
    assert hyp.entries[1].stage == Stage.EXCLUDED


def test_normalized_hypnogram_covers_whole_epochs():
    hyp = Hypnogram([HypnogramEntry(60, 60, Stage.N2), HypnogramEntry(0, 30, Stage.W)])
    labels = hyp.to_epochs(total_duration=155.0)
    assert len(labels) == 5
    np.testing.assert_array_equal(labels, [0, -1, 2, 2, -1])


# --------------------------------
# Files
# --------------------------------


def test_load_recording_with_csv_hypnogram(tmp_path):
    rng = np.random.default_rng(11)
    epochs = np.array([0, 1, 2, 3], dtype=np.int8)
    channels = [Channel(rng.normal(size=12000), rate=100.0, label=f"EEG{i}") for i in range(3)]
    rec = Recording("subj", "ds", channels, epochs, recording_id="r1")
    edf_path = write_edf_file(tmp_path / "r1.edf", rec)
    csv_path = write_hypnogram_csv(tmp_path / "r1.csv", epochs)

    loaded = load_recording(edf_path, csv_path, channels=["eeg0", "EEG2"], subject_id="subj", dataset_id="ds")
    assert [ch.label for ch in loaded.channels] == ["EEG0", "EEG2"]
    assert loaded.channels[0].rate == pytest.approx(100.0)
    np.testing.assert_array_equal(loaded.hypnogram, epochs)
    assert loaded.recording_id == "r1"


def test_load_recording_reads_edf_plus_annotations(tmp_path):
    tal = b"+0\x14\x14\x00+0\x1560\x14Sleep stage 2\x14\x00+60\x1530\x14Sleep stage R\x14\x00"
    tal = tal + b"\x00" * (len(tal) % 2)
    annotations = np.frombuffer(tal, dtype="<i2")
    n_ann = len(annotations)
    header = EdfHeader(record_duration=90.0)
    eeg = SignalHeader(label="EEG", samples_per_record=90 * 10)
    ann = SignalHeader(label=ANNOTATION_LABEL, samples_per_record=n_ann)
    data = write_edf_raw(header, [eeg, ann], [np.zeros(900, dtype=np.int16), annotations])
    path = tmp_path / "plus.edf"
    path.write_bytes(data)

    contents = parse_edf(data)
    assert annotation_bytes(contents.signals, contents.digital).rstrip(b"\x00") == tal.rstrip(b"\x00")
    rec = load_recording(path, dataset_id="ds")
    assert len(rec.channels) == 1
    np.testing.assert_array_equal(rec.hypnogram, [Stage.N2, Stage.N2, Stage.REM])
