"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
edf_io.py file for EDF ingestion
--------------------------------------
Parses and writes European Data Format recordings, decodes hypnograms from
CSV files or EDF+ annotation signals, and assembles Recording values.
"""

import io
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd

from errors import CalibrationError, DataError, EdfFormatError, HypnogramError
from logging_config import get_logger

logger = get_logger(__name__)

EPOCH_SECONDS = 30.0
ANNOTATION_LABEL = "EDF Annotations"
DIGITAL_LIMITS = (-32768, 32767)

# Fixed field widths of the global header, in file order
GLOBAL_FIELDS = [
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
]

# Fixed field widths of the per-signal header, each stored as a block of ns values
SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]


# --------------------------------
# Sleep stages
# --------------------------------


class Stage(IntEnum):
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4
    EXCLUDED = -1


SLEEP_STAGES = (Stage.W, Stage.N1, Stage.N2, Stage.N3, Stage.REM)

_STAGE_TOKENS = {
    Stage.W: ["w", "wake", "0", "sleep stage w", "stage w"],
    Stage.N1: ["n1", "s1", "1", "sleep stage 1", "sleep stage n1", "stage 1"],
    Stage.N2: ["n2", "s2", "2", "sleep stage 2", "sleep stage n2", "stage 2"],
    # R&K stages 3 and 4 merge into N3
    Stage.N3: [
        "n3", "s3", "3", "n4", "s4", "4",
        "sleep stage 3", "sleep stage 4", "sleep stage n3", "sleep stage n4",
        "stage 3", "stage 4",
    ],
    Stage.REM: ["r", "rem", "5", "sleep stage r", "sleep stage rem", "stage r"],
    Stage.EXCLUDED: [
        "movement time", "movement", "mt", "m", "sleep stage ?", "?",
        "unknown", "unscored", "artifact", "art", "-1", "excluded",
    ],
}
STAGE_LOOKUP = {token: stage for stage, tokens in _STAGE_TOKENS.items() for token in tokens}


def _normalize_token(raw):
    return " ".join(str(raw).strip().lower().split())


def is_known_stage(raw):
    """True if the token is part of the stage vocabulary (EXCLUDED tokens included)"""
    return _normalize_token(raw) in STAGE_LOOKUP


def map_stages(raw):
    """Map a legacy stage token onto W/N1/N2/N3/REM, anything else to EXCLUDED"""
    return STAGE_LOOKUP.get(_normalize_token(raw), Stage.EXCLUDED)


# --------------------------------
# Domain types
# --------------------------------


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = "X"
    recording_id: str = "X"
    start_date: str = "01.01.85"
    start_time: str = "00.00.00"
    header_bytes: int = 256
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    n_signals: int = 0


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    physical_dim: str = "uV"
    phys_min: float = -250.0
    phys_max: float = 250.0
    dig_min: int = DIGITAL_LIMITS[0]
    dig_max: int = DIGITAL_LIMITS[1]
    prefiltering: str = ""
    samples_per_record: int = 1
    reserved: str = ""

    def validate(self):
        """Check the calibration and layout invariants of a signal header"""
        if not (DIGITAL_LIMITS[0] <= self.dig_min < self.dig_max <= DIGITAL_LIMITS[1]):
            raise EdfFormatError(
                f"signal '{self.label}': digital range [{self.dig_min}, {self.dig_max}] invalid",
                field="dig_min/dig_max",
            )
        if self.phys_min == self.phys_max:
            raise CalibrationError(f"signal '{self.label}': phys_min equals phys_max ({self.phys_min})")
        if self.samples_per_record < 1:
            raise EdfFormatError(
                f"signal '{self.label}': samples_per_record must be >= 1", field="samples_per_record"
            )


class EdfContents(NamedTuple):
    header: EdfHeader
    signals: List[SignalHeader]
    digital: List[np.ndarray]


@dataclass
class Channel:
    """One physical signal sampled at a fixed rate"""

    samples: np.ndarray
    rate: float
    label: str = ""

    @property
    def duration(self):
        return len(self.samples) / self.rate if self.rate > 0 else 0.0


@dataclass
class HypnogramEntry:
    onset: float
    duration: float
    stage: Stage


@dataclass
class Hypnogram:
    entries: List[HypnogramEntry] = field(default_factory=list)
    n_unknown: int = 0

    def __len__(self):
        return len(self.entries)

    def normalize(self, epoch_seconds=EPOCH_SECONDS):
        """Sort by onset and snap durations to whole epochs, dropping empty entries"""
        entries = []
        for entry in sorted(self.entries, key=lambda e: e.onset):
            n_epochs = int(round(entry.duration / epoch_seconds))
            if n_epochs <= 0:
                continue
            entries.append(HypnogramEntry(entry.onset, n_epochs * epoch_seconds, entry.stage))
        return Hypnogram(entries, self.n_unknown)

    def to_epochs(self, total_duration, epoch_seconds=EPOCH_SECONDS):
        """Expand into one label per epoch; gaps are EXCLUDED"""
        n_epochs = int(math.floor(total_duration / epoch_seconds + 1e-9))
        labels = np.full(n_epochs, int(Stage.EXCLUDED), dtype=np.int8)
        for entry in self.normalize(epoch_seconds).entries:
            start = int(round(entry.onset / epoch_seconds))
            count = int(round(entry.duration / epoch_seconds))
            if start >= n_epochs:
                continue
            labels[max(start, 0):min(start + count, n_epochs)] = int(entry.stage)
        return labels


@dataclass
class Recording:
    subject_id: str
    dataset_id: str
    channels: List[Channel]
    hypnogram: np.ndarray
    recording_id: str = ""

    @property
    def duration(self):
        if not self.channels:
            return 0.0
        return min(ch.duration for ch in self.channels)

    def validate(self, epoch_seconds=EPOCH_SECONDS):
        """Check that channels agree on duration and the hypnogram covers it"""
        if self.channels:
            durations = [ch.duration for ch in self.channels]
            tolerance = max(1.0 / ch.rate for ch in self.channels)
            if max(durations) - min(durations) > tolerance + 1e-9:
                raise DataError(
                    f"recording {self.recording_id or self.subject_id}: channel durations differ "
                    f"({min(durations):.3f}s vs {max(durations):.3f}s)"
                )
        expected = int(math.floor(self.duration / epoch_seconds + 1e-9))
        if len(self.hypnogram) != expected:
            raise DataError(
                f"recording {self.recording_id or self.subject_id}: hypnogram has "
                f"{len(self.hypnogram)} epochs, expected {expected}"
            )
        return self


@dataclass
class EdfMetadata:
    """Header values write_edf cannot derive from a Recording"""

    patient_id: str = "X"
    recording_id: str = "X"
    start_date: str = "01.01.85"
    start_time: str = "00.00.00"
    record_duration: Optional[float] = None
    signal_templates: dict = field(default_factory=dict)
    reserved: str = ""


# --------------------------------
# Calibration
# --------------------------------


def scale_digital(dig, sig):
    """Map digital sample(s) to physical units; out-of-range input is clamped"""
    if sig.dig_max == sig.dig_min:
        raise CalibrationError(f"signal '{sig.label}': dig_min equals dig_max ({sig.dig_min})")
    values = np.clip(np.asarray(dig, dtype=np.float64), sig.dig_min, sig.dig_max)
    phys = (values - sig.dig_min) * (sig.phys_max - sig.phys_min) / (sig.dig_max - sig.dig_min) + sig.phys_min
    if np.ndim(phys) == 0:
        return float(phys)
    return phys


def to_physical(digital, sig):
    """Calibrate a digital vector, returning (physical samples, number clamped)"""
    digital = np.asarray(digital)
    n_clamped = int(np.count_nonzero((digital < sig.dig_min) | (digital > sig.dig_max)))
    if n_clamped:
        logger.warning(f"Signal '{sig.label}': clamped {n_clamped} out-of-range samples")
    return scale_digital(digital, sig), n_clamped


def to_digital(physical, sig):
    """Quantize physical samples onto the signal's digital grid"""
    if sig.phys_max == sig.phys_min:
        raise CalibrationError(f"signal '{sig.label}': phys_min equals phys_max ({sig.phys_min})")
    scaled = (np.asarray(physical, dtype=np.float64) - sig.phys_min) * (sig.dig_max - sig.dig_min) / (
        sig.phys_max - sig.phys_min
    ) + sig.dig_min
    return np.clip(np.round(scaled), sig.dig_min, sig.dig_max).astype(np.int16)


# --------------------------------
# Parsing
# --------------------------------


def _field_text(data, offset, width):
    return data[offset:offset + width].decode("latin-1").rstrip(" \x00")


def _field_number(data, offset, width, name, kind=int):
    text = data[offset:offset + width].decode("latin-1").strip()
    try:
        if kind is int:
            return int(float(text)) if "." in text else int(text)
        return float(text)
    except ValueError:
        raise EdfFormatError(f"non-numeric value '{text}'", offset=offset, field=name) from None


def parse_edf(data):
    """Decode an EDF byte stream into headers and per-signal digital samples"""
    data = bytes(data)
    if len(data) < 256:
        raise EdfFormatError(f"truncated stream: {len(data)} bytes, global header needs 256", offset=len(data))

    values = {}
    offset = 0
    for name, width in GLOBAL_FIELDS:
        if name in ("header_bytes", "n_records", "n_signals"):
            values[name] = _field_number(data, offset, width, name, int)
        elif name == "record_duration":
            values[name] = _field_number(data, offset, width, name, float)
        else:
            values[name] = _field_text(data, offset, width)
        offset += width
    header = EdfHeader(**values)

    ns = header.n_signals
    if ns < 0:
        raise EdfFormatError(f"negative n_signals {ns}", offset=252, field="n_signals")
    expected_bytes = 256 * (1 + ns)
    if header.header_bytes != expected_bytes:
        raise EdfFormatError(
            f"header_bytes {header.header_bytes} inconsistent with n_signals {ns} (expected {expected_bytes})",
            offset=184,
            field="header_bytes",
        )
    if len(data) < expected_bytes:
        raise EdfFormatError(
            f"truncated stream: signal headers need {expected_bytes} bytes, got {len(data)}", offset=len(data)
        )

    columns = {name: [] for name, _ in SIGNAL_FIELDS}
    for name, width in SIGNAL_FIELDS:
        for _ in range(ns):
            if name in ("dig_min", "dig_max", "samples_per_record"):
                columns[name].append(_field_number(data, offset, width, name, int))
            elif name in ("phys_min", "phys_max"):
                columns[name].append(_field_number(data, offset, width, name, float))
            else:
                columns[name].append(_field_text(data, offset, width))
            offset += width
    signals = [SignalHeader(**{name: columns[name][i] for name, _ in SIGNAL_FIELDS}) for i in range(ns)]
    for i, sig in enumerate(signals):
        if sig.samples_per_record < 1:
            raise EdfFormatError(
                f"signal {i} ('{sig.label}') has samples_per_record {sig.samples_per_record}",
                field="samples_per_record",
            )

    spr = [sig.samples_per_record for sig in signals]
    record_samples = int(sum(spr))
    record_bytes = 2 * record_samples
    available = len(data) - expected_bytes
    if header.n_records == -1:
        # Streaming writers leave -1 until finalized; infer from the payload
        header.n_records = available // record_bytes if record_bytes else 0
        logger.warning(f"n_records is -1, inferred {header.n_records} records from stream length")
    if header.n_records < 0:
        raise EdfFormatError(f"negative n_records {header.n_records}", offset=236, field="n_records")
    needed = header.n_records * record_bytes
    if available < needed:
        complete = available // record_bytes if record_bytes else 0
        raise EdfFormatError(
            f"truncated data: {header.n_records} records of {record_bytes} bytes declared, "
            f"{available} bytes present",
            offset=expected_bytes + complete * record_bytes,
        )
    if available > needed:
        logger.warning(f"Ignoring {available - needed} trailing bytes after the last data record")

    records = np.frombuffer(data, dtype="<i2", count=header.n_records * record_samples, offset=expected_bytes)
    records = records.reshape(header.n_records, record_samples)
    digital = []
    start = 0
    for n in spr:
        digital.append(records[:, start:start + n].reshape(-1).astype(np.int16))
        start += n

    return EdfContents(header, signals, digital)


def read_edf_file(path):
    """Parse an EDF file from disk"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"EDF file not found: {path}") from None
    except OSError as e:
        raise DataError(f"Cannot read EDF file {path}: {e}") from None
    logger.debug(f"Parsing {path} ({len(data)} bytes)")
    return parse_edf(data)


def annotation_bytes(signals, digital):
    """Raw TAL bytes of every 'EDF Annotations' signal, in record order"""
    chunks = [
        np.asarray(dig).astype("<i2").tobytes()
        for sig, dig in zip(signals, digital)
        if sig.label.strip() == ANNOTATION_LABEL
    ]
    return b"".join(chunks)


# --------------------------------
# Writing
# --------------------------------


def _pack_text(value, width, name):
    text = str(value)
    if len(text) > width:
        raise EdfFormatError(f"'{text}' is longer than {width} characters", field=name)
    if any(ord(c) < 32 or ord(c) > 126 for c in text):
        raise EdfFormatError(f"'{text}' contains non-printable ASCII", field=name)
    return text.ljust(width).encode("ascii")


def _pack_number(value, width, name):
    if isinstance(value, (int, np.integer)) or float(value).is_integer():
        text = str(int(value))
    else:
        text = repr(float(value))
        precision = width
        while len(text) > width and precision > 0:
            text = f"{float(value):.{precision}g}"
            precision -= 1
    return _pack_text(text, width, name)


def write_edf_raw(header, signals, digital):
    """Serialize headers and digital samples; n_records/n_signals/header_bytes are derived"""
    if len(signals) != len(digital):
        raise EdfFormatError(f"{len(signals)} signal headers but {len(digital)} sample vectors")
    if header.record_duration <= 0:
        raise EdfFormatError(f"record_duration must be > 0, got {header.record_duration}", field="record_duration")

    n_records = None
    for sig, dig in zip(signals, digital):
        sig.validate()
        if len(dig) % sig.samples_per_record:
            raise EdfFormatError(
                f"signal '{sig.label}': {len(dig)} samples is not a multiple of "
                f"samples_per_record {sig.samples_per_record}"
            )
        count = len(dig) // sig.samples_per_record
        if n_records is None:
            n_records = count
        elif count != n_records:
            raise EdfFormatError(
                f"signal '{sig.label}' spans {count} records, previous signals span {n_records}"
            )
    n_records = n_records or 0
    ns = len(signals)
    header = replace(header, n_signals=ns, header_bytes=256 * (1 + ns), n_records=n_records)

    out = io.BytesIO()
    for name, width in GLOBAL_FIELDS:
        value = getattr(header, name)
        if name in ("header_bytes", "n_records", "n_signals", "record_duration"):
            out.write(_pack_number(value, width, name))
        else:
            out.write(_pack_text(value, width, name))
    for name, width in SIGNAL_FIELDS:
        for sig in signals:
            value = getattr(sig, name)
            if name in ("phys_min", "phys_max", "dig_min", "dig_max", "samples_per_record"):
                out.write(_pack_number(value, width, name))
            else:
                out.write(_pack_text(value, width, name))

    if ns and n_records:
        blocks = [
            np.asarray(dig, dtype=np.int64).reshape(n_records, sig.samples_per_record)
            for sig, dig in zip(signals, digital)
        ]
        records = np.concatenate(blocks, axis=1)
        if records.min() < DIGITAL_LIMITS[0] or records.max() > DIGITAL_LIMITS[1]:
            raise EdfFormatError("digital samples exceed the 16-bit range")
        out.write(records.astype("<i2").tobytes())
    return out.getvalue()


def _record_duration_for(channels, requested=None):
    candidates = [requested] if requested else [1.0, 2.0, 5.0, 10.0, 30.0]
    for duration in candidates:
        ok = True
        for ch in channels:
            spr = ch.rate * duration
            if abs(spr - round(spr)) > 1e-6 or round(spr) < 1 or len(ch.samples) % int(round(spr)):
                ok = False
                break
        if ok:
            return duration
    raise EdfFormatError(
        "channel lengths inconsistent with record layout: no record duration gives whole "
        "samples per record for every channel"
    )


def _template_for(ch, metadata):
    template = metadata.signal_templates.get(ch.label)
    if template is not None:
        return replace(template, label=ch.label)
    samples = np.asarray(ch.samples, dtype=np.float64)
    low = float(np.floor(samples.min())) if samples.size else -1.0
    high = float(np.ceil(samples.max())) if samples.size else 1.0
    if high <= low:
        low, high = low - 1.0, low + 1.0
    return SignalHeader(label=ch.label, phys_min=low, phys_max=high)


def write_edf(recording, metadata=None):
    """Encode a Recording's channels as a bit-exact EDF byte stream"""
    metadata = metadata or EdfMetadata()
    duration = _record_duration_for(recording.channels, metadata.record_duration) if recording.channels else 1.0
    signals = []
    digital = []
    for ch in recording.channels:
        sig = _template_for(ch, metadata)
        sig.samples_per_record = int(round(ch.rate * duration))
        signals.append(sig)
        digital.append(to_digital(ch.samples, sig))
    header = EdfHeader(
        patient_id=metadata.patient_id,
        recording_id=metadata.recording_id,
        start_date=metadata.start_date,
        start_time=metadata.start_time,
        record_duration=duration,
        reserved=metadata.reserved,
    )
    return write_edf_raw(header, signals, digital)


def write_edf_file(path, recording, metadata=None):
    """Write a Recording to an EDF file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_edf(recording, metadata))
    logger.debug(f"Wrote {path}")
    return path


# --------------------------------
# Hypnograms
# --------------------------------


def _stage_entry(onset, duration, token, counter):
    stage = map_stages(token)
    if not is_known_stage(token):
        counter[0] += 1
    return HypnogramEntry(float(onset), float(duration), stage)


def _parse_csv_rows(rows):
    counter = [0]
    entries = []
    for i, row in enumerate(rows):
        if len(row) < 3:
            raise HypnogramError(f"hypnogram row {i} has {len(row)} columns, expected 3")
        onset, duration, token = row[0], row[1], row[2]
        try:
            onset, duration = float(onset), float(duration)
        except (TypeError, ValueError):
            if i == 0:
                # Header row
                continue
            raise HypnogramError(f"hypnogram row {i}: non-numeric onset/duration {row[:2]}") from None
        entries.append(_stage_entry(onset, duration, token, counter))
    return entries, counter[0]


def _parse_csv_text(text):
    if not text.strip():
        return [], 0
    frame = pd.read_csv(io.StringIO(text), header=None, dtype=str, skipinitialspace=True, keep_default_na=False)
    if frame.shape[1] < 3:
        raise HypnogramError(f"hypnogram CSV has {frame.shape[1]} columns, expected onset,duration,stage")
    rows = frame.iloc[:, :3].itertuples(index=False, name=None)
    return _parse_csv_rows([tuple(v.strip() for v in row) for row in rows])


def _parse_tal(raw):
    counter = [0]
    entries = []
    for tal in bytes(raw).split(b"\x00"):
        if not tal.strip(b"\x00 "):
            continue
        parts = tal.split(b"\x14")
        timing = parts[0].decode("latin-1")
        texts = [p.decode("latin-1").strip() for p in parts[1:] if p.strip()]
        onset_text, _, duration_text = timing.partition("\x15")
        try:
            onset = float(onset_text.strip())
        except ValueError:
            raise HypnogramError(f"TAL onset '{onset_text}' is not a number") from None
        # Time-keeping TALs and instantaneous events carry no stage
        if not texts or not duration_text.strip():
            continue
        try:
            duration = float(duration_text.strip())
        except ValueError:
            raise HypnogramError(f"TAL duration '{duration_text}' is not a number") from None
        for text in texts:
            lowered = _normalize_token(text)
            if lowered.startswith("sleep stage") or lowered.startswith("movement"):
                entries.append(_stage_entry(onset, duration, text, counter))
            else:
                logger.debug(f"Skipping non-stage annotation '{text}' at {onset}s")
    return entries, counter[0]


def parse_hypnogram(source):
    """Decode a hypnogram from CSV text/rows/files, EDF+ TAL bytes or an EDF+ file"""
    if isinstance(source, (bytes, bytearray, memoryview)):
        entries, n_unknown = _parse_tal(source)
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        path = Path(source)
        if not path.is_file():
            raise DataError(f"Hypnogram file not found: {path}")
        if path.suffix.lower() == ".edf":
            contents = read_edf_file(path)
            entries, n_unknown = _parse_tal(annotation_bytes(contents.signals, contents.digital))
        else:
            entries, n_unknown = _parse_csv_text(path.read_text(encoding="utf-8"))
    elif isinstance(source, str):
        entries, n_unknown = _parse_csv_text(source)
    else:
        entries, n_unknown = _parse_csv_rows([tuple(row) for row in source])

    if n_unknown:
        logger.warning(f"Hypnogram: {n_unknown} entries with unknown stage tokens marked EXCLUDED")
    return Hypnogram(entries, n_unknown).normalize()


def write_hypnogram_csv(path, epochs, epoch_seconds=EPOCH_SECONDS):
    """Write per-epoch labels as an onset,duration,stage CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "onset": np.arange(len(epochs)) * epoch_seconds,
            "duration": np.full(len(epochs), epoch_seconds),
            "stage": [Stage(int(v)).name for v in epochs],
        }
    )
    frame.to_csv(path, index=False)
    return path


# --------------------------------
# Recording assembly
# --------------------------------


def load_recording(
    edf_path,
    hypnogram_path=None,
    channels=None,
    subject_id=None,
    dataset_id="",
    recording_id=None,
):
    """Read an EDF recording plus its hypnogram into a Recording"""
    edf_path = Path(edf_path)
    contents = read_edf_file(edf_path)
    header = contents.header

    wanted = None
    if channels:
        wanted = {str(c).strip().lower(): c for c in channels}
    selected = []
    for sig, dig in zip(contents.signals, contents.digital):
        label = sig.label.strip()
        if label == ANNOTATION_LABEL:
            continue
        if wanted is not None and label.lower() not in wanted:
            continue
        physical, _ = to_physical(dig, sig)
        rate = sig.samples_per_record / header.record_duration
        selected.append(Channel(samples=physical, rate=rate, label=label))
    if wanted is not None:
        found = {ch.label.lower() for ch in selected}
        missing = [wanted[key] for key in wanted if key not in found]
        if missing:
            logger.warning(f"{edf_path.name}: requested channels not present: {missing}")
    if not selected:
        raise DataError(f"{edf_path}: no usable signals (channel list {channels})")

    if hypnogram_path is not None:
        hypnogram = parse_hypnogram(Path(hypnogram_path))
    elif any(sig.label.strip() == ANNOTATION_LABEL for sig in contents.signals):
        hypnogram = parse_hypnogram(annotation_bytes(contents.signals, contents.digital))
    else:
        raise HypnogramError(f"{edf_path}: no hypnogram file and no EDF+ annotation signal")

    total_duration = header.n_records * header.record_duration
    recording = Recording(
        subject_id=str(subject_id if subject_id is not None else edf_path.stem),
        dataset_id=str(dataset_id),
        channels=selected,
        hypnogram=hypnogram.to_epochs(total_duration),
        recording_id=recording_id or edf_path.stem,
    )
    logger.info(
        f"Loaded {edf_path.name}: {len(selected)} channels, {total_duration:.0f}s, "
        f"{len(recording.hypnogram)} epochs"
    )
    return recording.validate()
