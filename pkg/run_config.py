"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
run_config.py file for run configuration
--------------------------------------
A single nested YAML file mapped onto dataclass sections. Every field has a
default; unknown keys are rejected with their dotted name.
"""

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from config import CACHE_DIR, DEFAULT_SEED, OUTPUT_DIR
from errors import ConfigError
from eval_harness import EvalConfig
from logging_config import get_logger
from meta_train import MetaConfig
from signal_prep import PrepConfig
from sleepnet import EncoderConfig
from synth import SynthSpec

logger = get_logger(__name__)


@dataclass
class DataConfig:
    """Where recordings and sample caches live"""

    index: Optional[str] = None
    root: Optional[str] = None
    cache_dir: str = CACHE_DIR
    datasets: List[str] = field(default_factory=list)
    channels: Dict[str, List[str]] = field(default_factory=dict)
    checkpoint: Optional[str] = None


@dataclass
class OutputConfig:
    dir: str = OUTPUT_DIR
    log_every: int = 10
    checkpoint_every: int = 0
    charts: bool = True
    progress: bool = True


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    data: DataConfig = field(default_factory=DataConfig)
    prep: PrepConfig = field(default_factory=PrepConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        self.model.validate()
        self.meta.validate()
        self.eval.validate()
        self.synth.validate(self.prep.target_rate)
        if self.model.in_channels != self.prep.n_channels:
            raise ConfigError(
                f"model.in_channels ({self.model.in_channels}) must equal prep.n_channels ({self.prep.n_channels})"
            )
        if self.model.input_length != self.prep.window_points:
            raise ConfigError(
                f"model.input_length ({self.model.input_length}) must equal the prep window "
                f"({self.prep.window_points} points)"
            )
        return self

    def meta_for_run(self):
        """MetaConfig carrying the run seed"""
        return dataclasses.replace(self.meta, seed=self.seed)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))


# --------------------------------
# Building sections from mappings
# --------------------------------


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _wants_float(hint):
    return hint is float or float in getattr(hint, "__args__", ())


def _is_tuple(hint):
    return hint is tuple or getattr(hint, "__origin__", None) is tuple


def _coerce(value, hint, key):
    # YAML 1.1 reads 5e-5 as a string
    try:
        if _wants_float(hint):
            if isinstance(value, str):
                value = float(value)
            elif isinstance(value, list):
                value = [float(v) if isinstance(v, str) else v for v in value]
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got '{value}'")
    if _is_tuple(hint) and isinstance(value, list):
        value = tuple(value)
    return value


def build_section(cls, values, prefix, base=None):
    """Overlay a mapping on base (default cls()), recursing into nested dataclass fields"""
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {type(values).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = [k for k in values if k not in known]
    if unknown:
        dotted = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(f"unknown configuration key '{dotted}'")

    base = base if base is not None else cls()
    kwargs = {}
    for name, value in values.items():
        key = f"{prefix}.{name}" if prefix else name
        current = getattr(base, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = build_section(type(current), value, key, base=current)
        else:
            kwargs[name] = _coerce(value, hints.get(name), key)
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix or 'config'}: {e}")


def _set_dotted(tree, dotted, value):
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"--set {dotted}: '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def parse_override(text):
    """'section.key=value' with the value parsed as a YAML scalar or list"""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects section.key=value, got '{text}'")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"--set {key}: cannot parse value '{raw}': {e}")
    return key.strip(), value


def load_run_config(path=None, overrides=(), seed=None, out=None):
    """RunConfig from an optional YAML file, --set overrides and the --seed/--out flags"""
    tree = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}")
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        logger.debug(f"Loaded run config {path}")
    for text in overrides or ():
        key, value = parse_override(text)
        _set_dotted(tree, key, value)
    if seed is not None:
        tree["seed"] = int(seed)
    if out is not None:
        tree.setdefault("output", {})["dir"] = str(out)
    return build_section(RunConfig, tree, "").validate()


def save_run_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
    return path
