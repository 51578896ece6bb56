"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
sleepnet.py file for the scoring network
--------------------------------------
Dual-branch 1-D convolutional encoder (small and large first-layer filters),
the 5-way sleep stage head and the 2-way PhaseSwap head, the task-averaged
label-smoothed cross-entropy, and the gradient verification suite.
"""

from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

import diff_core as dc
from errors import ConfigError, InvariantError, ShapeError
from logging_config import get_logger

logger = get_logger(__name__)

N_STAGES = 5
N_SSL_CLASSES = 2


@dataclass
class BranchConfig:
    kernel: int
    stride: int
    filters: Tuple[int, ...] = (64, 128)
    block_kernel: int = 8
    pool: int = 8

    def lengths(self, input_length):
        """Temporal length after every layer, used to validate the config"""
        lengths = []
        length = (input_length - self.kernel) // self.stride + 1
        lengths.append(length)
        for _ in self.filters[1:]:
            length = length // self.pool if length >= self.pool else 0
            lengths.append(length)
        return lengths


@dataclass
class EncoderConfig:
    in_channels: int = 9
    input_length: int = 9216
    small: BranchConfig = field(default_factory=lambda: BranchConfig(kernel=51, stride=6, block_kernel=8, pool=8))
    large: BranchConfig = field(default_factory=lambda: BranchConfig(kernel=410, stride=51, block_kernel=6, pool=4))
    dropout: float = 0.5

    @property
    def feature_dim(self):
        return self.small.filters[-1] + self.large.filters[-1]

    def branches(self):
        return (("small", self.small), ("large", self.large))

    def validate(self):
        if self.in_channels < 1 or self.input_length < 1:
            raise ConfigError(f"model: in_channels and input_length must be positive ({self.in_channels}, {self.input_length})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")
        for name, branch in self.branches():
            if not branch.filters or min(branch.filters) < 1:
                raise ConfigError(f"model.{name}.filters must be non-empty and positive")
            if min(branch.kernel, branch.stride, branch.block_kernel, branch.pool) < 1:
                raise ConfigError(f"model.{name}: kernel, stride, block_kernel and pool must be >= 1")
            lengths = branch.lengths(self.input_length)
            if min(lengths) < 1:
                raise ConfigError(
                    f"model.{name}: input of length {self.input_length} collapses to nothing "
                    f"(layer lengths {lengths})"
                )
        return self

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        for name in ("small", "large"):
            if name in values and isinstance(values[name], dict):
                branch = dict(values[name])
                if "filters" in branch:
                    branch["filters"] = tuple(branch["filters"])
                values[name] = BranchConfig(**branch)
        return cls(**values)


@dataclass
class ModelBundle:
    encoder: dc.ParamSet
    sl_head: dc.ParamSet
    ssl_head: dc.ParamSet
    config: EncoderConfig

    def param_sets(self):
        return [self.encoder, self.sl_head, self.ssl_head]

    def copy(self):
        return ModelBundle(
            dc.copy_params(self.encoder),
            dc.copy_params(self.sl_head),
            dc.copy_params(self.ssl_head),
            self.config,
        )


# --------------------------------
# Initialization
# --------------------------------


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_head(group, feature_dim, n_classes, rng, dtype=None):
    dtype = dtype or dc.current_dtype()
    return dc.ParamSet(
        group,
        {
            "w": _he_uniform(rng, (feature_dim, n_classes), feature_dim, dtype),
            "b": np.zeros(n_classes, dtype=dtype),
        },
    )


def init_model(config=None, seed=0):
    """He-uniform weights and zero biases, fixed by the seed"""
    config = (config or EncoderConfig()).validate()
    rng = np.random.default_rng(seed)
    dtype = dc.current_dtype()
    encoder = dc.ParamSet("encoder")
    for name, branch in config.branches():
        in_ch = config.in_channels
        for i, filters in enumerate(branch.filters):
            kernel = branch.kernel if i == 0 else branch.block_kernel
            encoder.add(f"{name}.conv{i}.w", _he_uniform(rng, (filters, in_ch, kernel), in_ch * kernel, dtype))
            encoder.add(f"{name}.conv{i}.b", np.zeros(filters, dtype=dtype))
            in_ch = filters
    sl_head = init_head("sl_head", config.feature_dim, N_STAGES, rng, dtype)
    ssl_head = init_head("ssl_head", config.feature_dim, N_SSL_CLASSES, rng, dtype)
    logger.debug(
        f"Initialized model: encoder {encoder.n_parameters} params, feature_dim {config.feature_dim}"
    )
    return ModelBundle(encoder, sl_head, ssl_head, config)


# --------------------------------
# Forward pass
# --------------------------------


def _branch(x, encoder, name, branch):
    out = x
    for i in range(len(branch.filters)):
        w = encoder.var(f"{name}.conv{i}.w")
        b = encoder.var(f"{name}.conv{i}.b")
        if i == 0:
            out = dc.conv1d(out, w, b, stride=branch.stride, padding="valid")
        else:
            out = dc.maxpool1d(out, branch.pool)
            out = dc.conv1d(out, w, b, stride=1, padding="same")
        out = dc.relu(out)
    return dc.global_maxpool(out)


def encode(x, encoder, config):
    """Feature vector h = concat(small branch, large branch) for a batch"""
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (config.in_channels, config.input_length):
        raise ShapeError(
            "encode", "input must be (batch, channels, length)", dims={"x": x.shape, "expected": (config.in_channels, config.input_length)}
        )
    xt = dc.Tensor(x)
    h = dc.concat([_branch(xt, encoder, name, branch) for name, branch in config.branches()], axis=1)
    return dc.reshape(h, (config.feature_dim,)) if single else h


def head_logits(h, head, dropout=0.0, rng=None, train=False):
    w = head.var("w")
    if h.shape[-1] != w.shape[0]:
        raise ShapeError("classify", "head input dimension differs from feature dimension", dims=(h.shape, w.shape))
    if train and dropout > 0:
        h = dc.dropout(h, dropout, rng, train=True)
    return dc.dense(h, w, head.var("b"))


def classify(h, head, dropout=0.0, rng=None, train=False):
    """Class probabilities from features through a head"""
    h = h if isinstance(h, dc.Tensor) else dc.Tensor(h)
    return dc.softmax(head_logits(h, head, dropout, rng, train), axis=-1)


# --------------------------------
# Loss
# --------------------------------


def smoothed_targets(labels, n_classes, alpha):
    labels = np.asarray(labels, dtype=np.int64)
    targets = np.full((len(labels), n_classes), alpha / n_classes)
    targets[np.arange(len(labels)), labels] += 1.0 - alpha
    return targets


def task_loss(task, encoder, head, alpha, config, rng=None, train=False):
    """Mean label-smoothed cross-entropy over the pairs of one task"""
    if len(task) == 0:
        raise InvariantError("loss: empty task")
    n_classes = head["w"].shape[1]
    h = encode(task.x, encoder, config)
    probs = classify(h, head, config.dropout, rng, train)
    log_probs = dc.clamp_log(probs)
    targets = dc.Tensor(smoothed_targets(task.y, n_classes, alpha))
    per_pair = dc.mul(dc.reduce_sum(dc.mul(targets, log_probs), axis=1), -1.0)
    return dc.mean(per_pair)


def loss(tasks, encoder, head, alpha=0.1, config=None, rng=None, train=False):
    """Task-averaged cross-entropy: mean over pairs within a task, then over tasks"""
    if not tasks:
        raise InvariantError("loss: empty task set")
    config = config or EncoderConfig()
    total = None
    for task in tasks:
        value = task_loss(task, encoder, head, alpha, config, rng, train)
        total = value if total is None else dc.add(total, value)
    return dc.mul(total, 1.0 / len(tasks))


def loss_and_grad(tasks, encoder, head, alpha=0.1, config=None, rng=None, train=True):
    """Same value as loss(), with gradients accumulated task by task into the ParamSets"""
    if not tasks:
        raise InvariantError("loss: empty task set")
    config = config or EncoderConfig()
    encoder.zero_grad()
    head.zero_grad()
    scale = 1.0 / len(tasks)
    total = 0.0
    for task in tasks:
        tape = dc.Tape()
        with tape:
            value = task_loss(task, encoder, head, alpha, config, rng, train)
            scaled = dc.mul(value, scale)
        total += dc.backward(tape, scaled, accumulate=True)
    return total


# --------------------------------
# Inference
# --------------------------------


def predict_proba(bundle, x, batch_size=64):
    """5-way stage probabilities, dropout off, nothing recorded"""
    x = np.asarray(x)
    if len(x) == 0:
        return np.zeros((0, N_STAGES))
    out = []
    for start in range(0, len(x), batch_size):
        h = encode(x[start:start + batch_size], bundle.encoder, bundle.config)
        out.append(classify(h, bundle.sl_head).data)
    return np.concatenate(out)


def predict(bundle, x, batch_size=64):
    return predict_proba(bundle, x, batch_size).argmax(axis=1)


# --------------------------------
# Checkpoints
# --------------------------------


def save_bundle(directory, bundle, adam_states=None, metadata=None):
    meta = dict(metadata or {})
    meta["encoder_config"] = asdict(bundle.config)
    return dc.save_checkpoint(directory, bundle.param_sets(), adam_states, meta)


def load_bundle(directory):
    """Read a bundle back; returns (ModelBundle, Adam states, metadata)"""
    param_sets, adam_states, metadata = dc.load_checkpoint(directory)
    config = EncoderConfig.from_dict(metadata.pop("encoder_config", {}))
    missing = [g for g in dc.PARAM_GROUPS if g not in param_sets]
    if missing:
        raise InvariantError(f"checkpoint {directory} lacks parameter groups {missing}")
    bundle = ModelBundle(param_sets["encoder"], param_sets["sl_head"], param_sets["ssl_head"], config)
    return bundle, adam_states, metadata


# --------------------------------
# Gradient verification suite
# --------------------------------


@dataclass
class GradCheckRecord:
    check: str
    seed: int
    max_rel_error: float
    n_checked: int
    n_skipped: int


@dataclass
class _Batch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def tiny_config():
    """Small encoder used by fast tests and the default gradient suite"""
    return EncoderConfig(
        in_channels=2,
        input_length=96,
        small=BranchConfig(kernel=5, stride=2, filters=(3, 4), block_kernel=3, pool=2),
        large=BranchConfig(kernel=16, stride=8, filters=(3, 4), block_kernel=2, pool=2),
        dropout=0.5,
    )


def _primitive_checks(rng):
    """(name, ParamSet, f) triples covering every primitive on random shapes"""
    n = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    length = int(rng.integers(k + 4, k + 12))
    stride = int(rng.integers(1, 3))
    d_in, d_out = int(rng.integers(2, 6)), int(rng.integers(2, 6))

    def ps(**arrays):
        return dc.ParamSet("encoder", {key: value for key, value in arrays.items()})

    checks = []
    conv = ps(x=rng.normal(size=(n, c_in, length)), w=rng.normal(size=(c_out, c_in, k)), b=rng.normal(size=c_out))
    weights = rng.normal(size=(c_out, length + 4))
    for padding in ("valid", "same", 1):
        def f(p=conv, padding=padding):
            out = dc.conv1d(p.var("x"), p.var("w"), p.var("b"), stride=stride, padding=padding)
            return dc.reduce_sum(dc.mul(out, dc.Tensor(weights[:, : out.shape[-1]])))
        checks.append((f"conv1d[{padding}]", conv, f))

    pool = ps(x=rng.normal(size=(n, c_in, length)))
    window = int(rng.integers(2, 4))
    pool_weights = rng.normal(size=length)
    def f_pool(p=pool):
        out = dc.maxpool1d(p.var("x"), window, stride=stride)
        return dc.reduce_sum(dc.mul(out, dc.Tensor(pool_weights[: out.shape[-1]])))
    checks.append(("maxpool1d", pool, f_pool))

    lin = ps(x=rng.normal(size=(n, d_in)), w=rng.normal(size=(d_in, d_out)), b=rng.normal(size=d_out))
    lin_weights = rng.normal(size=(n, d_out))
    def f_dense(p=lin):
        out = dc.relu(dc.dense(p.var("x"), p.var("w"), p.var("b")))
        return dc.reduce_sum(dc.mul(out, dc.Tensor(lin_weights)))
    checks.append(("dense+relu", lin, f_dense))

    soft = ps(x=rng.normal(size=(n, d_out)))
    labels = rng.integers(0, d_out, size=n)
    targets = smoothed_targets(labels, d_out, 0.1)
    def f_soft(p=soft):
        log_probs = dc.clamp_log(dc.softmax(p.var("x"), axis=-1))
        return dc.mean(dc.reduce_sum(dc.mul(dc.Tensor(targets), log_probs), axis=1))
    checks.append(("softmax+clamp_log", soft, f_soft))

    drop = ps(x=rng.normal(size=(n, d_in)))
    drop_seed = int(rng.integers(1 << 31))
    def f_drop(p=drop):
        out = dc.dropout(p.var("x"), 0.5, np.random.default_rng(drop_seed), train=True)
        return dc.reduce_sum(dc.mul(out, out))
    checks.append(("dropout", drop, f_drop))

    shapes = ps(a=rng.normal(size=(n, d_in)), b=rng.normal(size=(n, d_out)))
    def f_shapes(p=shapes):
        joined = dc.concat([p.var("a"), p.var("b")], axis=1)
        flat = dc.reshape(joined, (n * (d_in + d_out),))
        return dc.add(dc.mean(dc.mul(flat, flat)), dc.reduce_sum(flat))
    checks.append(("concat+reshape+sum+mean", shapes, f_shapes))
    return checks


def gradient_suite(seeds=range(20), config=None, loss_seeds=None, coords_per_tensor=8):
    """Finite-difference check of every primitive and of the full loss.

    Runs in 64-bit mode. The full-loss check uses a 2-sample batch per head;
    coords_per_tensor bounds the number of coordinates checked per tensor.
    """
    config = config or tiny_config()
    loss_seeds = list(seeds)[:3] if loss_seeds is None else list(loss_seeds)
    records = []
    with dc.precision(np.float64):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for name, params, f in _primitive_checks(rng):
                result = dc.grad_check(f, params)
                records.append(GradCheckRecord(name, seed, result.max_rel_error, result.n_checked, len(result.skipped)))

        for seed in loss_seeds:
            rng = np.random.default_rng(10_000 + seed)
            bundle = init_model(config, seed)
            x = rng.normal(size=(2, config.in_channels, config.input_length))
            for head, n_classes in ((bundle.sl_head, N_STAGES), (bundle.ssl_head, N_SSL_CLASSES)):
                batch = _Batch(x, rng.integers(0, n_classes, size=2))

                def f(head=head, batch=batch):
                    return loss([batch], bundle.encoder, head, 0.1, config, train=False)

                result = dc.grad_check(f, [bundle.encoder, head], max_coords=coords_per_tensor, rng=rng)
                records.append(
                    GradCheckRecord(f"loss[{head.group}]", seed, result.max_rel_error, result.n_checked, len(result.skipped))
                )
    worst = max((r.max_rel_error for r in records), default=0.0)
    logger.info(f"Gradient suite: {len(records)} checks, max relative error {worst:.3e}")
    return records
