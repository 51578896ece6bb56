"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
meta_train.py file for the training procedures
--------------------------------------
S2MAML (first-order meta-learning with a PhaseSwap inner loop), the MAML
baseline with a supervised inner loop, and plain supervised training.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import psutil
from tqdm import tqdm

import diff_core as dc
import sleepnet
from errors import ConfigError, TaskSamplingError
from logging_config import get_logger
from meta_tasks import SubjectAudit, Task, generate_ssl_tasks, sample_task_batch, split_meta

logger = get_logger(__name__)

MODES = ("S2MAML", "MAML", "SL")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class MetaConfig:
    inner_lr: float = 5e-5
    outer_lr: float = 1e-4
    n_inner: int = 1
    n_tasks: int = 32
    task_size: int = 8
    training_epochs: int = 20
    max_updates: Optional[int] = None
    mode: str = "S2MAML"
    seed: int = 0
    smoothing: float = 0.1
    inner_optimizer: str = "sgd"
    outer_optimizer: str = "adam"
    sl_batch_size: int = 64

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"meta.mode must be one of {MODES}, got '{self.mode}'")
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ConfigError(f"meta learning rates must be > 0 (inner {self.inner_lr}, outer {self.outer_lr})")
        if self.n_inner < 0:
            raise ConfigError(f"meta.n_inner must be >= 0, got {self.n_inner}")
        if self.n_tasks < 1 or self.task_size < 1 or self.sl_batch_size < 1:
            raise ConfigError("meta.n_tasks, meta.task_size and meta.sl_batch_size must be >= 1")
        if self.training_epochs < 1 and not self.max_updates:
            raise ConfigError("meta.training_epochs must be >= 1 unless meta.max_updates is set")
        if self.max_updates is not None and self.max_updates < 1:
            raise ConfigError(f"meta.max_updates must be >= 1, got {self.max_updates}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError(f"meta.smoothing must be in [0, 1), got {self.smoothing}")
        for key in ("inner_optimizer", "outer_optimizer"):
            if getattr(self, key) not in OPTIMIZERS:
                raise ConfigError(f"meta.{key} must be one of {OPTIMIZERS}")
        return self


@dataclass
class TrainHistory:
    mode: str
    seed: int
    records: list = field(default_factory=list)
    bundle: object = None

    def append(self, iteration, inner_loss, outer_loss, wall_time):
        self.records.append(
            {
                "iteration": iteration,
                "inner_loss": inner_loss,
                "outer_loss": outer_loss,
                "wall_time": wall_time,
                "mode": self.mode,
                "seed": self.seed,
            }
        )

    def __len__(self):
        return len(self.records)

    @property
    def inner_losses(self):
        return np.array([r["inner_loss"] for r in self.records], dtype=np.float64)

    @property
    def outer_losses(self):
        return np.array([r["outer_loss"] for r in self.records], dtype=np.float64)

    def to_frame(self):
        return pd.DataFrame(self.records, columns=["iteration", "inner_loss", "outer_loss", "wall_time", "mode", "seed"])

    def write_jsonl(self, path):
        self.to_frame().to_json(path, orient="records", lines=True)
        return path


# --------------------------------
# Objectives
# --------------------------------


@dataclass
class SleepNetObjective:
    """Label-smoothed task-averaged cross-entropy of the sleep network"""

    config: sleepnet.EncoderConfig
    smoothing: float = 0.1
    train: bool = True

    def loss_and_grad(self, tasks, encoder, head, rng):
        return sleepnet.loss_and_grad(tasks, encoder, head, self.smoothing, self.config, rng, self.train)


def _apply(params, lr, optimizer, state=None):
    if optimizer == "adam":
        dc.adam_step(params, state, lr)
    else:
        dc.sgd_step(params, lr)


# --------------------------------
# Update steps
# --------------------------------


def inner_loop(encoder, head, tasks, inner_lr, n_inner, rng, objective, task_transform=generate_ssl_tasks, optimizer="sgd", states=None):
    """Adapt a copy of the encoder on the meta-train tasks.

    The head is updated in place; task_transform (PhaseSwap generation by
    default) is re-applied at every inner step. Returns (adapted encoder,
    per-step losses).
    """
    encoder_in = dc.copy_params(encoder)
    states = states if states is not None else {}
    if optimizer == "adam":
        states["inner_encoder"] = dc.AdamState.for_params(encoder_in)
        states.setdefault("inner_head", dc.AdamState.for_params(head))
    losses = []
    for _ in range(n_inner):
        batch = task_transform(tasks, rng) if task_transform is not None else tasks
        losses.append(objective.loss_and_grad(batch, encoder_in, head, rng))
        _apply(encoder_in, inner_lr, optimizer, states.get("inner_encoder"))
        _apply(head, inner_lr, optimizer, states.get("inner_head"))
    return encoder_in, losses


def outer_step(encoder, sl_head, encoder_in, val_tasks, outer_lr, states, objective, rng, optimizer="adam"):
    """First-order meta update: gradient at the adapted encoder, applied to the source"""
    value = objective.loss_and_grad(val_tasks, encoder_in, sl_head, rng)
    for name in encoder.names():
        encoder.grads[name][...] = encoder_in.grads[name]
    _apply(encoder, outer_lr, optimizer, states.get("encoder"))
    _apply(sl_head, outer_lr, optimizer, states.get("sl_head"))
    return value


def sl_step(encoder, sl_head, tasks, lr, states, objective, rng, optimizer="adam"):
    """One supervised update of encoder and stage head"""
    value = objective.loss_and_grad(tasks, encoder, sl_head, rng)
    _apply(encoder, lr, optimizer, states.get("encoder"))
    _apply(sl_head, lr, optimizer, states.get("sl_head"))
    return value


def outer_states_for(bundle, optimizer):
    if optimizer != "adam":
        return {}
    return {"encoder": dc.AdamState.for_params(bundle.encoder), "sl_head": dc.AdamState.for_params(bundle.sl_head)}


# --------------------------------
# Training driver
# --------------------------------


def iterations_for(datasets, cfg):
    """Outer iterations implied by the update budget or by the number of data passes"""
    if cfg.max_updates:
        return int(cfg.max_updates)
    total = sum(len(ds) for ds in datasets)
    if cfg.mode == "SL":
        per_iteration = cfg.sl_batch_size
    else:
        per_iteration = len(datasets) * cfg.n_tasks * cfg.task_size
    return max(1, math.ceil(cfg.training_epochs * total / per_iteration))


class _PooledSampler:
    """Uniform minibatches over the samples of every dataset"""

    def __init__(self, datasets):
        self.datasets = datasets
        self.owner = np.concatenate([np.full(len(ds), k) for k, ds in enumerate(datasets)])
        self.local = np.concatenate([np.arange(len(ds)) for ds in datasets])

    def draw(self, batch_size, rng, audit):
        picks = rng.choice(len(self.owner), size=batch_size, replace=len(self.owner) < batch_size)
        for k, ds in enumerate(self.datasets):
            mine = self.local[picks[self.owner[picks] == k]]
            audit.check_keys(ds.dataset_id, set(ds.subject_ids[mine].tolist()))
        x = np.stack([self.datasets[self.owner[p]].x[self.local[p]] for p in picks])
        y = np.array([self.datasets[self.owner[p]].y[self.local[p]] for p in picks], dtype=np.int64)
        return Task(subject_id="*", dataset_id="*", x=x, y=y, indices=picks)


def train(
    datasets,
    cfg,
    encoder_config=None,
    objective=None,
    bundle=None,
    forbidden=None,
    checkpoints=None,
    checkpoint_every=0,
    log_every=10,
    progress=True,
):
    """Run one of the three training modes and return (ModelBundle, TrainHistory).

    forbidden is a set of (dataset_id, subject_id) keys that must never reach a
    training batch; checkpoints is an optional CheckpointManager.
    """
    cfg.validate()
    datasets = list(datasets)
    if not datasets or any(len(ds) == 0 for ds in datasets):
        raise TaskSamplingError("training needs at least one dataset and every dataset needs samples")
    rng = np.random.default_rng(cfg.seed)
    bundle = bundle or sleepnet.init_model(encoder_config, cfg.seed)
    objective = objective or SleepNetObjective(bundle.config, cfg.smoothing)
    audit = SubjectAudit(set(forbidden or ()))
    outer_states = outer_states_for(bundle, cfg.outer_optimizer)
    inner_states = {}
    n_iterations = iterations_for(datasets, cfg)
    history = TrainHistory(mode=cfg.mode, seed=cfg.seed)
    sampler = _PooledSampler(datasets) if cfg.mode == "SL" else None
    process = psutil.Process()

    logger.info(
        f"Training {cfg.mode} on {len(datasets)} datasets "
        f"({sum(len(ds) for ds in datasets)} samples) for {n_iterations} iterations, seed {cfg.seed}"
    )
    started = time.perf_counter()
    for iteration in tqdm(range(1, n_iterations + 1), desc=cfg.mode, disable=not progress, leave=False):
        if cfg.mode == "SL":
            batch = sampler.draw(cfg.sl_batch_size, rng, audit)
            inner_loss = float("nan")
            outer_loss = sl_step(bundle.encoder, bundle.sl_head, [batch], cfg.outer_lr, outer_states, objective, rng, cfg.outer_optimizer)
        else:
            task_batch = sample_task_batch(datasets, cfg.n_tasks, rng, cfg.task_size)
            audit.check(task_batch.tasks)
            split = split_meta(task_batch, rng)
            if cfg.mode == "S2MAML":
                head, transform = bundle.ssl_head, generate_ssl_tasks
            else:
                head, transform = bundle.sl_head, None
            encoder_in, inner_losses = inner_loop(
                bundle.encoder, head, split.train, cfg.inner_lr, cfg.n_inner, rng, objective,
                task_transform=transform, optimizer=cfg.inner_optimizer, states=inner_states,
            )
            inner_loss = float(np.mean(inner_losses)) if inner_losses else float("nan")
            outer_loss = outer_step(
                bundle.encoder, bundle.sl_head, encoder_in, split.val, cfg.outer_lr, outer_states, objective, rng,
                cfg.outer_optimizer,
            )
        history.append(iteration, inner_loss, outer_loss, time.perf_counter() - started)

        if not math.isfinite(outer_loss):
            logger.warning(f"Iteration {iteration}: non-finite outer loss {outer_loss}")
        if log_every and iteration % log_every == 0:
            rss_mb = process.memory_info().rss / (1024 * 1024)
            logger.info(
                f"[{cfg.mode}] iter {iteration}/{n_iterations} L_in={inner_loss:.4f} L_out={outer_loss:.4f} rss={rss_mb:.0f}MB"
            )
        if checkpoints is not None and checkpoint_every and iteration % checkpoint_every == 0:
            checkpoints.save(bundle, iteration, outer_states, {"seed": cfg.seed, "mode": cfg.mode})

    history.bundle = bundle
    logger.info(f"Finished {cfg.mode}: {n_iterations} iterations in {time.perf_counter() - started:.1f}s, audited {audit.checked} subject draws")
    return bundle, history
