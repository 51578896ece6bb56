"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
meta_tasks.py file for task sampling
--------------------------------------
Per-subject task sampling, the meta-train/meta-validation split and the
PhaseSwap self-supervised task generator.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from errors import ConfigError, InvariantError, ShapeError, TaskSamplingError
from logging_config import get_logger
from signal_prep import SpectralPair, irfft, rfft

logger = get_logger(__name__)

TASK_SIZE = 8


@dataclass
class Task:
    """Samples of a single subject of a single dataset"""

    subject_id: str
    dataset_id: str
    x: np.ndarray
    y: np.ndarray
    indices: np.ndarray = None

    def __len__(self):
        return len(self.y)

    @property
    def key(self):
        return (self.dataset_id, self.subject_id)

    @property
    def pairs(self):
        return list(zip(self.x, self.y.tolist()))


@dataclass
class TaskBatch:
    tasks: List[Task]
    n_datasets: int
    n_tasks: int

    def __len__(self):
        return len(self.tasks)


@dataclass
class MetaSplit:
    train: List[Task]
    val: List[Task]


@dataclass
class SslTask:
    """Originals (label 0) interleaved with their phase-swapped hybrids (label 1)"""

    x: np.ndarray
    y: np.ndarray
    subject_id: str = ""
    dataset_id: str = ""

    def __len__(self):
        return len(self.y)

    @property
    def pairs(self):
        return list(zip(self.x, self.y.tolist()))


# --------------------------------
# Task sampling
# --------------------------------


def sample_task(dataset, rng, task_size=TASK_SIZE):
    """Pick a subject uniformly and draw task_size of its samples"""
    index = dataset.by_subject() if len(dataset) else {}
    if not index:
        raise TaskSamplingError(f"dataset '{dataset.dataset_id}' has no samples to draw tasks from")
    subjects = list(index)
    subject = subjects[int(rng.integers(len(subjects)))]
    pool = index[subject]
    chosen = rng.choice(pool, size=task_size, replace=len(pool) < task_size)
    return Task(
        subject_id=subject,
        dataset_id=dataset.dataset_id,
        x=dataset.x[chosen],
        y=dataset.y[chosen],
        indices=chosen,
    )


def sample_task_batch(datasets, n_tasks, rng, task_size=TASK_SIZE):
    """n_tasks tasks from every dataset, dataset-major order"""
    if not datasets:
        raise TaskSamplingError("no datasets to sample tasks from")
    tasks = [sample_task(ds, rng, task_size) for ds in datasets for _ in range(n_tasks)]
    return TaskBatch(tasks=tasks, n_datasets=len(datasets), n_tasks=n_tasks)


def split_meta(batch, rng):
    """Uniform random partition of the batch into meta-train and meta-validation halves"""
    tasks = batch.tasks if isinstance(batch, TaskBatch) else list(batch)
    if len(tasks) % 2:
        raise ConfigError(f"cannot split {len(tasks)} tasks into two halves; K * n_tasks must be even")
    order = rng.permutation(len(tasks))
    half = len(tasks) // 2
    return MetaSplit(train=[tasks[i] for i in order[:half]], val=[tasks[i] for i in order[half:]])


# --------------------------------
# PhaseSwap
# --------------------------------


def phase_swap(x, x_prime):
    """Per channel: magnitude spectrum of x with the phase spectrum of x_prime"""
    x = np.asarray(x)
    x_prime = np.asarray(x_prime)
    if x.shape != x_prime.shape:
        raise ShapeError("phase_swap", "signals differ in shape", dims=(x.shape, x_prime.shape))
    n = x.shape[-1]
    hybrid = SpectralPair(magnitude=rfft(x).magnitude, phase=rfft(x_prime).phase)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    return irfft(hybrid, n).astype(dtype)


def generate_ssl_task(task, rng):
    """Interleave each sample (label 0) with a hybrid using a partner from the same task (label 1)"""
    n = len(task)
    if n == 0:
        return SslTask(x=np.asarray(task.x)[:0], y=np.zeros(0, dtype=np.int64), subject_id=task.subject_id, dataset_id=task.dataset_id)
    if n == 1:
        partners = np.zeros(1, dtype=np.int64)
    else:
        # Uniform over the other positions
        partners = rng.integers(0, n - 1, size=n)
        partners = partners + (partners >= np.arange(n))
    swapped = phase_swap(task.x, task.x[partners])

    x = np.empty((2 * n,) + task.x.shape[1:], dtype=task.x.dtype)
    x[0::2] = task.x
    x[1::2] = swapped
    y = np.tile(np.array([0, 1], dtype=np.int64), n)
    return SslTask(x=x, y=y, subject_id=task.subject_id, dataset_id=task.dataset_id)


def generate_ssl_tasks(tasks, rng):
    return [generate_ssl_task(t, rng) for t in tasks]


# --------------------------------
# Audit helpers
# --------------------------------


@dataclass
class SubjectAudit:
    """Raises on any task drawn from a forbidden (dataset, subject) pair"""

    forbidden: set = field(default_factory=set)
    checked: int = 0

    def check(self, tasks):
        for task in tasks:
            self.check_keys(task.dataset_id, [task.subject_id])

    def check_keys(self, dataset_id, subject_ids):
        for subject_id in subject_ids:
            self.checked += 1
            if (dataset_id, subject_id) in self.forbidden:
                raise InvariantError(f"held-out subject {subject_id} of dataset {dataset_id} reached training")
