"""
Shared fixtures: seeded generators, a tiny encoder and tiny sample sets.
"""

import numpy as np
import pytest

from signal_prep import PrepConfig, SampleSet
from sleepnet import tiny_config


def make_sample_set(dataset_id, n_subjects, per_subject, rng, channels=2, length=96, n_recordings=1, n_classes=5):
    """Random SampleSet of n_subjects x per_subject samples"""
    n = n_subjects * per_subject
    subjects = np.repeat([f"{dataset_id}{s:02d}" for s in range(n_subjects)], per_subject)
    recordings = np.array([f"{s}R{i % n_recordings}" for i, s in enumerate(subjects)], dtype=object)
    cfg = PrepConfig(target_rate=1.0, n_channels=channels, epoch_seconds=length / 3, window_epochs=3)
    return SampleSet(
        x=rng.normal(size=(n, channels, length)).astype(np.float32),
        y=rng.integers(0, n_classes, size=n).astype(np.int64),
        subject_ids=subjects.astype(object),
        recording_ids=recordings,
        dataset_id=dataset_id,
        config=cfg,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def sample_set_factory():
    return make_sample_set


@pytest.fixture
def tiny_datasets():
    rng = np.random.default_rng(7)
    return [make_sample_set(d, 4, 6, rng, n_recordings=2) for d in ("A", "B")]
