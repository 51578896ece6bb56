import numpy as np
import pytest

from errors import ConfigError, InvariantError, ShapeError, TaskSamplingError
from meta_tasks import (
    TASK_SIZE,
    SubjectAudit,
    Task,
    TaskBatch,
    generate_ssl_task,
    generate_ssl_tasks,
    phase_swap,
    sample_task,
    sample_task_batch,
    split_meta,
)
from signal_prep import SampleSet, rfft


def _rms(a):
    return float(np.sqrt(np.mean(np.square(a))))


# --------------------------------
# Sampling
# --------------------------------


def test_single_subject_with_exactly_eight_samples(sample_set_factory, rng):
    ds = sample_set_factory("A", 1, 8, rng)
    task = sample_task(ds, rng)
    assert len(task) == TASK_SIZE
    assert sorted(task.indices.tolist()) == list(range(8))
    assert task.key == ("A", "A00")


def test_tasks_are_subject_pure(sample_set_factory, rng):
    ds = sample_set_factory("B", 2, 20, rng)
    for _ in range(50):
        task = sample_task(ds, rng)
        assert set(ds.subject_ids[task.indices]) == {task.subject_id}
        assert len(set(task.indices.tolist())) == TASK_SIZE
        np.testing.assert_array_equal(task.x, ds.x[task.indices])


def test_small_subject_is_drawn_with_replacement(sample_set_factory, rng):
    ds = sample_set_factory("C", 1, 3, rng)
    task = sample_task(ds, rng)
    assert len(task) == TASK_SIZE
    assert set(task.indices.tolist()) <= {0, 1, 2}


def test_subjects_are_picked_uniformly(sample_set_factory, rng):
    # One subject with many samples must not dominate
    ds = SampleSet.concat([sample_set_factory("D", 1, 200, rng), sample_set_factory("E", 1, 8, rng)], "D")
    counts = {}
    for _ in range(400):
        subject = sample_task(ds, rng).subject_id
        counts[subject] = counts.get(subject, 0) + 1
    assert set(counts) == {"D00", "E00"}
    assert 140 < counts["E00"] < 260


def test_empty_dataset_cannot_be_sampled(rng):
    with pytest.raises(TaskSamplingError):
        sample_task(SampleSet.empty("Z"), rng)


def test_batch_draws_n_tasks_per_dataset(tiny_datasets, rng):
    batch = sample_task_batch(tiny_datasets, 3, rng)
    assert len(batch) == 6
    assert (batch.n_datasets, batch.n_tasks) == (2, 3)
    assert [t.dataset_id for t in batch.tasks] == ["A"] * 3 + ["B"] * 3


# --------------------------------
# Meta split
# --------------------------------


def _dummy_tasks(n):
    return [Task(f"s{i}", "d", np.zeros((1, 1, 4)), np.zeros(1, dtype=np.int64)) for i in range(n)]


@pytest.mark.parametrize("n", [2, 64])
def test_split_meta_halves(n, rng):
    tasks = _dummy_tasks(n)
    split = split_meta(TaskBatch(tasks, 2, n // 2), rng)
    assert len(split.train) == len(split.val) == n // 2
    train_ids = {id(t) for t in split.train}
    val_ids = {id(t) for t in split.val}
    assert not train_ids & val_ids
    assert train_ids | val_ids == {id(t) for t in tasks}


def test_split_meta_odd_batch(rng):
    with pytest.raises(ConfigError):
        split_meta(_dummy_tasks(5), rng)


# --------------------------------
# PhaseSwap
# --------------------------------


def test_phase_swap_with_itself_is_identity(rng):
    x = rng.normal(size=(9, 1024))
    assert _rms(phase_swap(x, x) - x) < 1e-6


def test_phase_swap_flat_magnitude_takes_partner_phase():
    out = phase_swap(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0, 0.0]))
    np.testing.assert_allclose(out, [0.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_phase_swap_preserves_magnitude():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(4, 200))
        channels = int(rng.integers(1, 4))
        x = rng.normal(size=(channels, n))
        x_prime = rng.normal(size=(channels, n))
        out = phase_swap(x, x_prime)
        assert np.isrealobj(out)
        assert out.shape == x.shape
        for c in range(channels):
            assert _rms(rfft(out[c]).magnitude - rfft(x[c]).magnitude) < 1e-5


def test_phase_swap_keeps_dummy_channels_zero(rng):
    x = rng.normal(size=(3, 64))
    x[1] = 0.0
    out = phase_swap(x, rng.normal(size=(3, 64)))
    np.testing.assert_array_equal(out[1], np.zeros(64))


def test_phase_swap_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        phase_swap(rng.normal(size=(2, 8)), rng.normal(size=(2, 9)))


def test_ssl_task_is_balanced_and_interleaved(sample_set_factory, rng):
    task = sample_task(sample_set_factory("A", 1, 8, rng), rng)
    ssl = generate_ssl_task(task, rng)
    assert len(ssl) == 16
    assert ssl.y.tolist() == [0, 1] * 8
    np.testing.assert_array_equal(ssl.x[0::2], task.x)
    assert ssl.x.dtype == task.x.dtype
    assert (ssl.subject_id, ssl.dataset_id) == (task.subject_id, task.dataset_id)


def test_ssl_partners_come_from_other_samples(rng):
    x = np.stack([np.full((1, 16), float(i + 1)) + np.sin(np.arange(16) * (i + 1))[None] for i in range(2)])
    task = Task("s", "d", x, np.zeros(2, dtype=np.int64))
    ssl = generate_ssl_task(task, rng)
    # With two samples each one must be paired with the other
    np.testing.assert_allclose(ssl.x[1], phase_swap(x[0], x[1]), atol=1e-5)
    np.testing.assert_allclose(ssl.x[3], phase_swap(x[1], x[0]), atol=1e-5)


def test_ssl_single_sample_task_swaps_with_itself(rng):
    x = rng.normal(size=(1, 2, 32))
    ssl = generate_ssl_task(Task("s", "d", x, np.zeros(1, dtype=np.int64)), rng)
    assert ssl.y.tolist() == [0, 1]
    assert _rms(ssl.x[1] - x[0]) < 1e-6


def test_empty_task_gives_empty_ssl_task(rng):
    ssl = generate_ssl_task(Task("s", "d", np.zeros((0, 2, 8)), np.zeros(0, dtype=np.int64)), rng)
    assert len(ssl) == 0
    assert generate_ssl_tasks([], rng) == []


# --------------------------------
# Subject audit
# --------------------------------


def test_subject_audit(rng):
    audit = SubjectAudit({("d", "s3")})
    audit.check(_dummy_tasks(3))
    assert audit.checked == 3
    with pytest.raises(InvariantError):
        audit.check(_dummy_tasks(4))
    with pytest.raises(InvariantError):
        audit.check_keys("d", ["s0", "s3"])
    audit.check_keys("other", ["s3"])
