"""
Data-stream service
Synthetic and IDX-backed datasets, per-client task streams and slice materialization
"""
import logging
from collections import Counter
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from app.core.exceptions import ConfigurationError, ContractViolation, DataBudgetError
from app.core.seeding import Stream, rng_for
from app.models.batch import LabeledBatch
from app.models.dataset import DatasetStore, TaskSpec, TaskStream
from app.models.labels import LabelCountVector
from app.schemas.scenario import ScenarioConfig, ScenarioKind
from app.services.idx import load_idx

logger = logging.getLogger(__name__)


def lattice_means(num_classes: int, feature_dim: int, class_separation: float) -> np.ndarray:
    """
    Class centres on an integer lattice.

    The lattice base m is the smallest integer with m ** feature_dim >= num_classes;
    class c sits at its base-m digits (least significant first), scaled by class_separation.
    """
    base = 2
    while base**feature_dim < num_classes:
        base += 1
    means = np.zeros((num_classes, feature_dim))
    for class_id in range(num_classes):
        rest = class_id
        for axis in range(feature_dim):
            if not rest:
                break
            rest, means[class_id, axis] = divmod(rest, base)
    return means * class_separation


def make_synthetic(
    num_classes: int,
    feature_dim: int,
    per_class_train: int,
    per_class_test: int,
    class_separation: float,
    seed: int,
) -> DatasetStore:
    """
    Gaussian blobs with unit diagonal covariance around lattice class centres.

    Args:
        num_classes: Number of classes
        feature_dim: Feature dimension
        per_class_train: Training pool size of every class
        per_class_test: Test pool size of every class
        class_separation: Lattice spacing; 0 makes every class identical
        seed: Dataset seed

    Returns:
        DatasetStore
    """
    if min(num_classes, feature_dim, per_class_train, per_class_test) <= 0:
        raise ContractViolation("Synthetic dataset sizes must be positive")
    if class_separation < 0:
        raise ContractViolation("class_separation must be nonnegative")
    means = lattice_means(num_classes, feature_dim, class_separation)
    rng = rng_for(seed, Stream.DATASET)
    train = tuple(means[c] + rng.standard_normal((per_class_train, feature_dim)) for c in range(num_classes))
    test = tuple(means[c] + rng.standard_normal((per_class_test, feature_dim)) for c in range(num_classes))
    for pool in (*train, *test):
        pool.setflags(write=False)
    logger.debug(
        f"Synthetic store: {num_classes} classes, dim {feature_dim}, {per_class_train}/{per_class_test} rows per class"
    )
    return DatasetStore(train_pools=train, test_pools=test, feature_dim=feature_dim, num_classes=num_classes)


def store_from_idx(
    train_images: Union[str, Path],
    train_labels: Union[str, Path],
    test_images: Union[str, Path],
    test_labels: Union[str, Path],
    num_classes: int,
) -> DatasetStore:
    """Build a DatasetStore from the train and test IDX file pairs of one dataset."""
    train = load_idx(train_images, train_labels)
    test = load_idx(test_images, test_labels)
    if train.feature_dim != test.feature_dim:
        raise ContractViolation("Train and test images have different shapes")
    return DatasetStore.from_arrays(train.features, train.labels, test.features, test.labels, num_classes)


def _client_tasks(cfg: ScenarioConfig, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Distinct class sets of one client, from a client-specific class permutation."""
    order = [int(c) for c in rng.permutation(cfg.num_classes)]
    width = cfg.task_width
    if cfg.kind == ScenarioKind.OVERLAP_SWEEP:
        return [
            tuple(sorted(order[(2 * k + j) % cfg.num_classes] for j in range(width))) for k in range(cfg.task_count)
        ]
    return [tuple(sorted(order[k * width : (k + 1) * width])) for k in range(cfg.task_count)]


def _schedule(cfg: ScenarioConfig, num_tasks: int, rng: np.random.Generator) -> list[int]:
    """Task index executed in each round."""
    if cfg.kind == ScenarioKind.CLASS_INCREMENTAL:
        rounds = cfg.total_rounds or num_tasks
        if rounds > num_tasks:
            raise ConfigurationError(
                f"Class budget exhausted: {num_tasks} disjoint tasks cannot fill {rounds} rounds"
            )
        return list(range(rounds))
    if cfg.kind in (ScenarioKind.CIRCULATING, ScenarioKind.OVERLAP_SWEEP):
        return [(t - 1) % num_tasks for t in range(1, cfg.total_rounds + 1)]

    loop = [int(k) for k in rng.choice(num_tasks, size=cfg.loop_size, replace=False)]
    executed = 0
    schedule = []
    for t in range(1, cfg.total_rounds + 1):
        if executed == cfg.replace_every:
            outside = [k for k in range(num_tasks) if k not in loop]
            loop[int(rng.integers(cfg.loop_size))] = int(rng.choice(outside))
            executed = 0
        schedule.append(loop[(t - 1) % cfg.loop_size])
        executed += 1
    return schedule


def build_streams(cfg: ScenarioConfig) -> list[TaskStream]:
    """
    Per-client task streams for a scenario.

    Every class pool is split, per client, into as many nonoverlapping parts as the
    client's stream requests that class; each occurrence takes the next part.

    Raises:
        ConfigurationError: the scenario asks for more rounds than its class budget allows
    """
    streams = []
    for client_id in range(cfg.num_clients):
        rng = rng_for(cfg.seed, client_id, Stream.SCENARIO)
        tasks = _client_tasks(cfg, rng)
        schedule = _schedule(cfg, len(tasks), rng)
        demand = Counter(c for k in schedule for c in tasks[k])
        used: Counter = Counter()
        specs = []
        for round_index, task_index in enumerate(schedule, start=1):
            classes = tasks[task_index]
            specs.append(
                TaskSpec(
                    round=round_index,
                    class_counts=LabelCountVector({c: cfg.samples_per_class for c in classes}),
                    part_index={c: used[c] for c in classes},
                    num_parts={c: demand[c] for c in classes},
                )
            )
            used.update(classes)
        streams.append(TaskStream(client_id=client_id, tasks=specs))
    logger.info(f"Built {len(streams)} {cfg.kind.value} streams of {len(streams[0]) if streams else 0} rounds")
    return streams


def required_pool_size(streams: Sequence[TaskStream]) -> int:
    """Smallest per-class training pool that serves every requested slice of every stream."""
    need = 0
    for stream in streams:
        for spec in stream.tasks:
            for class_id in spec.classes:
                need = max(need, spec.class_counts[class_id] * spec.num_parts[class_id])
    return need


def materialize(store: DatasetStore, spec: TaskSpec) -> tuple[LabeledBatch, LabeledBatch]:
    """
    Draw a task's training slice and its proportional test shard.

    Part k of a class with n train rows split into p parts covers rows
    [k * floor(n / p), (k + 1) * floor(n / p)); the task takes the first
    class_counts[c] of them. The test pool is split the same way and the shard
    keeps the train-to-test ratio of the pools.

    Raises:
        DataBudgetError: a slice holds fewer rows than the task requests
    """
    train_parts, test_parts = [], []
    for class_id in sorted(spec.classes):
        if class_id >= store.num_classes:
            raise ContractViolation(f"Class {class_id} is not in the dataset")
        need = spec.class_counts[class_id]
        part, parts = spec.part_index[class_id], spec.num_parts[class_id]
        train_pool, test_pool = store.train_pools[class_id], store.test_pools[class_id]

        train_slice = len(train_pool) // parts
        if need > train_slice:
            raise DataBudgetError(
                f"Class {class_id}: part {part} of {parts} holds {train_slice} rows, round {spec.round} needs {need}"
            )
        start = part * train_slice
        train_parts.append(LabeledBatch(train_pool[start : start + need], np.full(need, class_id)))

        test_slice = len(test_pool) // parts
        test_count = min(need * len(test_pool) // len(train_pool), test_slice)
        start = part * test_slice
        test_parts.append(LabeledBatch(test_pool[start : start + test_count], np.full(test_count, class_id)))
    return LabeledBatch.concat(train_parts), LabeledBatch.concat(test_parts)
