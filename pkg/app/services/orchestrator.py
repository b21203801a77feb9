"""
Orchestrator service
Runs the federated loop for every method: materialize tasks, local rounds,
aggregation, evaluation and run records
"""
import asyncio
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigurationError, ContractViolation, ExperimentError
from app.core.seeding import Stream, derive_seed, rng_for
from app.models.batch import LabeledBatch
from app.models.dataset import DatasetStore, TaskStream
from app.models.federation import ClientState, RoundUpload
from app.models.params import ParamVector
from app.schemas.model import ModelArch
from app.schemas.record import RunRecord
from app.schemas.run import DatasetSource, MethodId, RunConfig
from app.services import metrics
from app.services.client import ClientService
from app.services.data_stream import build_streams, make_synthetic, materialize, required_pool_size, store_from_idx
from app.services.server import ServerService, fedavg_aggregate
from app.services.task_model import accuracy, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodSpec:
    """
    Server-side behaviour of a method.

    Attributes:
        personalized: Optimize per-client collaboration weights and evaluate personalized models
        keeps_cache: Merge uploaded sub-models so clients can request the parameter cache
    """

    personalized: bool
    keeps_cache: bool


METHODS: dict[MethodId, MethodSpec] = {
    MethodId.PFEDGRP: MethodSpec(personalized=True, keeps_cache=True),
    MethodId.FEDAVG: MethodSpec(personalized=False, keeps_cache=False),
    MethodId.FEDPROX: MethodSpec(personalized=False, keeps_cache=False),
    MethodId.FEDAVG_REPLAY: MethodSpec(personalized=False, keeps_cache=True),
    MethodId.PFEDGRP_ASG: MethodSpec(personalized=True, keeps_cache=True),
    MethodId.PFEDGRP_ASP: MethodSpec(personalized=True, keeps_cache=True),
    MethodId.PFEDGRP_AS1: MethodSpec(personalized=True, keeps_cache=True),
}


@dataclass(frozen=True)
class ExperimentInputs:
    """Data shared by every method run with the same seed."""

    store: DatasetStore
    streams: tuple[TaskStream, ...]
    arch: ModelArch


def prepare_inputs(cfg: RunConfig, seed: int) -> ExperimentInputs:
    """
    Task streams, dataset store and architecture for one seed.

    Synthetic pools are sized so every slice the streams request exists.
    """
    scenario = cfg.scenario.model_copy(update={"seed": derive_seed(cfg.scenario.seed, seed, Stream.SCENARIO)})
    streams = tuple(build_streams(scenario))
    data = cfg.dataset
    if data.source == DatasetSource.IDX:
        store = store_from_idx(*data.idx_paths, num_classes=cfg.scenario.num_classes)
    else:
        per_class_train = required_pool_size(streams)
        store = make_synthetic(
            num_classes=cfg.scenario.num_classes,
            feature_dim=data.feature_dim,
            per_class_train=per_class_train,
            per_class_test=max(1, math.ceil(per_class_train * data.test_ratio)),
            class_separation=data.class_separation,
            seed=seed,
        )
    return ExperimentInputs(store=store, streams=streams, arch=cfg.model.arch(store.feature_dim, store.num_classes))


def evaluate_round(
    arch: ModelArch,
    models: Sequence[ParamVector],
    tests: Sequence[LabeledBatch],
    counts: Sequence[int],
) -> tuple[list[float], float]:
    """
    Each client's accuracy on its cumulative test set, and the round's IAA.

    Raises:
        ContractViolation: model, test and count lists differ in length, or a test set is empty
    """
    if not len(models) == len(tests) == len(counts):
        raise ContractViolation("One model, test set and count per client required")
    accuracies = [accuracy(arch, model, test) for model, test in zip(models, tests)]
    return accuracies, metrics.iaa(accuracies, counts)


async def _fan_out(semaphore: asyncio.Semaphore, calls: Sequence[tuple[Callable[..., Any], tuple]]) -> list[Any]:
    """Run blocking calls in worker threads, at most `semaphore` at a time; results keep call order."""

    async def run(fn: Callable[..., Any], args: tuple) -> Any:
        async with semaphore:
            return await asyncio.to_thread(fn, *args)

    return list(await asyncio.gather(*(run(fn, args) for fn, args in calls)))


def _poisoned(upload: RoundUpload, noise_std: float, seed: int, round_index: int) -> RoundUpload:
    rng = rng_for(seed, upload.client_id, round_index, Stream.POISON)
    return upload.with_theta(upload.theta_star.replace(rng.normal(0.0, noise_std, len(upload.theta_star))))


class ExperimentService:
    """
    Federated experiment runner
    Drives every (method, seed) pair of a run document through materialize, local,
    aggregate and evaluate phases
    """

    def __init__(self, cfg: RunConfig, max_workers: Optional[int] = None):
        """
        Args:
            cfg: Validated run document
            max_workers: Concurrent client and server jobs, PFEDGRP_MAX_WORKERS by default
        """
        self.cfg = cfg
        self.max_workers = max_workers or settings.PFEDGRP_MAX_WORKERS

    def inputs_for(self, seed: int) -> ExperimentInputs:
        try:
            return prepare_inputs(self.cfg, seed)
        except ConfigurationError:
            raise
        except Exception as e:
            logger.error(f"Could not prepare inputs for seed {seed}", exc_info=True)
            raise ExperimentError(f"{type(e).__name__}: {e}", 0, "setup") from e

    def _checkpoint_path(self, record: RunRecord, round_index: int) -> Optional[Path]:
        if self.cfg.checkpoint_dir is None:
            return None
        return self.cfg.checkpoint_dir / record.run_name / f"round_{round_index:03d}.pfgc"

    async def run_method(
        self,
        method: MethodId,
        seed: int,
        inputs: Optional[ExperimentInputs] = None,
        semaphore: Optional[asyncio.Semaphore] = None,
    ) -> RunRecord:
        """
        One full federated run.

        Every round: materialize each client's task (the test shard joins its cumulative test
        set), run local rounds concurrently, aggregate, then evaluate the model each client
        received. Personalized methods evaluate personalized models, the others the global model.
        Cache-keeping methods write a checkpoint per round when checkpoint_dir is set.

        Raises:
            ExperimentError: any failure, tagged with the round and phase it happened in
        """
        cfg = self.cfg
        inputs = inputs or self.inputs_for(seed)
        semaphore = semaphore or asyncio.Semaphore(self.max_workers)
        spec = METHODS[method]
        arch, streams = inputs.arch, inputs.streams
        n_clients = len(streams)
        total_rounds = len(streams[0])

        global_model = init_params(arch, rng_for(seed, Stream.INIT))
        personalized: list[Optional[ParamVector]] = [None] * n_clients
        states = [ClientState(client_id=stream.client_id) for stream in streams]
        record = RunRecord(method=method, scenario=cfg.scenario, seed=seed)
        phase_seconds = {"materialize": 0.0, "local": 0.0, "aggregate": 0.0, "evaluate": 0.0}

        logger.info(f"Starting {method.value} seed {seed}: {n_clients} clients, {total_rounds} rounds")
        round_index, phase = 0, "setup"
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            server = ServerService(
                arch,
                cfg.weight_opt,
                cfg.replay_budget,
                force_uniform=cfg.force_uniform_weights,
                executor=executor,
            )
            client = ClientService(cfg.client_config(arch, method), cache_lookup=server.lookup_class)
            try:
                for round_index in range(1, total_rounds + 1):
                    phase, start = "materialize", time.perf_counter()
                    trains = []
                    for i, stream in enumerate(streams):
                        train, shard = materialize(inputs.store, stream.task(round_index))
                        trains.append(train)
                        states[i] = states[i].with_test_shard(shard)
                    phase_seconds[phase] += time.perf_counter() - start

                    phase, start = "local", time.perf_counter()
                    calls = [
                        (
                            client.run_round,
                            (
                                method,
                                states[i],
                                trains[i],
                                global_model,
                                personalized[i],
                                derive_seed(seed, i, round_index),
                            ),
                        )
                        for i in range(n_clients)
                    ]
                    results = await _fan_out(semaphore, calls)
                    uploads = [upload for upload, _ in results]
                    states = [state for _, state in results]
                    if cfg.poison is not None:
                        target = cfg.poison.client_id
                        uploads[target] = _poisoned(uploads[target], cfg.poison.noise_std, seed, round_index)
                    phase_seconds[phase] += time.perf_counter() - start

                    phase, start = "aggregate", time.perf_counter()
                    if spec.personalized:
                        round_seed = derive_seed(seed, round_index, Stream.SERVER_REPLAY)
                        async with semaphore:
                            aggregate = await asyncio.to_thread(server.aggregate_round, uploads, round_seed)
                        personalized = list(aggregate.personalized)
                        states = [state.with_personalized(model) for state, model in zip(states, personalized)]
                        global_model = aggregate.global_mean
                        record.aggregation_weights.append([weights.tolist() for weights in aggregate.weights])
                        models = personalized
                    else:
                        if spec.keeps_cache:
                            server.merge(uploads)
                        global_model = fedavg_aggregate(uploads, cfg.fedavg_weighting)
                        models = [global_model] * n_clients
                    checkpoint = self._checkpoint_path(record, round_index) if spec.keeps_cache else None
                    if checkpoint is not None:
                        server.save_checkpoint(checkpoint)
                    phase_seconds[phase] += time.perf_counter() - start

                    phase, start = "evaluate", time.perf_counter()
                    counts = [state.data_count for state in states]
                    accuracies, round_iaa = evaluate_round(arch, models, [s.cumulative_test for s in states], counts)
                    record.iaa.append(round_iaa)
                    record.accuracies.append(accuracies)
                    record.data_counts.append(counts)
                    phase_seconds[phase] += time.perf_counter() - start
                    logger.info(f"{method.value} seed {seed} round {round_index}: IAA {round_iaa:.4f}")
            except ExperimentError:
                raise
            except Exception as e:
                logger.error(f"{method.value} seed {seed} failed in round {round_index} ({phase})", exc_info=True)
                raise ExperimentError(f"{type(e).__name__}: {e}", round_index, phase) from e

        record.phase_seconds.update(phase_seconds)
        logger.info(
            f"Finished {method.value} seed {seed}: AA {float(np.mean(record.iaa)):.4f}",
            extra={"timing_ms": 1000 * sum(phase_seconds.values())},
        )
        return record

    async def run_all(self) -> list[RunRecord]:
        """
        Every (method, seed) pair of the run document, concurrently.

        Methods sharing a seed share streams and data. Records come back ordered by method, then seed.
        """
        semaphore = asyncio.Semaphore(self.max_workers)
        inputs = {seed: self.inputs_for(seed) for seed in self.cfg.seeds}
        return list(
            await asyncio.gather(
                *(
                    self.run_method(method, seed, inputs[seed], semaphore)
                    for method in self.cfg.methods
                    for seed in self.cfg.seeds
                )
            )
        )

    def run_experiment(self, method: MethodId, seed: int) -> RunRecord:
        """Synchronous entry point for a single run."""
        return asyncio.run(self.run_method(method, seed))
