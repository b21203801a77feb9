"""
Server service
Auxiliary cache maintenance, personalized aggregation weight optimization
and construction of personalized and global models
"""
import logging
import time
from concurrent.futures import Executor
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import softmax

from app.core.exceptions import CacheConsistencyError, ContractViolation, OptimizationError
from app.core.seeding import Stream, rng_for
from app.models.batch import LabeledBatch
from app.models.federation import CachedGenerator, RoundAggregate, RoundUpload, ServerCache
from app.models.generator import AuxiliaryModel, GeneratorParams
from app.models.labels import LabelCountVector
from app.models.params import AggregationWeights, ParamVector
from app.schemas.model import ModelArch
from app.schemas.run import FedAvgWeighting, WeightOptConfig
from app.services.checkpoint import save_cache
from app.services.task_model import mix_params, predict, value_and_grad

logger = logging.getLogger(__name__)


def lookup_class(cache: ServerCache, class_id: int) -> Optional[GeneratorParams]:
    """Newest cached sub-model for a class, or None."""
    entry = cache.class_cache.get(int(class_id))
    return None if entry is None else entry.params


def merge_uploads(uploads: Sequence[RoundUpload], cache: ServerCache) -> ServerCache:
    """
    Fold one round of uploads into the cache.

    Uploads are applied in ascending client order, so when two clients upload the
    same class in one round the higher client id is the newest entry.
    """
    round_index = cache.round_index + 1
    thetas, mirrors = dict(cache.thetas), dict(cache.mirrors)
    class_cache, label_counts, coupled = dict(cache.class_cache), dict(cache.label_counts), dict(cache.coupled)
    for upload in sorted(uploads, key=lambda u: u.client_id):
        thetas[upload.client_id] = upload.theta_star
        mirrors[upload.client_id] = mirrors.get(upload.client_id, AuxiliaryModel()).with_updates(
            upload.updated_submodels
        )
        for class_id, params in upload.updated_submodels.items():
            class_cache[class_id] = CachedGenerator(params, round_index, upload.client_id)
        label_counts[upload.client_id] = upload.label_counts
        if upload.coupled_generator is not None:
            coupled[upload.client_id] = upload.coupled_generator
    return ServerCache(
        round_index=round_index,
        thetas=thetas,
        mirrors=mirrors,
        class_cache=class_cache,
        label_counts=label_counts,
        coupled=coupled,
    )


def apportion(label_counts: LabelCountVector, budget: int) -> LabelCountVector:
    """
    Split `budget` across classes in proportion to `label_counts`.

    Largest remainder: every class gets the floor of its quota, leftover units go to
    the largest fractional parts, lowest class id first on ties.
    """
    total = label_counts.total()
    if total == 0:
        raise ContractViolation("Cannot apportion over an empty label distribution")
    classes = sorted(label_counts.support())
    base = {c: budget * label_counts[c] // total for c in classes}
    remainders = {c: budget * label_counts[c] % total for c in classes}
    leftover = budget - sum(base.values())
    for class_id in sorted(classes, key=lambda c: (-remainders[c], c))[:leftover]:
        base[class_id] += 1
    return LabelCountVector(base)


def server_replay_set(
    cache: ServerCache,
    client_id: int,
    arch: ModelArch,
    replay_budget: int,
    rng: np.random.Generator,
) -> LabeledBatch:
    """
    Replay rows that stand in for a client's cumulative distribution.

    Drawn from the client's coupled generator (labelled by its uploaded model) when it has
    one, otherwise from its mirrored per-class sub-models in label-count proportion.

    Raises:
        CacheConsistencyError: the client reports a class its mirror has no sub-model for
    """
    coupled = cache.coupled.get(client_id)
    if coupled is not None:
        features = coupled.sample(replay_budget, rng)
        return LabeledBatch(features, predict(arch, cache.thetas[client_id], features))

    mirror = cache.mirrors.get(client_id, AuxiliaryModel())
    counts = apportion(cache.label_counts[client_id], replay_budget)
    parts = []
    for class_id, count in counts.counts.items():
        submodel = mirror.get(class_id)
        if submodel is None:
            raise CacheConsistencyError(client_id, class_id)
        parts.append(LabeledBatch(submodel.sample(count, rng), np.full(count, class_id)))
    return LabeledBatch.concat(parts)


def optimize_weights(
    thetas: Sequence[ParamVector],
    replay_set: LabeledBatch,
    arch: ModelArch,
    opt_cfg: WeightOptConfig,
) -> AggregationWeights:
    """
    Collaboration weights minimizing the replay loss of the mixed model.

    w = softmax(z) starts uniform (z = 0). Each step follows the chain rule
    dL/dw_j = <grad L(theta_mix), theta_j> through the softmax Jacobian. A step that
    would raise the loss is halved up to max_backoff times and otherwise skipped.
    With step_growth > 1 an accepted step also enlarges the next one.

    Args:
        thetas: Candidate models, one per client
        replay_set: Rows representing the target client's distribution
        arch: Task model architecture
        opt_cfg: Step schedule

    Returns:
        AggregationWeights

    Raises:
        ContractViolation: no candidates or an empty replay set
        ArchitectureError: candidates of different architectures
        OptimizationError: the replay loss is not finite
    """
    if not thetas:
        raise ContractViolation("No candidate models to weight")
    for theta in thetas:
        theta.check_arch(arch)
    n = len(thetas)
    if n == 1:
        return AggregationWeights(np.ones(1))
    if len(replay_set) == 0:
        raise ContractViolation("Weight optimization needs a nonempty replay set")

    stacked = np.stack([theta.values for theta in thetas])

    def evaluate(weights: np.ndarray, step: int) -> tuple[float, np.ndarray]:
        mixed = ParamVector(weights @ stacked, arch.fingerprint)
        loss, gradient = value_and_grad(arch, mixed, replay_set)
        if not np.isfinite(loss):
            raise OptimizationError("Replay loss is not finite", step)
        return loss, gradient.values

    z = np.zeros(n)
    weights = softmax(z)
    loss, gradient = evaluate(weights, 0)
    initial_loss = loss
    step_size = opt_cfg.step_size
    for step in range(1, opt_cfg.steps + 1):
        grad_w = stacked @ gradient
        grad_z = weights * (grad_w - weights @ grad_w)
        for _ in range(opt_cfg.max_backoff + 1):
            candidate_z = z - step_size * grad_z
            candidate = softmax(candidate_z)
            candidate_loss, candidate_gradient = evaluate(candidate, step)
            if candidate_loss <= loss:
                z, weights, loss, gradient = candidate_z, candidate, candidate_loss, candidate_gradient
                step_size *= opt_cfg.step_growth
                break
            step_size /= 2
        else:
            logger.debug(f"Weight optimization stalled at step {step}")
            break
    logger.debug(f"Replay loss {initial_loss:.6f} -> {loss:.6f} over {n} candidates")
    return AggregationWeights(weights)


def fedavg_aggregate(uploads: Sequence[RoundUpload], weighting: FedAvgWeighting) -> ParamVector:
    """FedAvg global model, weighted by local training-set size or uniformly."""
    if not uploads:
        raise ContractViolation("fedavg_aggregate needs at least one upload")
    ordered = sorted(uploads, key=lambda u: u.client_id)
    if weighting == FedAvgWeighting.UNIFORM:
        weights = AggregationWeights.uniform(len(ordered))
    else:
        weights = AggregationWeights.proportional([upload.train_size for upload in ordered])
    return mix_params([upload.theta_star for upload in ordered], weights)


class ServerService:
    """
    Server side of one federated run
    Owns the auxiliary cache between rounds and builds every client's personalized model
    """

    def __init__(
        self,
        arch: ModelArch,
        opt_cfg: WeightOptConfig,
        replay_budget: int,
        force_uniform: bool = False,
        cache: Optional[ServerCache] = None,
        executor: Optional[Executor] = None,
    ):
        """
        Args:
            arch: Task model architecture
            opt_cfg: Weight optimization schedule
            replay_budget: Server replay rows per client
            force_uniform: Skip weight optimization and mix uniformly
            cache: Starting cache, empty by default
            executor: Runs the per-client personalization jobs; sequential when None
        """
        self.arch = arch
        self.opt_cfg = opt_cfg
        self.replay_budget = replay_budget
        self.force_uniform = force_uniform
        self.cache = cache or ServerCache()
        self.executor = executor

    def lookup_class(self, class_id: int) -> Optional[GeneratorParams]:
        """Parameter-cache request of a client meeting a class for the first time."""
        return lookup_class(self.cache, class_id)

    def merge(self, uploads: Sequence[RoundUpload]) -> ServerCache:
        """Merge uploads without personalizing (FedAvg with replay keeps a cache this way)."""
        self.cache = merge_uploads(uploads, self.cache)
        return self.cache

    def _personalize(
        self, cache: ServerCache, client_id: int, thetas: Sequence[ParamVector], seed: int
    ) -> tuple[ParamVector, AggregationWeights]:
        if self.force_uniform:
            weights = AggregationWeights.uniform(len(thetas))
        else:
            start = time.perf_counter()
            rng = rng_for(seed, client_id, Stream.SERVER_REPLAY)
            replay_set = server_replay_set(cache, client_id, self.arch, self.replay_budget, rng)
            weights = optimize_weights(thetas, replay_set, self.arch, self.opt_cfg)
            logger.debug(
                f"Client {client_id} weights {np.round(weights.weights, 4).tolist()} "
                f"in {(time.perf_counter() - start) * 1000:.2f}ms"
            )
        return mix_params(thetas, weights), weights

    def personalize(
        self, client_id: int, thetas: Sequence[ParamVector], seed: int
    ) -> tuple[ParamVector, AggregationWeights]:
        """Optimize one client's weights over `thetas` against the current cache and mix its model."""
        return self._personalize(self.cache, client_id, thetas, seed)

    def aggregate_round(self, uploads: Sequence[RoundUpload], seed: int) -> RoundAggregate:
        """
        Personalized aggregation of one round.

        1. Merge uploaded sub-models into the client mirrors and the per-class cache.
        2. For each client, draw `replay_budget` rows from its mirror and optimize its weights.
        3. personalized_i = sum_j w_ij * theta_j.
        4. global_mean = unweighted mean of all uploaded models.

        The service's cache is replaced only once every client has been personalized.

        Raises:
            ContractViolation: no uploads
            CacheConsistencyError: a client reports a class its mirror cannot replay
        """
        if not uploads:
            raise ContractViolation("aggregate_round needs at least one upload")
        start = time.perf_counter()
        ordered = sorted(uploads, key=lambda u: u.client_id)
        new_cache = merge_uploads(ordered, self.cache)
        thetas = [upload.theta_star for upload in ordered]
        client_ids = [upload.client_id for upload in ordered]

        def job(client_id: int) -> tuple[ParamVector, AggregationWeights]:
            return self._personalize(new_cache, client_id, thetas, seed)

        mapper = self.executor.map if self.executor is not None else map
        results = list(mapper(job, client_ids))
        self.cache = new_cache
        logger.debug(
            f"Aggregated round {new_cache.round_index} for {len(ordered)} clients "
            f"in {(time.perf_counter() - start) * 1000:.2f}ms"
        )
        return RoundAggregate(
            client_ids=tuple(client_ids),
            personalized=tuple(model for model, _ in results),
            weights=tuple(weights for _, weights in results),
            global_mean=mix_params(thetas, AggregationWeights.uniform(len(thetas))),
            cache=new_cache,
        )

    def save_checkpoint(self, path: Union[str, Path]) -> Path:
        """Write the current cache as a checkpoint file."""
        return save_cache(self.cache, path)
