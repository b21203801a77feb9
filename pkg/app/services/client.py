"""
Client service
One client's federated round: distribution reconstruction, replay, local training
with the alignment term, and auxiliary sub-model updates
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import ConfigurationError, ContractViolation, ReplayError
from app.core.seeding import Stream, derive_seed, rng_for
from app.models.batch import LabeledBatch
from app.models.federation import ClientState, RoundUpload
from app.models.generator import FitBudget, GeneratorParams, ReconstructionPlan
from app.models.labels import LabelCountVector
from app.models.params import ParamVector
from app.schemas.run import ClientConfig, MethodId
from app.services import replay
from app.services.task_model import predict, sgd_train

logger = logging.getLogger(__name__)

CacheLookup = Callable[[int], Optional[GeneratorParams]]


def _no_cache(class_id: int) -> Optional[GeneratorParams]:
    return None


@dataclass(frozen=True)
class LocalRecipe:
    """
    How a method trains locally.

    Attributes:
        replay: Mix generated rows for previously seen classes into the training set
        align: Pull outputs on previous classes towards the personalized model
        personalized_init: Start from the personalized model instead of the global one
        proximal: Add the FedProx term around the global model
        fit_generators: Maintain per-class sub-models
    """

    replay: bool
    align: bool
    personalized_init: bool = False
    proximal: bool = False
    fit_generators: bool = True


RECIPES: dict[MethodId, LocalRecipe] = {
    MethodId.PFEDGRP: LocalRecipe(replay=True, align=True),
    MethodId.FEDAVG: LocalRecipe(replay=False, align=False, fit_generators=False),
    MethodId.FEDPROX: LocalRecipe(replay=False, align=False, proximal=True, fit_generators=False),
    MethodId.FEDAVG_REPLAY: LocalRecipe(replay=True, align=False),
    MethodId.PFEDGRP_ASG: LocalRecipe(replay=True, align=False),
    MethodId.PFEDGRP_ASP: LocalRecipe(replay=True, align=False, personalized_init=True),
}


def _check_task(task_train: LabeledBatch, cfg: ClientConfig) -> LabelCountVector:
    if len(task_train) == 0:
        raise ContractViolation("Local round needs training data")
    if task_train.feature_dim != cfg.arch.input_dim:
        raise ContractViolation(
            f"Task rows have {task_train.feature_dim} features, model expects {cfg.arch.input_dim}"
        )
    task_train.check_labels(cfg.arch.num_classes)
    return LabelCountVector.from_labels(task_train.labels)


def _fit_current_classes(
    state: ClientState,
    task_train: LabeledBatch,
    cfg: ClientConfig,
    cache_lookup: CacheLookup,
    seed: int,
) -> tuple[dict[int, GeneratorParams], dict[int, FitBudget]]:
    """Refit the sub-model of every class with real rows this round."""
    gen = cfg.generator
    updates, budgets = {}, {}
    for class_id in sorted(set(task_train.labels.tolist())):
        rows = task_train.rows_of(class_id)
        warm = state.aux.get(class_id)
        if warm is None:
            warm = cache_lookup(class_id)
        budget = (
            FitBudget.TRANSFER
            if replay.can_transfer(warm, gen.kind, gen.n_components, rows.shape[1])
            else FitBudget.INIT
        )
        updates[class_id] = replay.fit_submodel(
            rows,
            warm_start=warm if budget == FitBudget.TRANSFER else None,
            budget=budget,
            kind=gen.kind,
            n_components=gen.n_components,
            variance_floor=gen.variance_floor,
            init_iterations=gen.init_iterations,
            transfer_iterations=gen.transfer_iterations,
            seed=derive_seed(seed, Stream.GENERATOR, class_id),
        )
        budgets[class_id] = budget
    return updates, budgets


def _replay_batch(state: ClientState, plan: ReconstructionPlan, seed: int) -> LabeledBatch:
    for class_id in plan.generate_counts.support():
        if class_id not in state.aux:
            raise ReplayError(class_id, f"Plan requests replay of class {class_id} but the client holds no sub-model")
    return replay.sample_replay(state.aux, plan, derive_seed(seed, Stream.REPLAY))


class ClientService:
    """
    Local side of one federated run
    Runs a client's round for any method with the run's local settings
    """

    def __init__(self, cfg: ClientConfig, cache_lookup: CacheLookup = _no_cache):
        """
        Args:
            cfg: Local-round settings
            cache_lookup: Server parameter-cache request for classes new to a client
        """
        self.cfg = cfg
        self.cache_lookup = cache_lookup

    def run_round(
        self,
        method: MethodId,
        state: ClientState,
        task_train: LabeledBatch,
        global_model: ParamVector,
        personalized_model: Optional[ParamVector] = None,
        seed: int = 0,
    ) -> tuple[RoundUpload, ClientState]:
        """Dispatch to the local round `method` uses."""
        if method == MethodId.PFEDGRP:
            return self.local_round(state, task_train, global_model, personalized_model, seed)
        return self.local_round_baseline(state, task_train, global_model, method, seed, personalized_model)

    def local_round(
        self,
        state: ClientState,
        task_train: LabeledBatch,
        global_model: ParamVector,
        personalized_model: Optional[ParamVector],
        seed: int = 0,
    ) -> tuple[RoundUpload, ClientState]:
        """
        One pFedGRP client round.

        1. Y_t from the real rows; Y_cum += Y_t.
        2. Reconstruction plan and replay from the client's own sub-models.
        3. SGD from the global model on real + replayed rows, aligned to the personalized
           model on previously seen classes (skipped before the first personalized model).
        4. Each current class refits its sub-model: transfer from the client's own or the
           server-cached sub-model when one exists, otherwise a cold start.

        The input state is never modified, so a failed round leaves it intact.

        Args:
            state: Client state after the previous round
            task_train: Real rows of this round's task
            global_model: Global mean model of the previous round (local initialization)
            personalized_model: Personalized model of the previous round, None in round 1
            seed: Round seed of this client

        Returns:
            The upload and the new client state

        Raises:
            ContractViolation: empty or malformed task data
            ReplayError: the plan needs a class this client never modelled
            TrainingError: local SGD diverged
        """
        return self._run_recipe(RECIPES[MethodId.PFEDGRP], state, task_train, global_model, personalized_model, seed)

    def local_round_baseline(
        self,
        state: ClientState,
        task_train: LabeledBatch,
        global_model: ParamVector,
        method: MethodId,
        seed: int = 0,
        personalized_model: Optional[ParamVector] = None,
    ) -> tuple[RoundUpload, ClientState]:
        """
        Local round of a baseline or ablation.

        fedavg trains on real rows from the global model; fedprox adds (mu / 2)||theta - theta_g||^2;
        fedavg_replay and pfedgrp_asg replay without alignment from the global model; pfedgrp_asp
        replays without alignment from the personalized model; pfedgrp_as1 replays from one
        coupled generator labelled by the personalized model.
        """
        if method == MethodId.PFEDGRP_AS1:
            return self.coupled_round(state, task_train, global_model, personalized_model, seed)
        if method not in RECIPES or method == MethodId.PFEDGRP:
            raise ConfigurationError(f"{method.value} has no baseline local round")
        return self._run_recipe(RECIPES[method], state, task_train, global_model, personalized_model, seed)

    def _run_recipe(
        self,
        recipe: LocalRecipe,
        state: ClientState,
        task_train: LabeledBatch,
        global_model: ParamVector,
        personalized_model: Optional[ParamVector],
        seed: int,
    ) -> tuple[RoundUpload, ClientState]:
        cfg = self.cfg
        start = time.perf_counter()
        y_t = _check_task(task_train, cfg)
        y_cum = replay.accumulate(state.y_cum, y_t)

        plan = ReconstructionPlan.empty()
        if recipe.replay and cfg.replay_enabled:
            plan = replay.reconstruction_plan(y_cum, y_t)
        train = LabeledBatch.concat([task_train, _replay_batch(state, plan, seed)]) if plan.total() else task_train

        previous = state.seen_classes
        lambda_align = 0.0
        if recipe.align and personalized_model is not None and previous and cfg.lambda_align > 0:
            lambda_align = cfg.lambda_align
        init = global_model
        if recipe.personalized_init and personalized_model is not None:
            init = personalized_model
        theta_star = sgd_train(
            cfg.arch,
            init,
            train,
            cfg.sgd,
            anchor=personalized_model if lambda_align else None,
            previous_classes=previous,
            lambda_align=lambda_align,
            seed=derive_seed(seed, Stream.SHUFFLE),
            prox_center=global_model if recipe.proximal else None,
            prox_mu=cfg.prox_mu if recipe.proximal else 0.0,
        )

        updates, budgets = {}, {}
        if recipe.fit_generators:
            updates, budgets = _fit_current_classes(state, task_train, cfg, self.cache_lookup, seed)

        logger.debug(
            f"Client {state.client_id} trained on {len(task_train)} real + {plan.total()} replayed rows "
            f"(alignment {lambda_align:.3g}) in {(time.perf_counter() - start) * 1000:.2f}ms"
        )
        upload = RoundUpload(
            client_id=state.client_id,
            theta_star=theta_star,
            updated_submodels=updates,
            label_counts=y_cum,
            train_size=len(train),
            fit_budgets=budgets,
        )
        return upload, replace(state, y_cum=y_cum, aux=state.aux.with_updates(updates))

    def coupled_round(
        self,
        state: ClientState,
        task_train: LabeledBatch,
        global_model: ParamVector,
        personalized_model: Optional[ParamVector],
        seed: int = 0,
    ) -> tuple[RoundUpload, ClientState]:
        """
        Local round with a single generator shared by all classes.

        As many rows as the task has real rows are sampled from the previous generator and
        labelled by the personalized model; the generator is then refit on real and replayed
        features together.
        """
        cfg = self.cfg
        y_t = _check_task(task_train, cfg)
        y_cum = replay.accumulate(state.y_cum, y_t)
        gen = cfg.generator

        train = task_train
        if cfg.replay_enabled and state.coupled is not None and personalized_model is not None:
            count = len(task_train)
            features = state.coupled.sample(count, rng_for(seed, Stream.REPLAY))
            labels = predict(cfg.arch, personalized_model, features)
            train = LabeledBatch.concat([task_train, LabeledBatch(features, labels, np.ones(count, dtype=bool))])

        previous = state.seen_classes
        lambda_align = cfg.lambda_align if personalized_model is not None and previous else 0.0
        theta_star = sgd_train(
            cfg.arch,
            global_model,
            train,
            cfg.sgd,
            anchor=personalized_model if lambda_align else None,
            previous_classes=previous,
            lambda_align=lambda_align,
            seed=derive_seed(seed, Stream.SHUFFLE),
        )

        features = train.features
        budget = (
            FitBudget.TRANSFER
            if replay.can_transfer(state.coupled, gen.kind, gen.n_components, features.shape[1])
            else FitBudget.INIT
        )
        coupled = replay.fit_submodel(
            features,
            warm_start=state.coupled if budget == FitBudget.TRANSFER else None,
            budget=budget,
            kind=gen.kind,
            n_components=gen.n_components,
            variance_floor=gen.variance_floor,
            init_iterations=gen.init_iterations,
            transfer_iterations=gen.transfer_iterations,
            seed=derive_seed(seed, Stream.GENERATOR),
        )
        logger.debug(f"Client {state.client_id} coupled generator refit ({budget.value}) on {len(features)} rows")
        upload = RoundUpload(
            client_id=state.client_id,
            theta_star=theta_star,
            label_counts=y_cum,
            train_size=len(train),
            coupled_generator=coupled,
        )
        return upload, replace(state, y_cum=y_cum, coupled=coupled)
