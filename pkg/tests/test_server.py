from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from app.core.exceptions import CacheConsistencyError, ContractViolation
from app.core.seeding import rng_for
from app.models.batch import LabeledBatch
from app.models.federation import RoundUpload, ServerCache
from app.models.generator import GeneratorKind, GeneratorParams
from app.models.labels import LabelCountVector
from app.models.params import AggregationWeights, ParamVector
from app.schemas.model import ModelArch, SgdConfig
from app.schemas.run import FedAvgWeighting, WeightOptConfig
from app.services.replay import fit_submodel
from app.services.checkpoint import load_cache
from app.services.server import (
    ServerService,
    apportion,
    fedavg_aggregate,
    lookup_class,
    merge_uploads,
    optimize_weights,
    server_replay_set,
)
from app.services.task_model import init_params, mix_params, objective, sgd_train

LINEAR = ModelArch(input_dim=2, hidden_dims=(), num_classes=2)


def _diag(mean) -> GeneratorParams:
    return GeneratorParams(
        kind=GeneratorKind.DIAG_GAUSSIAN,
        means=[mean],
        variances=[[1.0] * len(mean)],
        weights=[1.0],
        fit_sample_count=10,
    )


def _upload(client_id: int, theta: ParamVector, submodels=None, counts=None, train_size: int = 10) -> RoundUpload:
    return RoundUpload(
        client_id=client_id,
        theta_star=theta,
        updated_submodels=submodels or {},
        label_counts=LabelCountVector(counts or {}),
        train_size=train_size,
    )


def _fitted(data: LabeledBatch) -> ParamVector:
    cfg = SgdConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0, epochs=100, batch_size=64)
    return sgd_train(LINEAR, ParamVector.zeros(LINEAR), data, cfg, seed=0)


def _loss(thetas, weights: AggregationWeights, data: LabeledBatch) -> float:
    return objective(LINEAR, mix_params(thetas, weights), data)


def test_single_candidate_gets_all_the_weight() -> None:
    theta = init_params(LINEAR, rng_for(0))
    weights = optimize_weights([theta], LabeledBatch.empty(2), LINEAR, WeightOptConfig())
    assert weights.tolist() == [1.0]


def test_zero_steps_keep_uniform_weights(blobs) -> None:
    thetas = [init_params(LINEAR, rng_for(seed)) for seed in range(3)]
    weights = optimize_weights(thetas, blobs([0, 1], 20), LINEAR, WeightOptConfig(steps=0))
    assert weights.tolist() == [1 / 3] * 3
    assert WeightOptConfig().step_growth == 1.0


def test_weights_approach_the_grid_optimum(blobs) -> None:
    data = blobs([0, 1], 200, separation=1.0)
    good = _fitted(data)
    bad = good.replace(-good.values)
    weights = optimize_weights([good, bad], data, LINEAR, WeightOptConfig(steps=60, step_growth=1.5))

    grid = [AggregationWeights(np.array([w, 1 - w])) for w in np.linspace(0, 1, 101)]
    best = min(_loss([good, bad], w, data) for w in grid)
    final = _loss([good, bad], weights, data)
    assert final <= best * 1.05 + 1e-6
    assert weights.weights[0] > 0.9


def test_optimized_weights_stay_on_the_simplex_and_descend(blobs) -> None:
    data = blobs([0, 1], 40)
    for draw in range(200):
        n = 2 + draw % 4
        thetas = [init_params(LINEAR, rng_for(draw, k)) for k in range(n)]
        weights = optimize_weights(thetas, data, LINEAR, WeightOptConfig(steps=5))
        assert np.all(weights.weights >= 0)
        assert weights.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert _loss(thetas, weights, data) <= _loss(thetas, AggregationWeights.uniform(n), data) + 1e-12


def test_identical_candidates_mix_to_themselves() -> None:
    theta = init_params(LINEAR, rng_for(4))
    cache = merge_uploads([_upload(i, theta, {0: _diag([0.0, 0.0])}, {0: 5}) for i in range(3)], ServerCache())
    server = ServerService(LINEAR, WeightOptConfig(), replay_budget=50, cache=cache)
    model, _ = server.personalize(1, [theta] * 3, seed=0)
    np.testing.assert_allclose(model.values, theta.values, atol=1e-12)


def test_apportion_largest_remainder() -> None:
    assert apportion(LabelCountVector({0: 400, 1: 100}), 100) == LabelCountVector({0: 80, 1: 20})
    assert apportion(LabelCountVector({0: 1, 1: 1, 2: 1}), 2) == LabelCountVector({0: 1, 1: 1})
    assert apportion(LabelCountVector({3: 2, 7: 1}), 10).total() == 10
    with pytest.raises(ContractViolation):
        apportion(LabelCountVector(), 5)


def test_cache_keeps_the_newest_submodel_per_class() -> None:
    theta = ParamVector.zeros(LINEAR)
    first, second, third = _diag([0.0, 0.0]), _diag([1.0, 1.0]), _diag([2.0, 2.0])
    cache = merge_uploads([_upload(0, theta, {5: first})], ServerCache())
    assert cache.round_index == 1
    assert lookup_class(cache, 5) is first
    assert lookup_class(cache, 6) is None

    cache = merge_uploads([_upload(1, theta, {5: second})], cache)
    assert lookup_class(cache, 5) is second
    assert cache.class_cache[5].round_index == 2

    # same round: the higher client id is applied last
    cache = merge_uploads([_upload(4, theta, {5: third}), _upload(2, theta, {5: first})], cache)
    assert lookup_class(cache, 5) is third
    assert cache.class_cache[5].client_id == 4
    assert cache.mirrors[1].get(5) is second


def test_server_replay_follows_the_label_distribution() -> None:
    theta = ParamVector.zeros(LINEAR)
    upload = _upload(0, theta, {0: _diag([0.0, 0.0]), 1: _diag([5.0, 5.0])}, {0: 300, 1: 100})
    cache = merge_uploads([upload], ServerCache())
    batch = server_replay_set(cache, 0, LINEAR, 40, rng_for(0))
    assert LabelCountVector.from_labels(batch.labels) == LabelCountVector({0: 30, 1: 10})


def test_mirror_without_a_reported_class_is_inconsistent() -> None:
    cache = merge_uploads([_upload(0, ParamVector.zeros(LINEAR), {0: _diag([0.0, 0.0])}, {0: 5, 1: 5})], ServerCache())
    with pytest.raises(CacheConsistencyError) as info:
        server_replay_set(cache, 0, LINEAR, 10, rng_for(0))
    assert (info.value.client_id, info.value.class_id) == (0, 1)


def test_poisoned_model_gets_less_than_a_fair_share(blobs) -> None:
    data = blobs([0, 1], 100)
    honest = [_fitted(data), _fitted(data.subset(np.arange(0, 200, 2)))]
    poisoned = honest[0].replace(np.random.default_rng(0).normal(0.0, 5.0, LINEAR.param_count))
    submodels = {c: fit_submodel(data.rows_of(c), kind=GeneratorKind.DIAG_GAUSSIAN) for c in (0, 1)}
    uploads = [_upload(0, honest[0], submodels, {0: 100, 1: 100}), _upload(1, honest[1]), _upload(2, poisoned)]
    cache = merge_uploads(uploads, ServerCache())

    thetas = [*honest, poisoned]
    _, weights = ServerService(LINEAR, WeightOptConfig(), replay_budget=200, cache=cache).personalize(0, thetas, seed=1)
    assert weights.weights[2] < 1 / 3


def test_forced_uniform_weights_give_the_global_mean() -> None:
    thetas = [init_params(LINEAR, rng_for(k)) for k in range(3)]
    uploads = [_upload(i, thetas[i], {i: _diag([float(i), 0.0])}, {i: 10}) for i in range(3)]
    server = ServerService(LINEAR, WeightOptConfig(), 30, force_uniform=True)
    result = server.aggregate_round(uploads, seed=0)
    for client_id in range(3):
        assert result.personalized_for(client_id) == result.global_mean
        assert result.weights[client_id] == AggregationWeights.uniform(3)
    assert result.cache.round_index == 1


def test_aggregate_round_personalizes_every_client() -> None:
    thetas = [init_params(LINEAR, rng_for(k)) for k in range(2)]
    uploads = [_upload(i, thetas[i], {0: _diag([0.0, 0.0]), 1: _diag([3.0, 3.0])}, {0: 5, 1: 5}) for i in (1, 0)]
    result = ServerService(LINEAR, WeightOptConfig(steps=5), 20).aggregate_round(uploads, seed=3)
    assert result.client_ids == (0, 1)
    assert len(result.personalized) == 2
    np.testing.assert_allclose(result.global_mean.values, (thetas[0].values + thetas[1].values) / 2)


def test_fedavg_weights_by_training_set_size() -> None:
    a, b = ParamVector.zeros(LINEAR), ParamVector.zeros(LINEAR).replace(np.ones(LINEAR.param_count))
    uploads = [_upload(0, a, train_size=300), _upload(1, b, train_size=100)]
    np.testing.assert_allclose(fedavg_aggregate(uploads, FedAvgWeighting.DATA_SIZE).values, 0.25)
    np.testing.assert_allclose(fedavg_aggregate(uploads, FedAvgWeighting.UNIFORM).values, 0.5)


def test_thread_pool_personalization_matches_sequential() -> None:
    thetas = [init_params(LINEAR, rng_for(k)) for k in range(3)]
    uploads = [_upload(i, thetas[i], {0: _diag([0.0, 0.0]), 1: _diag([3.0, 3.0])}, {0: 5, 1: 5}) for i in range(3)]
    sequential = ServerService(LINEAR, WeightOptConfig(steps=5), 20).aggregate_round(uploads, seed=7)
    with ThreadPoolExecutor(max_workers=3) as executor:
        pooled = ServerService(LINEAR, WeightOptConfig(steps=5), 20, executor=executor).aggregate_round(uploads, seed=7)
    assert pooled.personalized == sequential.personalized
    assert pooled.weights == sequential.weights


def test_service_keeps_the_cache_between_rounds(tmp_path) -> None:
    theta = ParamVector.zeros(LINEAR)
    server = ServerService(LINEAR, WeightOptConfig(steps=2), 10)
    server.aggregate_round([_upload(0, theta, {3: _diag([0.0, 0.0])}, {3: 5})], seed=0)
    assert server.cache.round_index == 1
    assert server.lookup_class(3) is not None
    assert server.lookup_class(4) is None

    server.merge([_upload(1, theta, {4: _diag([1.0, 1.0])}, {4: 5})])
    assert server.cache.round_index == 2
    assert server.cache.class_cache[4].client_id == 1

    restored = load_cache(server.save_checkpoint(tmp_path / "round_002.pfgc"))
    assert restored.round_index == 2
    assert sorted(restored.class_cache) == [3, 4]


def test_failed_personalization_keeps_the_previous_cache() -> None:
    theta = ParamVector.zeros(LINEAR)
    server = ServerService(LINEAR, WeightOptConfig(), 10)
    uploads = [
        _upload(0, theta, {0: _diag([0.0, 0.0])}, {0: 5, 1: 5}),
        _upload(1, theta, {0: _diag([0.0, 0.0])}, {0: 5}),
    ]
    with pytest.raises(CacheConsistencyError):
        server.aggregate_round(uploads, seed=0)
    assert server.cache.round_index == 0
    assert not server.cache.class_cache
