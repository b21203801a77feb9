import numpy as np
import pytest

from app.core.exceptions import ArchitectureError, ConfigurationError, ContractViolation, NumericError
from app.core.seeding import rng_for
from app.models.batch import LabeledBatch
from app.models.params import AggregationWeights, ParamVector
from app.schemas.model import Activation, ModelArch, SgdConfig
from app.services.task_model import (
    accuracy,
    alignment_loss,
    cross_entropy,
    forward,
    grad,
    init_params,
    mix_params,
    objective,
    predict,
    sgd_train,
    value_and_grad,
)


def _random_batch(arch: ModelArch, n: int, seed: int) -> LabeledBatch:
    rng = np.random.default_rng(seed)
    return LabeledBatch(rng.normal(size=(n, arch.input_dim)), rng.integers(0, arch.num_classes, size=n))


def _finite_difference(fn, values: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(values)
    for i in range(values.size):
        up, down = values.copy(), values.copy()
        up[i] += eps
        down[i] -= eps
        out[i] = (fn(up) - fn(down)) / (2 * eps)
    return out


def _assert_close_gradients(analytic: np.ndarray, numeric: np.ndarray) -> None:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


def test_param_count_and_forward_shape(tanh_arch: ModelArch) -> None:
    assert tanh_arch.param_count == 3 * 4 + 4 + 4 * 3 + 3
    params = init_params(tanh_arch, rng_for(1))
    batch = _random_batch(tanh_arch, 5, seed=0)
    assert forward(tanh_arch, params, batch).shape == (5, 3)


def test_zero_model_predicts_lowest_class(tanh_arch: ModelArch) -> None:
    params = ParamVector.zeros(tanh_arch)
    features = np.random.default_rng(0).normal(size=(6, 3))
    assert predict(tanh_arch, params, features).tolist() == [0] * 6


def test_cross_entropy_of_uniform_logits() -> None:
    logits = np.zeros((4, 5))
    assert cross_entropy(logits, np.array([0, 1, 2, 3])) == pytest.approx(np.log(5))


def test_cross_entropy_rejects_empty_batch() -> None:
    with pytest.raises(ContractViolation):
        cross_entropy(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


def test_alignment_loss_masks_rows_and_divides_by_batch_size() -> None:
    current = np.array([[1.0, 0.0], [2.0, 2.0], [0.0, 0.0]])
    anchor = np.zeros((3, 2))
    labels = np.array([0, 1, 1])
    # only the first row's label was seen before: mean((1, 0)^2) = 0.5, divided by 3 rows
    assert alignment_loss(current, anchor, labels, {0}) == pytest.approx(0.5 / 3)
    assert alignment_loss(current, anchor, labels, set()) == 0.0


def test_gradient_matches_finite_differences(tanh_arch: ModelArch) -> None:
    params = init_params(tanh_arch, rng_for(3))
    batch = _random_batch(tanh_arch, 7, seed=4)

    def loss(values: np.ndarray) -> float:
        return objective(tanh_arch, params.replace(values), batch)

    analytic = grad(tanh_arch, params, batch).values
    _assert_close_gradients(analytic, _finite_difference(loss, params.values.copy()))


def test_gradient_with_alignment_and_proximal_terms(tanh_arch: ModelArch) -> None:
    params = init_params(tanh_arch, rng_for(5))
    anchor = init_params(tanh_arch, rng_for(6))
    center = init_params(tanh_arch, rng_for(7))
    batch = _random_batch(tanh_arch, 9, seed=8)
    extra = dict(
        anchor_params=anchor,
        previous_classes={0, 2},
        lambda_align=0.7,
        prox_center=center,
        prox_mu=0.3,
    )

    def loss(values: np.ndarray) -> float:
        return objective(tanh_arch, params.replace(values), batch, **extra)

    analytic = grad(tanh_arch, params, batch, **extra).values
    _assert_close_gradients(analytic, _finite_difference(loss, params.values.copy()))


def _random_arch(rng: np.random.Generator) -> ModelArch:
    depth = int(rng.integers(0, 3))
    return ModelArch(
        input_dim=int(rng.integers(1, 5)),
        hidden_dims=tuple(int(w) for w in rng.integers(1, 5, size=depth)),
        num_classes=int(rng.integers(2, 5)),
        activation=Activation.TANH if rng.random() < 0.5 else Activation.RELU,
    )


def test_gradients_match_finite_differences_on_random_draws() -> None:
    rng = np.random.default_rng(2024)
    for draw in range(100):
        arch = _random_arch(rng)
        params = init_params(arch, rng_for(draw, 1))
        batch = _random_batch(arch, int(rng.integers(1, 8)), seed=draw)
        previous = set(rng.choice(arch.num_classes, size=int(rng.integers(1, arch.num_classes + 1)), replace=False))
        variants = (
            {},
            dict(
                anchor_params=init_params(arch, rng_for(draw, 2)),
                previous_classes={int(c) for c in previous},
                lambda_align=float(rng.uniform(0.1, 2.0)),
            ),
            dict(prox_center=init_params(arch, rng_for(draw, 3)), prox_mu=float(rng.uniform(0.01, 1.0))),
        )
        for extra in variants:

            def loss(values: np.ndarray) -> float:
                return objective(arch, params.replace(values), batch, **extra)

            analytic = grad(arch, params, batch, **extra).values
            _assert_close_gradients(analytic, _finite_difference(loss, params.values.copy()))


def test_value_and_grad_agrees_with_objective(tanh_arch: ModelArch) -> None:
    params = init_params(tanh_arch, rng_for(9))
    batch = _random_batch(tanh_arch, 6, seed=10)
    value, gradient = value_and_grad(tanh_arch, params, batch)
    assert value == pytest.approx(objective(tanh_arch, params, batch))
    assert gradient == grad(tanh_arch, params, batch)


def test_alignment_without_anchor_is_rejected(tanh_arch: ModelArch) -> None:
    params = init_params(tanh_arch, rng_for(1))
    with pytest.raises(ConfigurationError):
        grad(tanh_arch, params, _random_batch(tanh_arch, 3, seed=0), previous_classes={0}, lambda_align=1.0)


def test_foreign_parameters_are_rejected(tanh_arch: ModelArch) -> None:
    other = ModelArch(input_dim=3, hidden_dims=(5,), num_classes=3)
    with pytest.raises(ArchitectureError):
        forward(tanh_arch, init_params(other, rng_for(0)), _random_batch(tanh_arch, 2, seed=0))


def test_non_finite_features_are_rejected(tanh_arch: ModelArch) -> None:
    features = np.zeros((2, 3))
    features[1, 2] = np.nan
    with pytest.raises(NumericError):
        forward(tanh_arch, init_params(tanh_arch, rng_for(0)), LabeledBatch(features, [0, 1]))


def test_full_batch_descent_lowers_the_objective(small_arch: ModelArch, blobs) -> None:
    data = blobs([0, 1, 2, 3], 25)
    cfg = SgdConfig(learning_rate=0.05, momentum=0.0, weight_decay=0.0, epochs=30, batch_size=len(data))
    losses = []
    init = init_params(small_arch, rng_for(2))
    sgd_train(small_arch, init, data, cfg, on_epoch=lambda epoch, loss: losses.append(loss))
    assert len(losses) == 30
    assert losses[-1] < losses[0] < objective(small_arch, init, data) + 1e-12


def test_sgd_is_deterministic_given_the_seed(small_arch: ModelArch, blobs) -> None:
    data = blobs([0, 1], 30)
    cfg = SgdConfig(epochs=2, batch_size=8)
    init = init_params(small_arch, rng_for(0))
    assert sgd_train(small_arch, init, data, cfg, seed=11) == sgd_train(small_arch, init, data, cfg, seed=11)
    assert sgd_train(small_arch, init, data, cfg, seed=11) != sgd_train(small_arch, init, data, cfg, seed=12)


def test_zero_epochs_returns_the_initial_model(small_arch: ModelArch, blobs) -> None:
    init = init_params(small_arch, rng_for(0))
    assert sgd_train(small_arch, init, blobs([0], 5), SgdConfig(epochs=0)) == init


def test_mix_params_convex_combinations(small_arch: ModelArch) -> None:
    a = init_params(small_arch, rng_for(1))
    b = init_params(small_arch, rng_for(2))
    assert mix_params([a, b], AggregationWeights.one_hot(2, 1)) == b
    mean = mix_params([a, b], AggregationWeights.uniform(2))
    np.testing.assert_allclose(mean.values, (a.values + b.values) / 2)


def test_mix_params_is_linear_in_the_weights(small_arch: ModelArch) -> None:
    a, b, c = (init_params(small_arch, rng_for(k)) for k in range(3))
    weights = AggregationWeights(np.array([0.2, 0.5, 0.3]))
    mixed = mix_params([a, b, c], weights)
    np.testing.assert_allclose(mixed.values, 0.2 * a.values + 0.5 * b.values + 0.3 * c.values, atol=1e-12)

    pair = mix_params([a, b], AggregationWeights(np.array([2 / 7, 5 / 7])))
    nested = mix_params([pair, c], AggregationWeights(np.array([0.7, 0.3])))
    np.testing.assert_allclose(nested.values, mixed.values, atol=1e-12)
    np.testing.assert_allclose(mix_params([a, a, a], weights).values, a.values, atol=1e-12)


def test_mix_params_rejects_mismatches(small_arch: ModelArch, tanh_arch: ModelArch) -> None:
    a = init_params(small_arch, rng_for(1))
    with pytest.raises(ContractViolation):
        mix_params([a], AggregationWeights.uniform(2))
    with pytest.raises(ArchitectureError):
        mix_params([a, init_params(tanh_arch, rng_for(1))], AggregationWeights.uniform(2))


def test_accuracy_counts_argmax_hits(tanh_arch: ModelArch) -> None:
    params = ParamVector.zeros(tanh_arch)
    batch = LabeledBatch(np.ones((4, 3)), [0, 0, 1, 2])
    assert accuracy(tanh_arch, params, batch) == 0.5


def test_separable_blobs_are_learned_exactly() -> None:
    arch = ModelArch(input_dim=2, hidden_dims=(), num_classes=2)
    rng = np.random.default_rng(0)
    features = np.vstack([rng.normal(-4.0, 0.5, size=(50, 2)), rng.normal(4.0, 0.5, size=(50, 2))])
    data = LabeledBatch(features, np.repeat([0, 1], 50))
    cfg = SgdConfig(learning_rate=0.02, momentum=0.0, weight_decay=0.0, epochs=100, batch_size=len(data))
    losses = []
    trained = sgd_train(
        arch, ParamVector.zeros(arch), data, cfg, seed=0, on_epoch=lambda epoch, loss: losses.append(loss)
    )
    assert len(losses) == 100
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))
    assert accuracy(arch, trained, data) == 1.0
