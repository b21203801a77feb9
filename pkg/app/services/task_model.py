"""
Task model service
Feed-forward classifier with hand-written backpropagation, its losses,
the local SGD loop and parameter-space mixing used by aggregation
Reference: https://cs231n.github.io/optimization-2/
"""
import logging
from typing import Callable, Collection, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from app.core.exceptions import (
    ArchitectureError,
    ConfigurationError,
    ContractViolation,
    NumericError,
    TrainingError,
)
from app.models.batch import LabeledBatch
from app.models.params import AggregationWeights, ParamVector
from app.schemas.model import Activation, ModelArch, SgdConfig

logger = logging.getLogger(__name__)


def init_params(arch: ModelArch, rng: np.random.Generator) -> ParamVector:
    """
    Glorot-uniform weights and zero biases.

    Args:
        arch: Architecture to initialize
        rng: Random generator (consumed)

    Returns:
        Fresh parameter vector
    """
    chunks = []
    for fan_in, fan_out in arch.layer_shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector.for_arch(arch, np.concatenate(chunks))


def unpack(arch: ModelArch, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into (W, b) views, W shaped (fan_in, fan_out)."""
    layers = []
    offset = 0
    for fan_in, fan_out in arch.layer_shapes:
        weight = values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = values[offset : offset + fan_out]
        offset += fan_out
        layers.append((weight, bias))
    return layers


def _activate(arch: ModelArch, z: np.ndarray) -> np.ndarray:
    if arch.activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(arch: ModelArch, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if arch.activation == Activation.RELU:
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_features(arch: ModelArch, features: np.ndarray) -> None:
    if features.shape[0] and features.shape[1] != arch.input_dim:
        raise ContractViolation(f"Expected {arch.input_dim} input features, got {features.shape[1]}")
    if not np.all(np.isfinite(features)):
        raise NumericError("Input features contain non-finite values")


def _trace(arch: ModelArch, values: np.ndarray, features: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    layers = unpack(arch, values)
    activations = [features]
    pre_activations = []
    for weight, bias in layers[:-1]:
        z = activations[-1] @ weight + bias
        pre_activations.append(z)
        activations.append(_activate(arch, z))
    weight, bias = layers[-1]
    logits = activations[-1] @ weight + bias
    return logits, pre_activations, activations, layers


def logits_for(arch: ModelArch, params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Logits for raw feature rows."""
    params.check_arch(arch)
    _check_features(arch, features)
    if features.shape[0] == 0:
        return np.zeros((0, arch.num_classes))
    return _trace(arch, params.values, features)[0]


def forward(arch: ModelArch, params: ParamVector, batch: LabeledBatch) -> np.ndarray:
    """
    Compute logits, one row per sample.

    Raises:
        ArchitectureError: params belong to another architecture
        NumericError: non-finite input features
    """
    return logits_for(arch, params, batch.features)


def predict(arch: ModelArch, params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class id."""
    return np.argmax(logits_for(arch, params, features), axis=1)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax probability of the true labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[0] == 0:
        raise ContractViolation("Cross-entropy of an empty batch is undefined")
    if logits.shape[0] != labels.shape[0]:
        raise ContractViolation(f"{logits.shape[0]} logit rows but {labels.shape[0]} labels")
    rows = np.arange(labels.shape[0])
    return float(np.mean(logsumexp(logits, axis=1) - logits[rows, labels]))


def _alignment_mask(labels: np.ndarray, previous_classes: Collection[int]) -> np.ndarray:
    if not previous_classes:
        return np.zeros(labels.shape[0], dtype=np.float64)
    return np.isin(labels, np.fromiter(previous_classes, dtype=np.int64)).astype(np.float64)


def alignment_loss(
    current_logits: np.ndarray,
    anchor_logits: np.ndarray,
    labels: np.ndarray,
    previous_classes: Collection[int],
) -> float:
    """
    Masked mean squared error between current and anchor logits.

    Rows whose label is outside previous_classes contribute zero; the sum is divided
    by the full batch size, not by the number of masked rows.
    """
    if current_logits.shape != anchor_logits.shape:
        raise ContractViolation(f"Logit shapes differ: {current_logits.shape} vs {anchor_logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != current_logits.shape[0]:
        raise ContractViolation("Label count differs from logit rows")
    if labels.shape[0] == 0:
        return 0.0
    mask = _alignment_mask(labels, previous_classes)
    per_row = np.mean((current_logits - anchor_logits) ** 2, axis=1)
    return float(np.sum(mask * per_row) / labels.shape[0])


def _objective(
    arch: ModelArch,
    values: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    anchor_logits: Optional[np.ndarray],
    mask: Optional[np.ndarray],
    lambda_align: float,
    prox_center: Optional[np.ndarray],
    prox_mu: float,
) -> tuple[float, np.ndarray]:
    """Loss and gradient of CE + lambda * alignment (+ proximal term) at `values`."""
    logits, pre_activations, activations, layers = _trace(arch, values, features)
    n, k = logits.shape
    rows = np.arange(n)
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, labels]))

    delta = np.exp(logits - lse[:, None])
    delta[rows, labels] -= 1.0
    delta /= n

    if lambda_align > 0 and anchor_logits is not None and mask is not None:
        diff = logits - anchor_logits
        loss += lambda_align * float(np.sum(mask * np.mean(diff**2, axis=1)) / n)
        delta += (lambda_align * 2.0 / (n * k)) * mask[:, None] * diff

    grads: list[np.ndarray] = [None] * (2 * len(layers))  # type: ignore[list-item]
    for index in range(len(layers) - 1, -1, -1):
        weight, _ = layers[index]
        grads[2 * index] = (activations[index].T @ delta).ravel()
        grads[2 * index + 1] = delta.sum(axis=0)
        if index:
            delta = (delta @ weight.T) * _activation_grad(arch, pre_activations[index - 1], activations[index])
    gradient = np.concatenate(grads)

    if prox_center is not None and prox_mu > 0:
        offset = values - prox_center
        loss += 0.5 * prox_mu * float(offset @ offset)
        gradient += prox_mu * offset
    return loss, gradient


def _anchor_logits(
    arch: ModelArch,
    anchor: Optional[ParamVector],
    features: np.ndarray,
    previous_classes: Collection[int],
    lambda_align: float,
) -> Optional[np.ndarray]:
    if lambda_align <= 0:
        return None
    if anchor is None:
        raise ConfigurationError("Alignment weight is positive but no anchor model was supplied")
    if not previous_classes:
        return None
    return logits_for(arch, anchor, features)


def objective(
    arch: ModelArch,
    params: ParamVector,
    batch: LabeledBatch,
    anchor_params: Optional[ParamVector] = None,
    previous_classes: Collection[int] = frozenset(),
    lambda_align: float = 0.0,
    prox_center: Optional[ParamVector] = None,
    prox_mu: float = 0.0,
) -> float:
    """Value of the local objective (see grad)."""
    return _evaluate(arch, params, batch, anchor_params, previous_classes, lambda_align, prox_center, prox_mu)[0]


def grad(
    arch: ModelArch,
    params: ParamVector,
    batch: LabeledBatch,
    anchor_params: Optional[ParamVector] = None,
    previous_classes: Collection[int] = frozenset(),
    lambda_align: float = 0.0,
    prox_center: Optional[ParamVector] = None,
    prox_mu: float = 0.0,
) -> ParamVector:
    """
    Gradient of cross_entropy + lambda_align * alignment_loss with respect to params.

    The anchor is a constant. With prox_center and prox_mu > 0 the FedProx term
    (mu / 2) * ||params - prox_center||^2 is added.

    Raises:
        ConfigurationError: lambda_align > 0 without anchor_params
    """
    return params.replace(
        _evaluate(arch, params, batch, anchor_params, previous_classes, lambda_align, prox_center, prox_mu)[1]
    )


def value_and_grad(arch: ModelArch, params: ParamVector, batch: LabeledBatch) -> tuple[float, ParamVector]:
    """Cross-entropy of `batch` and its gradient in one pass."""
    loss, gradient = _evaluate(arch, params, batch, None, frozenset(), 0.0, None, 0.0)
    return loss, params.replace(gradient)


def _evaluate(arch, params, batch, anchor_params, previous_classes, lambda_align, prox_center, prox_mu):
    params.check_arch(arch)
    if len(batch) == 0:
        raise ContractViolation("Objective of an empty batch is undefined")
    _check_features(arch, batch.features)
    batch.check_labels(arch.num_classes)
    anchor_logits = _anchor_logits(arch, anchor_params, batch.features, previous_classes, lambda_align)
    center = None
    if prox_center is not None:
        prox_center.check_arch(arch)
        center = prox_center.values
    return _objective(
        arch,
        params.values,
        batch.features,
        batch.labels,
        anchor_logits,
        _alignment_mask(batch.labels, previous_classes),
        lambda_align,
        center,
        prox_mu,
    )


def sgd_train(
    arch: ModelArch,
    init: ParamVector,
    data: LabeledBatch,
    cfg: SgdConfig,
    anchor: Optional[ParamVector] = None,
    previous_classes: Collection[int] = frozenset(),
    lambda_align: float = 0.0,
    seed: int = 0,
    prox_center: Optional[ParamVector] = None,
    prox_mu: float = 0.0,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> ParamVector:
    """
    Mini-batch SGD with momentum and coupled weight decay.

        v <- momentum * v + g + weight_decay * theta
        theta <- theta - learning_rate * v

    Shuffling is driven by `seed`, so equal inputs give bit-identical outputs.

    Args:
        arch: Task model architecture
        init: Starting parameters
        data: Training rows (real and replayed)
        cfg: Optimizer settings
        anchor: Model the alignment term pulls towards
        previous_classes: Labels the alignment term applies to
        lambda_align: Alignment weight
        seed: Shuffle seed
        prox_center: FedProx centre
        prox_mu: FedProx coefficient
        on_epoch: Called with (epoch, full-data objective) after every epoch

    Returns:
        Trained parameters

    Raises:
        TrainingError: the objective or the parameters became non-finite
    """
    init.check_arch(arch)
    if len(data) == 0:
        raise ContractViolation("Cannot train on an empty batch")
    _check_features(arch, data.features)
    data.check_labels(arch.num_classes)
    anchor_logits = _anchor_logits(arch, anchor, data.features, previous_classes, lambda_align)
    mask = _alignment_mask(data.labels, previous_classes)
    center = None
    if prox_center is not None:
        prox_center.check_arch(arch)
        center = prox_center.values

    rng = np.random.default_rng(seed)
    theta = np.array(init.values, copy=True)
    velocity = np.zeros_like(theta)
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            index = order[start : start + cfg.batch_size]
            loss, gradient = _objective(
                arch,
                theta,
                data.features[index],
                data.labels[index],
                None if anchor_logits is None else anchor_logits[index],
                mask[index],
                lambda_align,
                center,
                prox_mu,
            )
            if not np.isfinite(loss) or not np.all(np.isfinite(gradient)):
                raise TrainingError("Local objective diverged", epoch)
            velocity = cfg.momentum * velocity + gradient + cfg.weight_decay * theta
            theta = theta - cfg.learning_rate * velocity
        if not np.all(np.isfinite(theta)):
            raise TrainingError("Parameters became non-finite", epoch)
        if on_epoch is not None:
            full_loss, _ = _objective(
                arch, theta, data.features, data.labels, anchor_logits, mask, lambda_align, center, prox_mu
            )
            if not np.isfinite(full_loss):
                raise TrainingError("Local objective diverged", epoch)
            on_epoch(epoch, full_loss)
    return init.replace(theta)


def mix_params(params_list: Sequence[ParamVector], weights: AggregationWeights) -> ParamVector:
    """
    Convex combination sum_j w_j * theta_j.

    Raises:
        ContractViolation: empty list or length mismatch
        ArchitectureError: fingerprints differ
    """
    if not params_list:
        raise ContractViolation("Cannot mix an empty parameter list")
    if len(weights) != len(params_list):
        raise ContractViolation(f"{len(weights)} weights for {len(params_list)} parameter vectors")
    fingerprint = params_list[0].arch_fingerprint
    size = len(params_list[0])
    for params in params_list:
        if params.arch_fingerprint != fingerprint or len(params) != size:
            raise ArchitectureError("Cannot mix parameters of different architectures")
    stacked = np.stack([params.values for params in params_list])
    return ParamVector(weights.weights @ stacked, fingerprint)


def accuracy(arch: ModelArch, params: ParamVector, batch: LabeledBatch) -> float:
    """Fraction of rows whose argmax logit equals the label."""
    if len(batch) == 0:
        raise ContractViolation("Accuracy of an empty batch is undefined")
    return float(np.mean(predict(arch, params, batch.features) == batch.labels))
