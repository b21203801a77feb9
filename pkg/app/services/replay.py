"""
Replay service
Label accounting, the local distribution reconstruction plan and the
per-class density sub-models that generate replay data
Reference: https://scikit-learn.org/stable/modules/mixture.html
"""
import logging
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from app.core.exceptions import ContractViolation, ReplayError
from app.core.seeding import seed32
from app.models.batch import LabeledBatch
from app.models.generator import (
    VARIANCE_FLOOR,
    AuxiliaryModel,
    FitBudget,
    GeneratorKind,
    GeneratorParams,
    ReconstructionPlan,
)
from app.models.labels import LabelCountVector

logger = logging.getLogger(__name__)

INIT_ITERATIONS = 50
TRANSFER_ITERATIONS = 5

_LOG_2PI = np.log(2 * np.pi)


def accumulate(y_hist: LabelCountVector, y_t: LabelCountVector) -> LabelCountVector:
    """Elementwise sum of two count vectors."""
    return y_hist + y_t


def reconstruction_plan(y_cum: LabelCountVector, y_t: LabelCountVector) -> ReconstructionPlan:
    """
    Replay counts that restore the cumulative label proportions.

    The cumulative distribution is shrunk by s = min_c Y_t[c] / Y_cum[c] over the current
    classes, so exactly one current class (the reference, lowest id on ties) needs no
    supplement. Scaled counts are floored, reduced by the real counts and capped at the
    largest current real count.

    Args:
        y_cum: Cumulative real counts, current task included
        y_t: Real counts of the current task

    Returns:
        ReconstructionPlan

    Raises:
        ContractViolation: y_t is empty or exceeds y_cum somewhere
    """
    if not y_t:
        raise ContractViolation("Current label counts are all zero")
    if not y_cum.dominates(y_t):
        raise ContractViolation("Cumulative counts must include the current task")

    reference = min(y_t.support(), key=lambda c: (Fraction(y_t[c], y_cum[c]), c))
    ref_now, ref_cum = y_t[reference], y_cum[reference]
    cap = y_t.max_count()
    counts = {}
    for class_id in y_cum.support():
        # floor(s * Y_cum[c]) in exact integer arithmetic
        scaled = ref_now * y_cum[class_id] // ref_cum
        counts[class_id] = min(max(0, scaled - y_t[class_id]), cap)
    return ReconstructionPlan(
        generate_counts=LabelCountVector(counts),
        scale_factor=ref_now / ref_cum,
        reference_class=reference,
        cap=cap,
    )


def naive_plan(y_cum: LabelCountVector, y_t: LabelCountVector) -> ReconstructionPlan:
    """Unscaled supplement: every class topped up to its cumulative count, capped at max(Y_t)."""
    if not y_t:
        raise ContractViolation("Current label counts are all zero")
    if not y_cum.dominates(y_t):
        raise ContractViolation("Cumulative counts must include the current task")
    cap = y_t.max_count()
    counts = {c: min(y_cum[c] - y_t[c], cap) for c in y_cum.support()}
    return ReconstructionPlan(LabelCountVector(counts), 1.0, -1, cap)


def component_log_densities(params: GeneratorParams, data: np.ndarray) -> np.ndarray:
    """(n, k) matrix of log(w_k) + log N(x_n; mu_k, diag(var_k))."""
    diff = data[:, None, :] - params.means[None, :, :]
    log_det = np.sum(np.log(params.variances), axis=1)
    mahalanobis = np.sum(diff**2 / params.variances[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    return log_weights[None, :] - 0.5 * (params.feature_dim * _LOG_2PI + log_det[None, :] + mahalanobis)


def log_likelihood(params: GeneratorParams, data: np.ndarray) -> float:
    """Total log-likelihood of the rows under the mixture."""
    return float(np.sum(logsumexp(component_log_densities(params, data), axis=1)))


def _m_step(data: np.ndarray, resp: np.ndarray, variance_floor: float, previous: Optional[GeneratorParams]):
    nk = resp.sum(axis=0) + 10 * np.finfo(np.float64).eps
    means = resp.T @ data / nk[:, None]
    variances = resp.T @ (data**2) / nk[:, None] - means**2
    if previous is not None:
        # a component that lost all its rows keeps its location
        empty = resp.sum(axis=0) < 1e-12
        means[empty] = previous.means[empty]
        variances[empty] = previous.variances[empty]
    variances = np.maximum(variances, variance_floor)
    weights = nk / nk.sum()
    return means, variances, weights


def run_em(
    data: np.ndarray,
    start: GeneratorParams,
    iterations: int,
    variance_floor: float = VARIANCE_FLOOR,
) -> tuple[GeneratorParams, list[float]]:
    """
    Expectation-maximization for a diagonal Gaussian mixture.

    Args:
        data: (n, d) rows
        start: Initial parameters
        iterations: Number of E/M passes
        variance_floor: Lower bound applied to every variance

    Returns:
        Final parameters and the log-likelihood before the first and after every iteration
    """
    params = start
    log_prob = component_log_densities(params, data)
    trace = [float(np.sum(logsumexp(log_prob, axis=1)))]
    for _ in range(iterations):
        log_resp = log_prob - logsumexp(log_prob, axis=1, keepdims=True)
        means, variances, weights = _m_step(data, np.exp(log_resp), variance_floor, params)
        params = GeneratorParams(
            kind=start.kind,
            means=means,
            variances=variances,
            weights=weights,
            fit_sample_count=len(data),
        )
        log_prob = component_log_densities(params, data)
        trace.append(float(np.sum(logsumexp(log_prob, axis=1))))
    return params, trace


def _diag_fit(data: np.ndarray, variance_floor: float, downgraded: bool) -> GeneratorParams:
    return GeneratorParams(
        kind=GeneratorKind.DIAG_GAUSSIAN,
        means=data.mean(axis=0, keepdims=True),
        variances=np.maximum(data.var(axis=0, keepdims=True), variance_floor),
        weights=np.ones(1),
        fit_sample_count=len(data),
        downgraded=downgraded,
    )


def _kmeans_start(data: np.ndarray, n_components: int, variance_floor: float, seed: int) -> GeneratorParams:
    centers, _ = kmeans_plusplus(data, n_clusters=n_components, random_state=seed32(seed))
    distances = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((len(data), n_components))
    resp[np.arange(len(data)), np.argmin(distances, axis=1)] = 1.0
    means, variances, weights = _m_step(data, resp, variance_floor, None)
    # seed centres with no assigned rows keep the centre itself
    empty = resp.sum(axis=0) == 0
    means[empty] = centers[empty]
    variances[empty] = np.maximum(data.var(axis=0), variance_floor)
    return GeneratorParams(GeneratorKind.GMM, means, variances, weights, fit_sample_count=len(data))


def can_transfer(
    warm_start: Optional[GeneratorParams], kind: GeneratorKind, n_components: int, feature_dim: int
) -> bool:
    """True if `warm_start` has the shape a transfer fit of this kind needs."""
    if warm_start is None or warm_start.feature_dim != feature_dim:
        return False
    if kind == GeneratorKind.DIAG_GAUSSIAN:
        return True
    return warm_start.kind == GeneratorKind.GMM and warm_start.n_components == n_components


def fit_submodel(
    data: np.ndarray,
    warm_start: Optional[GeneratorParams] = None,
    budget: FitBudget = FitBudget.INIT,
    kind: GeneratorKind = GeneratorKind.GMM,
    n_components: int = 3,
    variance_floor: float = VARIANCE_FLOOR,
    init_iterations: int = INIT_ITERATIONS,
    transfer_iterations: int = TRANSFER_ITERATIONS,
    seed: int = 0,
) -> GeneratorParams:
    """
    Fit one class's density sub-model.

    diag_gaussian is the closed-form mean and floored population variance.
    gmm runs EM: `init_iterations` from k-means++ seeding, or `transfer_iterations`
    from `warm_start`. With fewer rows than components the fit falls back to
    diag_gaussian and is flagged as downgraded.

    Raises:
        ContractViolation: no rows, or a transfer budget without a compatible warm start
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ContractViolation("Sub-model fit needs a nonempty (n, d) matrix")
    if budget == FitBudget.TRANSFER and warm_start is None:
        raise ContractViolation("Transfer fit requires a warm start")
    if kind == GeneratorKind.DIAG_GAUSSIAN:
        return _diag_fit(data, variance_floor, downgraded=False)
    if len(data) < n_components:
        logger.debug(f"Only {len(data)} rows for {n_components} components, falling back to diag_gaussian")
        return _diag_fit(data, variance_floor, downgraded=True)

    if budget == FitBudget.TRANSFER:
        if not can_transfer(warm_start, kind, n_components, data.shape[1]):
            raise ContractViolation("Warm start is incompatible with the requested mixture")
        start, iterations = warm_start, transfer_iterations
    else:
        start, iterations = _kmeans_start(data, n_components, variance_floor, seed), init_iterations
    params, trace = run_em(data, start, iterations, variance_floor)
    logger.debug(f"EM {budget.value} fit on {len(data)} rows: log-likelihood {trace[0]:.4f} -> {trace[-1]:.4f}")
    return params


def sample_replay(aux: AuxiliaryModel, plan: ReconstructionPlan, seed: int) -> LabeledBatch:
    """
    Draw the planned number of synthetic rows per class.

    Raises:
        ReplayError: a class with a positive count has no sub-model
    """
    rng = np.random.default_rng(seed)
    parts = []
    for class_id, count in plan.generate_counts.counts.items():
        submodel = aux.get(class_id)
        if submodel is None:
            raise ReplayError(class_id)
        features = submodel.sample(count, rng)
        parts.append(LabeledBatch(features, np.full(count, class_id), np.ones(count, dtype=bool)))
    return LabeledBatch.concat(parts)
