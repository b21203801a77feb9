"""
Evaluation metrics
Instant average accuracy per round, its mean over rounds, and the average forgetting measure
"""
from typing import Sequence

import numpy as np

from app.core.exceptions import ContractViolation
from app.schemas.record import MetricSummary


def iaa(accuracies: Sequence[float], counts: Sequence[int]) -> float:
    """
    Instant average accuracy: client accuracies weighted by the training data each has seen.

        IAA = sum_i n_i * a_i / sum_i n_i
    """
    a = np.asarray(accuracies, dtype=np.float64)
    n = np.asarray(counts, dtype=np.float64)
    if a.size == 0 or a.shape != n.shape:
        raise ContractViolation("iaa needs one count per accuracy")
    total = float(n.sum())
    if total <= 0:
        raise ContractViolation("iaa is undefined when no client has data")
    return float(n @ a / total)


def aa(series: Sequence[float]) -> float:
    """Average accuracy: mean of the IAA series."""
    if len(series) == 0:
        raise ContractViolation("aa of an empty series")
    return float(np.mean(np.asarray(series, dtype=np.float64)))


def afm(series: Sequence[float]) -> float:
    """Average forgetting: mean over rounds 2..T of max(0, IAA[t-1] - IAA[t])."""
    if len(series) < 2:
        raise ContractViolation("afm needs at least two rounds")
    drops = -np.diff(np.asarray(series, dtype=np.float64))
    return float(np.mean(np.maximum(drops, 0.0)))


def summarize(series: Sequence[float]) -> MetricSummary:
    """AA and AFM of one run; AFM is 0 for single-round runs."""
    return MetricSummary(
        iaa_series=list(series),
        aa=aa(series),
        afm=afm(series) if len(series) >= 2 else 0.0,
    )
