"""Multiplicative-weights experts algorithm with pluggable prediction and
update functions and two policies for experts who skip a game.

The algorithm keeps one weight per roster expert, predicts ``F(r)`` where
``r`` is the weighted average of the advice, and multiplies each expert's
weight by ``U(q)`` after the outcome, ``q`` being the expert's absolute loss.
When ``F`` respects :func:`prediction_interval` and ``U`` lies between
``beta**q`` and ``1 - (1 - beta) q``, the cumulative absolute loss never
exceeds :func:`loss_bound`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .aggregators import Aggregator
from .core import (
    DomainError,
    NoAdviceError,
    PredictionRow,
    RosterIndex,
    check_outcome,
    check_probability,
)

logger = logging.getLogger(__name__)


class PredictionFunction(str, Enum):
    VOVK = "vovk"
    PIECEWISE = "piecewise"
    IDENTITY = "identity"


class UpdateFunction(str, Enum):
    POWER = "power"
    EXP_NEG = "expneg"
    LINEAR = "linear"


class MissingPolicy(str, Enum):
    FILL_HALF = "fill"
    RELATIVE_WEIGHT = "relative"


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta 必须位于 (0,1): {beta!r}")
    return beta


@dataclass(slots=True)
class ExpertsConfig:
    beta: float = 0.75
    prediction_fn: PredictionFunction = PredictionFunction.VOVK
    update_fn: UpdateFunction = UpdateFunction.EXP_NEG
    missing_policy: MissingPolicy = MissingPolicy.RELATIVE_WEIGHT

    def __post_init__(self) -> None:
        self.beta = _check_beta(self.beta)
        self.prediction_fn = PredictionFunction(self.prediction_fn)
        self.update_fn = UpdateFunction(self.update_fn)
        self.missing_policy = MissingPolicy(self.missing_policy)


@dataclass(slots=True)
class WeightVector:
    """Normalized expert weights."""

    weights: np.ndarray

    @classmethod
    def uniform(cls, n: int) -> WeightVector:
        if n < 1:
            raise DomainError("至少需要 1 位专家")
        return cls(weights=np.full(n, 1.0 / n))

    def normalized(self) -> WeightVector:
        total = float(self.weights.sum())
        if not total > 0.0:
            raise DomainError("权重全部为 0，无法归一化")
        return WeightVector(weights=self.weights / total)


# ---------------------------------------------------------------------------
# prediction functions
# ---------------------------------------------------------------------------


def _denominator(beta: float) -> float:
    return 2.0 * math.log(2.0 / (1.0 + beta))


def prediction_interval(r: float, beta: float) -> tuple[float, float]:
    """Admissible range for ``F(r)``; raw values, not clamped to [0,1]."""
    r = check_probability(r, what="r")
    beta = _check_beta(beta)
    denom = _denominator(beta)
    lo = 1.0 + math.log((1.0 - r) * beta + r) / denom
    hi = -math.log(1.0 - r + r * beta) / denom
    return lo, hi


def predict_vovk(r: float, beta: float) -> float:
    r = check_probability(r, what="r")
    beta = _check_beta(beta)
    a = math.log(1.0 - r + r * beta)
    b = math.log((1.0 - r) * beta + r)
    # a + b < 0 on all of [0,1]
    return min(1.0, max(0.0, a / (a + b)))


def piecewise_width(beta: float) -> float:
    beta = _check_beta(beta)
    return (1.0 + beta) * math.log(2.0 / (1.0 + beta)) / (2.0 * (1.0 - beta))


def predict_piecewise(r: float, beta: float) -> float:
    r = check_probability(r, what="r")
    c = piecewise_width(beta)
    if r <= 0.5 - c:
        return 0.0
    if r >= 0.5 + c:
        return 1.0
    return min(1.0, max(0.0, 0.5 - (1.0 - 2.0 * r) / (4.0 * c)))


def predict_identity(r: float, beta: float | None = None) -> float:
    return check_probability(r, what="r")


_PREDICTION_FUNCTIONS = {
    PredictionFunction.VOVK: predict_vovk,
    PredictionFunction.PIECEWISE: predict_piecewise,
    PredictionFunction.IDENTITY: predict_identity,
}


# ---------------------------------------------------------------------------
# update functions
# ---------------------------------------------------------------------------


def _update_factors(q: np.ndarray, beta: float, update_fn: UpdateFunction) -> np.ndarray:
    if update_fn is UpdateFunction.POWER:
        return np.exp(q * math.log(beta))
    if update_fn is UpdateFunction.EXP_NEG:
        return np.exp(-beta * q)
    return 1.0 - (1.0 - beta) * q


def update_factor(q: float, beta: float, update_fn: UpdateFunction | str) -> float:
    q = check_probability(q, what="loss q")
    beta = _check_beta(beta)
    return float(_update_factors(np.asarray(q), beta, UpdateFunction(update_fn)))


def loss_bound(n_experts: int, best_loss: float, beta: float) -> float:
    """Worst-case cumulative absolute loss of the algorithm."""
    if n_experts < 1:
        raise DomainError(f"专家数必须 ≥ 1: {n_experts}")
    if best_loss < 0:
        raise DomainError(f"最佳专家损失不能为负: {best_loss}")
    beta = _check_beta(beta)
    return (math.log(n_experts) + best_loss * math.log(1.0 / beta)) / _denominator(
        beta
    )


# ---------------------------------------------------------------------------
# one round
# ---------------------------------------------------------------------------


def combine_advice(
    state: WeightVector, values: np.ndarray, present: np.ndarray, config: ExpertsConfig
) -> float:
    """Weighted average ``r`` of the advice under the configured missing policy."""
    if config.missing_policy is MissingPolicy.FILL_HALF:
        advice = np.where(present, values, 0.5)
        r = float(np.dot(state.weights, advice) / state.weights.sum())
    else:
        if not present.any():
            raise NoAdviceError("本场比赛没有任何专家预测")
        w = state.weights[present]
        total = float(w.sum())
        if total > 0.0:
            r = float(np.dot(w, values[present]) / total)
        else:
            logger.warning("参与专家权重下溢为 0，改用等权平均")
            r = float(values[present].mean())
    return min(1.0, max(0.0, r))


def experts_predict(
    state: WeightVector, values: np.ndarray, present: np.ndarray, config: ExpertsConfig
) -> float:
    r = combine_advice(state, values, present, config)
    return _PREDICTION_FUNCTIONS[config.prediction_fn](r, config.beta)


def experts_update(
    state: WeightVector,
    values: np.ndarray,
    present: np.ndarray,
    outcome: int,
    config: ExpertsConfig,
) -> WeightVector:
    y = check_outcome(outcome)
    weights = state.weights.copy()
    if config.missing_policy is MissingPolicy.FILL_HALF:
        advice = np.where(present, values, 0.5)
        weights *= _update_factors(np.abs(advice - y), config.beta, config.update_fn)
    else:
        if not present.any():
            return state
        factors = _update_factors(
            np.abs(values[present] - y), config.beta, config.update_fn
        )
        before = weights[present]
        after = before * factors
        if (~present).any() and before.sum() > 0.0:
            # absent experts keep their share of the total weight
            mean_factor = float(after.sum() / before.sum())
            weights[~present] *= mean_factor
        weights[present] = after
    return WeightVector(weights=weights).normalized()


class ExpertsAggregator(Aggregator):
    def __init__(self, config: ExpertsConfig | None = None) -> None:
        super().__init__()
        self.config = config or ExpertsConfig()
        self.index = RosterIndex(())
        self.state: WeightVector | None = None

    @property
    def name(self) -> str:
        c = self.config
        return (
            f"experts:{c.beta:g}:{c.prediction_fn.value}:"
            f"{c.update_fn.value}:{c.missing_policy.value}"
        )

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self.index = RosterIndex(roster)
        self.state = WeightVector.uniform(len(roster))

    def _predict(self, row: PredictionRow) -> float:
        assert self.state is not None, "bind() 尚未调用"
        values = self.index.vector(row, fill=0.5)
        present = self.index.mask(row)
        return check_probability(experts_predict(self.state, values, present, self.config))

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        assert self.state is not None, "bind() 尚未调用"
        values = self.index.vector(row, fill=0.5)
        present = self.index.mask(row)
        self.state = experts_update(self.state, values, present, outcome, self.config)


__all__ = [
    "ExpertsAggregator",
    "ExpertsConfig",
    "MissingPolicy",
    "PredictionFunction",
    "UpdateFunction",
    "WeightVector",
    "combine_advice",
    "experts_predict",
    "experts_update",
    "loss_bound",
    "piecewise_width",
    "predict_identity",
    "predict_piecewise",
    "predict_vovk",
    "prediction_interval",
    "update_factor",
]
