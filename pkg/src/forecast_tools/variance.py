"""Variance aggregation: each expert is a Gaussian around the event's true
probability with its own standard deviation.

Given the standard deviations, the maximum-likelihood probability of an event
is the inverse-variance weighted mean of the advice. Given the event
probabilities, each expert's deviation is the RMS distance of its advice from
them. Alternating the two (an EM-style sweep) over every past event fits both;
each new event warm-starts from the previous fit. Outcomes are never used.

By default an expert's deviation is measured against the consensus of the
*other* experts at each event. Measured against a consensus it contributes to,
a low-sigma expert pulls the consensus toward itself and its sigma shrinks
toward the floor within a few events.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aggregators import Aggregator
from .core import DomainError, NoAdviceError, PredictionRow, RosterIndex

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
INITIAL_SIGMA = 0.25


@dataclass(slots=True)
class VarianceConfig:
    sigma_floor: float = SIGMA_FLOOR
    initial_sigma: float = INITIAL_SIGMA
    em_tol: float = 1e-6
    max_sweeps: int = 50
    # False: deviations against the full consensus, the plain EM step
    leave_one_out: bool = True
    # below this many events an expert keeps initial_sigma
    min_participation: int = 1

    def __post_init__(self) -> None:
        if not self.sigma_floor > 0:
            raise DomainError(f"sigma_floor 必须为正: {self.sigma_floor}")
        if self.initial_sigma < self.sigma_floor:
            raise DomainError("initial_sigma 不能小于 sigma_floor")
        if self.max_sweeps < 1:
            raise DomainError(f"max_sweeps 必须 ≥ 1: {self.max_sweeps}")
        if self.min_participation < 1:
            raise DomainError(f"min_participation 必须 ≥ 1: {self.min_participation}")


@dataclass(frozen=True, slots=True)
class VarianceState:
    sigma: np.ndarray
    consensus: np.ndarray
    participation: np.ndarray
    clamped: bool = False

    @classmethod
    def initial(cls, n_experts: int, config: VarianceConfig | None = None) -> VarianceState:
        config = config or VarianceConfig()
        return cls(
            sigma=np.full(n_experts, config.initial_sigma),
            consensus=np.zeros(0),
            participation=np.zeros(n_experts, dtype=int),
        )


class PredictionHistory:
    """Dense matrix of all non-empty prediction rows seen so far."""

    def __init__(self, index: RosterIndex, capacity: int = 64) -> None:
        self.index = index
        n = len(index)
        self._values = np.zeros((capacity, n))
        self._mask = np.zeros((capacity, n), dtype=bool)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @classmethod
    def from_rows(cls, roster: Sequence[str], rows: Sequence[PredictionRow]) -> PredictionHistory:
        history = cls(RosterIndex(roster), capacity=max(len(rows), 1))
        for row in rows:
            history.append(row)
        return history

    def append(self, row: PredictionRow) -> bool:
        """Record a row; empty rows carry no information and are skipped."""
        if not row:
            return False
        if self._size == self._values.shape[0]:
            self._values = np.concatenate([self._values, np.zeros_like(self._values)])
            self._mask = np.concatenate([self._mask, np.zeros_like(self._mask)])
        self._values[self._size] = self.index.vector(row, fill=0.0)
        self._mask[self._size] = self.index.mask(row)
        self._size += 1
        return True

    @property
    def values(self) -> np.ndarray:
        return self._values[: self._size]

    @property
    def mask(self) -> np.ndarray:
        return self._mask[: self._size]


def ml_probability(row: PredictionRow, sigma: Mapping[str, float]) -> float:
    """Inverse-variance weighted mean of the present experts' advice."""
    if not row:
        raise NoAdviceError("本场比赛没有任何专家预测")
    num = 0.0
    den = 0.0
    for expert_id, prob in row.items():
        s = float(sigma[expert_id])
        if not s > 0.0:
            raise DomainError(f"专家 {expert_id} 的 sigma 必须为正: {s}")
        w = 1.0 / (s * s)
        num += w * prob
        den += w
    return min(1.0, max(0.0, num / den))


def estimate_sigma(
    consensus: Sequence[float],
    predictions: Sequence[Optional[float]],
    config: VarianceConfig | None = None,
) -> float:
    """RMS deviation of one expert from the consensus over the events it
    predicted (``None`` marks a skipped event), floored at ``sigma_floor``."""
    config = config or VarianceConfig()
    if len(consensus) != len(predictions):
        raise DomainError("consensus 与预测长度不一致")
    deviations = [(c - p) ** 2 for c, p in zip(consensus, predictions) if p is not None]
    if not deviations:
        return config.initial_sigma
    return max(config.sigma_floor, math.sqrt(math.fsum(deviations) / len(deviations)))


def _consensus(
    values: np.ndarray, mask: np.ndarray, sigma: np.ndarray
) -> tuple[np.ndarray, bool]:
    weights = 1.0 / np.square(sigma)
    num = values @ weights  # values are 0 where missing
    den = mask @ weights
    raw = num / den
    clipped = np.clip(raw, 0.0, 1.0)
    return clipped, bool(np.any(clipped != raw))


def _leave_one_out(
    values: np.ndarray, mask: np.ndarray, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per (event, expert): the weighted mean of the other present experts.

    Entries where the expert is absent or alone are masked out.
    """
    weights = 1.0 / np.square(sigma)
    num = values @ weights
    den = mask @ weights
    usable = mask & (mask.sum(axis=1) > 1)[:, None]
    others = np.where(usable, den[:, None] - weights[None, :], 1.0)
    reference = np.where(usable, (num[:, None] - values * weights[None, :]) / others, 0.0)
    return np.clip(reference, 0.0, 1.0), usable


def _sigma(
    consensus: np.ndarray,
    values: np.ndarray,
    mask: np.ndarray,
    sigma: np.ndarray,
    config: VarianceConfig,
) -> tuple[np.ndarray, np.ndarray, bool]:
    participation = mask.sum(axis=0)
    if config.leave_one_out:
        reference, usable = _leave_one_out(values, mask, sigma)
    else:
        reference, usable = consensus[:, None], mask
    squared = np.where(usable, np.square(reference - values), 0.0).sum(axis=0)
    counts = usable.sum(axis=0)
    seen = counts >= config.min_participation
    raw = np.full(values.shape[1], config.initial_sigma)
    raw[seen] = np.sqrt(squared[seen] / counts[seen])
    floored = np.maximum(raw, config.sigma_floor)
    return floored, participation, bool(np.any(raw[seen] < config.sigma_floor))


def em_sweep(
    state: VarianceState, history: PredictionHistory, config: VarianceConfig | None = None
) -> VarianceState:
    """Recompute every consensus value from the current sigma, then every sigma
    from the new consensus (or, with ``leave_one_out``, from each event's
    consensus of the other experts under the same current sigma)."""
    config = config or VarianceConfig()
    if len(history) == 0:
        raise DomainError("em_sweep 至少需要 1 个事件")
    values, mask = history.values, history.mask
    consensus, clip_fired = _consensus(values, mask, state.sigma)
    sigma, participation, floor_fired = _sigma(consensus, values, mask, state.sigma, config)
    return VarianceState(
        sigma=sigma,
        consensus=consensus,
        participation=participation,
        clamped=clip_fired or floor_fired,
    )


def log_likelihood(state: VarianceState, history: PredictionHistory) -> float:
    """Gaussian log-likelihood of the history under ``state`` (constants dropped)."""
    values, mask = history.values, history.mask
    if state.consensus.shape[0] != values.shape[0]:
        raise DomainError("state 的 consensus 与历史事件数不一致")
    residual = np.square(state.consensus[:, None] - values) / (2.0 * np.square(state.sigma))
    terms = np.where(mask, -residual - np.log(state.sigma), 0.0)
    return float(terms.sum())


def fit(
    history: PredictionHistory,
    config: VarianceConfig | None = None,
    state: VarianceState | None = None,
) -> VarianceState:
    """Sweep until the largest sigma change drops below ``em_tol``."""
    config = config or VarianceConfig()
    current = state or VarianceState.initial(len(history.index), config)
    clamped_sweeps = 0
    for sweep in range(1, config.max_sweeps + 1):
        updated = em_sweep(current, history, config)
        delta = float(np.max(np.abs(updated.sigma - current.sigma)))
        clamped_sweeps += updated.clamped
        current = updated
        if delta < config.em_tol:
            logger.debug("EM 在第 %s 轮收敛，max|Δσ|=%.3g", sweep, delta)
            break
    else:
        logger.debug("EM 达到最大轮数 %s 仍未收敛", config.max_sweeps)
    if clamped_sweeps:
        logger.warning(
            "EM 有 %s 轮触发截断（sigma 下限或 [0,1] 裁剪），事件数 %s",
            clamped_sweeps,
            len(history),
        )
    return current


def _sigma_of(state: VarianceState, index: RosterIndex) -> dict[str, float]:
    return {expert_id: float(state.sigma[i]) for i, expert_id in enumerate(index.roster)}


def variance_predict(state: VarianceState, row: PredictionRow, index: RosterIndex) -> float:
    return ml_probability(row, _sigma_of(state, index))


def variance_top_k_predict(
    state: VarianceState, row: PredictionRow, k: int, index: RosterIndex
) -> float:
    """ML probability over the present experts among the ``k`` least-deviating
    ones; ties in sigma go to roster order, and when every sigma is equal all
    present experts are used."""
    if k < 1:
        raise DomainError(f"k 必须为正整数: {k}")
    if not row:
        raise NoAdviceError("本场比赛没有任何专家预测")
    sigma = _sigma_of(state, index)
    if np.all(state.sigma == state.sigma[0]):
        return ml_probability(row, sigma)
    order = np.argsort(state.sigma, kind="stable")[:k]
    best = frozenset(index.roster[i] for i in order)
    selected = row.restrict(best)
    if not selected:
        logger.debug("方差最小的 %s 位专家均未预测本场，退回全体", k)
        return ml_probability(row, sigma)
    return ml_probability(selected, sigma)


class VarianceAggregator(Aggregator):
    def __init__(self, config: VarianceConfig | None = None, top_k: int | None = None) -> None:
        super().__init__()
        if top_k is not None and top_k < 1:
            raise DomainError(f"k 必须为正整数: {top_k}")
        self.config = config or VarianceConfig()
        self.top_k = top_k
        self.index = RosterIndex(())
        self.history = PredictionHistory(self.index)
        self.state = VarianceState.initial(0, self.config)

    @property
    def name(self) -> str:
        return "variance" if self.top_k is None else f"variance-top:{self.top_k}"

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self.index = RosterIndex(roster)
        self.history = PredictionHistory(self.index)
        self.state = VarianceState.initial(len(roster), self.config)

    def _predict(self, row: PredictionRow) -> float:
        if self.top_k is None:
            return variance_predict(self.state, row, self.index)
        return variance_top_k_predict(self.state, row, self.top_k, self.index)

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        if self.history.append(row):
            self.state = fit(self.history, self.config, self.state)


__all__ = [
    "INITIAL_SIGMA",
    "PredictionHistory",
    "SIGMA_FLOOR",
    "VarianceAggregator",
    "VarianceConfig",
    "VarianceState",
    "em_sweep",
    "estimate_sigma",
    "fit",
    "log_likelihood",
    "ml_probability",
    "variance_predict",
    "variance_top_k_predict",
]
