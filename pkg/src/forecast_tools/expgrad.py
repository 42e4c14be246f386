"""Exponentiated-gradient linear predictor over expert advice.

Before each game the weights are retrained from uniform on all earlier games:
a few chronological passes of multiplicative quadratic-loss updates, keeping
whichever snapshot (uniform included) has the lowest training loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .aggregators import Aggregator
from .core import DomainError, PredictionRow, RosterIndex, check_outcome

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class ExpGradConfig:
    passes: int = 3
    learning_rate: float = 0.1

    def __post_init__(self) -> None:
        if int(self.passes) < 1:
            raise DomainError(f"passes 必须 ≥ 1: {self.passes}")
        if not float(self.learning_rate) > 0:
            raise DomainError(f"learning_rate 必须为正: {self.learning_rate}")
        self.passes = int(self.passes)
        self.learning_rate = float(self.learning_rate)


def uniform_weights(n: int) -> np.ndarray:
    if n < 1:
        raise DomainError("至少需要 1 位专家")
    return np.full(n, 1.0 / n)


def eg_update(w: np.ndarray, x: np.ndarray, y: int, lr: float) -> np.ndarray:
    """One multiplicative step ``w_i <- w_i exp(2 x_i (y - p) lr)``, renormalized.

    ``x`` already has missing advice filled with 0.5.
    """
    y = check_outcome(y)
    p = float(np.dot(w, x) / w.sum())
    updated = w * np.exp(2.0 * x * (y - p) * lr)
    return updated / updated.sum()


def eg_predict(w: np.ndarray, x: np.ndarray) -> float:
    return min(1.0, max(0.0, float(np.dot(w, x))))


def training_loss(w: np.ndarray, features: np.ndarray, outcomes: np.ndarray) -> float:
    return float(np.square(features @ w - outcomes).sum())


def eg_train(
    features: np.ndarray, outcomes: np.ndarray, config: ExpGradConfig | None = None
) -> np.ndarray:
    """Best weight snapshot over ``config.passes`` chronological passes.

    ``features`` is games x experts with missing advice filled with 0.5; the
    uniform starting vector is one of the candidates.
    """
    config = config or ExpGradConfig()
    w = uniform_weights(features.shape[1])
    best, best_loss = w, training_loss(w, features, outcomes)
    for n_pass in range(1, config.passes + 1):
        for x, y in zip(features, outcomes):
            w = eg_update(w, x, int(y), config.learning_rate)
        loss = training_loss(w, features, outcomes)
        logger.debug("第 %s 遍训练损失 %.6f", n_pass, loss)
        if loss < best_loss:
            best, best_loss = w, loss
    return best


class ExpGradAggregator(Aggregator):
    def __init__(self, config: ExpGradConfig | None = None) -> None:
        super().__init__()
        self.config = config or ExpGradConfig()
        self.index = RosterIndex(())
        self.weights = np.zeros(0)
        self._features: list[np.ndarray] = []
        self._outcomes: list[int] = []

    @property
    def name(self) -> str:
        return f"expgrad:{self.config.passes}:{self.config.learning_rate:g}"

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self.index = RosterIndex(roster)
        self.weights = uniform_weights(len(roster))
        self._features = []
        self._outcomes = []

    def _predict(self, row: PredictionRow) -> float:
        return eg_predict(self.weights, self.index.vector(row, fill=0.5))

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        self._features.append(self.index.vector(row, fill=0.5))
        self._outcomes.append(outcome)
        self.weights = eg_train(
            np.vstack(self._features), np.asarray(self._outcomes, dtype=float), self.config
        )


__all__ = [
    "ExpGradAggregator",
    "ExpGradConfig",
    "eg_predict",
    "eg_train",
    "eg_update",
    "training_loss",
    "uniform_weights",
]
