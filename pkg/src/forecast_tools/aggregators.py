"""The aggregator contract and the non-adaptive baselines."""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    NoAdviceError,
    PredictionRow,
    check_outcome,
    check_probability,
    prob_score,
)

logger = logging.getLogger(__name__)


class Aggregator(ABC):
    """Stateful online predictor.

    The harness calls :meth:`bind` once with the dataset roster, then for
    every game :meth:`predict` followed by :meth:`observe` with that game's
    outcome. ``observe`` is still called when ``predict`` raised
    :class:`NoAdviceError`.
    """

    def __init__(self) -> None:
        self._roster: tuple[str, ...] = ()
        self._pending: Optional[PredictionRow] = None

    @property
    @abstractmethod
    def name(self) -> str: ...

    @property
    def roster(self) -> tuple[str, ...]:
        return self._roster

    def bind(self, roster: Sequence[str]) -> None:
        self._roster = tuple(roster)
        self._pending = None
        self._on_bind(self._roster)

    def predict(self, row: PredictionRow) -> float:
        if self._pending is not None:
            raise RuntimeError(f"{self.name}: 上一场比赛尚未 observe")
        self._pending = row
        return self._predict(row)

    def observe(self, outcome: int) -> None:
        if self._pending is None:
            raise RuntimeError(f"{self.name}: observe 必须在 predict 之后调用")
        row, self._pending = self._pending, None
        self._observe(row, check_outcome(outcome))

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        pass

    @abstractmethod
    def _predict(self, row: PredictionRow) -> float: ...

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        pass

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


@dataclass(slots=True)
class ScoreLedger:
    """Running contest score and participation count of every expert."""

    scores: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    games_elapsed: int = 0

    @classmethod
    def for_roster(cls, roster: Sequence[str]) -> ScoreLedger:
        return cls(
            scores={expert_id: 0.0 for expert_id in roster},
            counts={expert_id: 0 for expert_id in roster},
        )

    def update(self, row: PredictionRow, outcome: int) -> None:
        for expert_id, prob in row.items():
            self.scores[expert_id] = self.scores.get(expert_id, 0.0) + prob_score(
                prob, outcome
            )
            self.counts[expert_id] = self.counts.get(expert_id, 0) + 1
        self.games_elapsed += 1

    def all_tied(self) -> bool:
        return len(set(self.scores.values())) <= 1

    def top(self, k: int) -> list[str]:
        """Best ``k`` experts by score, ties broken by ascending expert id."""
        ranked = sorted(self.scores, key=lambda e: (-self.scores[e], e))
        return ranked[:k]


def average_predict(row: PredictionRow) -> float:
    if not row:
        raise NoAdviceError("本场比赛没有任何专家预测")
    return math.fsum(row.values()) / len(row)


def average_top_k_predict(row: PredictionRow, ledger: ScoreLedger, k: int) -> float:
    if k < 1:
        raise ValueError(f"k 必须为正整数: {k}")
    if not row:
        raise NoAdviceError("本场比赛没有任何专家预测")
    if ledger.all_tied():
        return average_predict(row)
    selected = row.restrict(frozenset(ledger.top(k)))
    if not selected:
        logger.debug("top-%s 专家均未预测本场，退回全体平均", k)
        return average_predict(row)
    return average_predict(selected)


def constant_predict(c: float) -> float:
    return check_probability(c, what="常数预测")


def conservative_predict(row: PredictionRow, c: float = 0.65) -> float:
    """``c`` when the plain average favours the event, otherwise ``1 - c``."""
    c = check_probability(c, what="保守预测")
    return c if average_predict(row) > 0.5 else 1.0 - c


class AverageAggregator(Aggregator):
    @property
    def name(self) -> str:
        return "average"

    def _predict(self, row: PredictionRow) -> float:
        return average_predict(row)


class TopKAverageAggregator(Aggregator):
    def __init__(self, k: int) -> None:
        super().__init__()
        if k < 1:
            raise ValueError(f"k 必须为正整数: {k}")
        self.k = k
        self.ledger = ScoreLedger()

    @property
    def name(self) -> str:
        return f"average-top:{self.k}"

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self.ledger = ScoreLedger.for_roster(roster)

    def _predict(self, row: PredictionRow) -> float:
        return average_top_k_predict(row, self.ledger, self.k)

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        self.ledger.update(row, outcome)


class ConstantAggregator(Aggregator):
    def __init__(self, c: float) -> None:
        super().__init__()
        self.c = constant_predict(c)

    @property
    def name(self) -> str:
        return f"constant:{self.c:g}"

    def _predict(self, row: PredictionRow) -> float:
        return self.c


class ConservativeAggregator(Aggregator):
    def __init__(self, c: float = 0.65) -> None:
        super().__init__()
        self.c = check_probability(c, what="保守预测")

    @property
    def name(self) -> str:
        return f"conservative:{self.c:g}"

    def _predict(self, row: PredictionRow) -> float:
        return conservative_predict(row, self.c)


class ReplayAggregator(Aggregator):
    """Emits a precomputed prediction per game, in order."""

    def __init__(self, name: str, predictions: Sequence[float]) -> None:
        super().__init__()
        self._name = name
        self._predictions = [check_probability(p) for p in predictions]
        self._cursor = 0

    @property
    def name(self) -> str:
        return self._name

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self._cursor = 0

    def _predict(self, row: PredictionRow) -> float:
        if self._cursor >= len(self._predictions):
            raise IndexError(f"{self._name}: 预存预测已用完")
        return self._predictions[self._cursor]

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        self._cursor += 1


__all__ = [
    "Aggregator",
    "AverageAggregator",
    "ConservativeAggregator",
    "ConstantAggregator",
    "ReplayAggregator",
    "ScoreLedger",
    "TopKAverageAggregator",
    "average_predict",
    "average_top_k_predict",
    "conservative_predict",
    "constant_predict",
]
