"""Domain types for games and expert predictions, plus the losses and the
contest scoring rule shared by every aggregator."""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Optional

import numpy as np


class DomainError(ValueError):
    """Raised when a probability, outcome or sequence is outside its domain."""


class NoAdviceError(ValueError):
    """Raised when a game has no expert prediction to aggregate."""


def check_probability(p: float, *, what: str = "probability") -> float:
    value = float(p)
    if not math.isfinite(value) or value < 0.0 or value > 1.0:
        raise DomainError(f"{what} 超出 [0,1] 范围: {p!r}")
    return value


def check_outcome(y: int) -> int:
    if y in (0, 1) and not isinstance(y, str):
        return int(y)
    raise DomainError(f"比赛结果必须为 0 或 1: {y!r}")


def season_sort_key(season: str) -> tuple[int, int, str]:
    """Numeric seasons sort by value, anything else lexicographically after."""
    if season.isdigit():
        return (0, int(season), season)
    return (1, 0, season)


@dataclass(frozen=True, slots=True)
class Game:
    season: str
    game_id: int
    outcome: Optional[int] = None
    true_prob: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "season", str(self.season))
        object.__setattr__(self, "game_id", int(self.game_id))
        if self.outcome is not None:
            object.__setattr__(self, "outcome", check_outcome(self.outcome))
        if self.true_prob is not None:
            object.__setattr__(
                self, "true_prob", check_probability(self.true_prob, what="true_prob")
            )

    @property
    def key(self) -> tuple[str, int]:
        return (self.season, self.game_id)

    def sort_key(self) -> tuple[tuple[int, int, str], int]:
        return (season_sort_key(self.season), self.game_id)


@dataclass(frozen=True, slots=True)
class PredictionRow(Mapping[str, float]):
    """Probabilities of the experts who predicted one game, keyed by expert id.

    Experts absent from the mapping are missing for that game. Iteration is
    in ascending expert id order.
    """

    probs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cleaned = {
            str(expert_id): check_probability(prob, what=f"专家 {expert_id} 的预测")
            for expert_id, prob in sorted(self.probs.items())
        }
        object.__setattr__(self, "probs", MappingProxyType(cleaned))

    def __getitem__(self, expert_id: str) -> float:
        return self.probs[expert_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.probs)

    def __len__(self) -> int:
        return len(self.probs)

    def restrict(self, expert_ids: set[str] | frozenset[str]) -> PredictionRow:
        return PredictionRow({k: v for k, v in self.probs.items() if k in expert_ids})


@dataclass(frozen=True, slots=True)
class Dataset:
    """Chronological games with one prediction row per game.

    Construction checks alignment, ordering and roster membership; the
    non-empty requirement lives in :meth:`require_nonempty` so that an empty
    dataset can still be serialized.
    """

    roster: tuple[str, ...]
    games: tuple[Game, ...]
    predictions: tuple[PredictionRow, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "roster", tuple(str(e) for e in self.roster))
        object.__setattr__(self, "games", tuple(self.games))
        object.__setattr__(self, "predictions", tuple(self.predictions))
        if len(self.games) != len(self.predictions):
            raise DomainError(
                f"比赛数 {len(self.games)} 与预测行数 {len(self.predictions)} 不一致"
            )
        if len(set(self.roster)) != len(self.roster):
            raise DomainError("专家名单中存在重复 ID")
        keys = [game.sort_key() for game in self.games]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise DomainError("比赛必须按 (season, game_id) 严格递增排列")
        known = set(self.roster)
        for game, row in zip(self.games, self.predictions):
            unknown = set(row) - known
            if unknown:
                raise DomainError(
                    f"比赛 {game.key} 引用了名单外的专家: {sorted(unknown)}"
                )

    def __len__(self) -> int:
        return len(self.games)

    def require_nonempty(self) -> Dataset:
        if not self.games or not self.roster:
            raise DomainError("数据集至少需要 1 场比赛与 1 位专家")
        return self

    def seasons(self) -> list[str]:
        seen: dict[str, None] = {}
        for game in self.games:
            seen.setdefault(game.season, None)
        return list(seen)

    def outcomes(self) -> list[int]:
        missing = [game.key for game in self.games if game.outcome is None]
        if missing:
            raise DomainError(f"以下比赛缺少结果: {missing[:5]}")
        return [int(game.outcome) for game in self.games]  # type: ignore[arg-type]


class RosterIndex:
    """Maps expert ids to dense column positions for vectorized algorithms."""

    def __init__(self, roster: Sequence[str]) -> None:
        self.roster = tuple(roster)
        self._position = {expert_id: i for i, expert_id in enumerate(self.roster)}

    def __len__(self) -> int:
        return len(self.roster)

    def __contains__(self, expert_id: object) -> bool:
        return expert_id in self._position

    def position(self, expert_id: str) -> int:
        return self._position[expert_id]

    def vector(self, row: PredictionRow, fill: float = math.nan) -> np.ndarray:
        values = np.full(len(self.roster), fill, dtype=float)
        for expert_id, prob in row.items():
            values[self._position[expert_id]] = prob
        return values

    def mask(self, row: PredictionRow) -> np.ndarray:
        present = np.zeros(len(self.roster), dtype=bool)
        for expert_id in row:
            present[self._position[expert_id]] = True
        return present


def quadratic_loss(p: float, y: int) -> float:
    p = check_probability(p)
    y = check_outcome(y)
    return (p - y) ** 2


def absolute_loss(p: float, y: int) -> float:
    p = check_probability(p)
    y = check_outcome(y)
    return abs(p - y)


def log_loss(p: float, y: int) -> float:
    """Natural-log loss; ``math.inf`` for a certain prediction that missed."""
    p = check_probability(p)
    y = check_outcome(y)
    q = p if y == 1 else 1.0 - p
    if q == 0.0:
        return math.inf
    return -math.log(q)


def prob_score(p: float, y: int) -> float:
    """Contest score ``100 - 400 (p - y)^2``, in [-300, 100]."""
    return 100.0 - 400.0 * quadratic_loss(p, y)


def cumulative_score(preds: Sequence[float], outcomes: Sequence[int]) -> float:
    if len(preds) != len(outcomes):
        raise DomainError(f"预测数 {len(preds)} 与结果数 {len(outcomes)} 不一致")
    return math.fsum(prob_score(p, y) for p, y in zip(preds, outcomes))


__all__ = [
    "Dataset",
    "DomainError",
    "Game",
    "NoAdviceError",
    "PredictionRow",
    "RosterIndex",
    "absolute_loss",
    "check_outcome",
    "check_probability",
    "cumulative_score",
    "log_loss",
    "prob_score",
    "quadratic_loss",
    "season_sort_key",
]
