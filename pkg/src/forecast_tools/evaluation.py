"""Online evaluation protocol: per-game scoring of aggregators, season
summaries ranked against the expert population, and the paired sign test."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .aggregators import Aggregator, average_predict
from .core import (
    Dataset,
    DomainError,
    Game,
    NoAdviceError,
    PredictionRow,
    log_loss,
    prob_score,
)

logger = logging.getLogger(__name__)

FALLBACK_PREDICTION = 0.5
TOP_EXPERT = "top-expert"

RESULT_COLUMNS = ["aggregator", "season", "game_id", "prediction", "prob_score"]
SUMMARY_COLUMNS = ["aggregator", "season", "total_score", "zero_one_error", "rank_vs_experts"]
EXPERT_COLUMNS = ["season", "expert_id", "total_score", "games", "zero_one_error"]
SIGNTEST_COLUMNS = ["aggregator_a", "aggregator_b", "wins", "losses", "ties", "p_value"]


class AggregatorOutputError(RuntimeError):
    """Raised when an aggregator emits something that is not a probability."""


@dataclass(slots=True)
class AggregatorRun:
    name: str
    predictions: np.ndarray
    scores: np.ndarray
    fallbacks: int = 0


@dataclass(slots=True)
class ExpertRecord:
    total: float = 0.0
    games: int = 0
    errors: int = 0

    def merged(self, other: ExpertRecord) -> ExpertRecord:
        return ExpertRecord(
            self.total + other.total, self.games + other.games, self.errors + other.errors
        )


@dataclass(frozen=True, slots=True)
class SeasonSummary:
    aggregator: str
    season: str
    total_score: float
    zero_one_error: float
    rank_vs_experts: int
    mean_log_loss: float = math.nan
    fallbacks: int = 0


@dataclass(frozen=True, slots=True)
class SignTestResult:
    aggregator_a: str
    aggregator_b: str
    wins: int
    losses: int
    ties: int
    p_value: float
    all_ties: bool = False


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _called(p: float) -> int:
    """0-1 call for a probability; exactly 0.5 calls the event."""
    return 1 if p >= 0.5 else 0


def zero_one_error(preds: Sequence[float], outcomes: Sequence[int]) -> float:
    if len(preds) != len(outcomes):
        raise DomainError(f"预测数 {len(preds)} 与结果数 {len(outcomes)} 不一致")
    if not len(preds):
        return 0.0
    wrong = sum(_called(p) != int(y) for p, y in zip(preds, outcomes))
    return wrong / len(preds)


def expert_rank(aggregator_total: float, expert_totals: Sequence[float]) -> int:
    """Competition rank: one plus the number of strictly better experts."""
    if not len(expert_totals):
        raise DomainError("专家总分列表为空")
    return 1 + sum(1 for total in expert_totals if total > aggregator_total)


def sign_test(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    names: tuple[str, str] = ("a", "b"),
) -> SignTestResult:
    """One-sided exact sign test that ``a`` scores higher than ``b``; ties dropped."""
    if len(scores_a) != len(scores_b):
        raise DomainError("两组得分长度不一致")
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    wins = int(np.sum(a > b))
    losses = int(np.sum(a < b))
    ties = int(len(a) - wins - losses)
    if wins + losses == 0:
        logger.warning("%s 与 %s 全部打平，p 值记为 1.0", *names)
        return SignTestResult(names[0], names[1], wins, losses, ties, 1.0, all_ties=True)
    p_value = float(stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
    return SignTestResult(names[0], names[1], wins, losses, ties, p_value)


# ---------------------------------------------------------------------------
# dataset views
# ---------------------------------------------------------------------------


def multi_year_filter(dataset: Dataset, seasons: Sequence[str]) -> Dataset:
    """Keep the chosen seasons and only experts who predicted in every one of them."""
    chosen = [str(season) for season in seasons]
    if not chosen:
        raise DomainError("至少需要指定一个赛季")
    unknown = sorted(set(chosen) - set(dataset.seasons()))
    if unknown:
        raise DomainError(f"未知赛季: {unknown}")

    active: dict[str, set[str]] = {season: set() for season in chosen}
    for game, row in zip(dataset.games, dataset.predictions):
        if game.season in active:
            active[game.season].update(row)
    keep = set.intersection(*active.values())

    games: list[Game] = []
    rows: list[PredictionRow] = []
    for game, row in zip(dataset.games, dataset.predictions):
        if game.season in active:
            games.append(game)
            rows.append(row.restrict(frozenset(keep)))
    roster = tuple(expert for expert in dataset.roster if expert in keep)
    logger.info("多年过滤：赛季 %s，保留 %s/%s 位专家", ",".join(chosen), len(roster), len(dataset.roster))
    return Dataset(roster=roster, games=tuple(games), predictions=tuple(rows))


def expert_season_records(dataset: Dataset) -> dict[str, dict[str, ExpertRecord]]:
    records: dict[str, dict[str, ExpertRecord]] = {season: {} for season in dataset.seasons()}
    for game, row, y in zip(dataset.games, dataset.predictions, dataset.outcomes()):
        season = records[game.season]
        for expert_id, prob in row.items():
            record = season.setdefault(expert_id, ExpertRecord())
            record.total += prob_score(prob, y)
            record.games += 1
            record.errors += int(_called(prob) != y)
    return records


def below_zero_average(dataset: Dataset) -> list[float]:
    """Hindsight diagnostic: per game, the average of the experts whose final
    season score ended below zero."""
    records = expert_season_records(dataset)
    losers = {
        season: frozenset(e for e, record in experts.items() if record.total < 0)
        for season, experts in records.items()
    }
    for season, experts in losers.items():
        if not experts:
            logger.warning("赛季 %s 没有最终得分为负的专家，退回全体平均", season)

    predictions: list[float] = []
    for game, row in zip(dataset.games, dataset.predictions):
        selected = row.restrict(losers[game.season]) if losers[game.season] else row
        if not selected:
            selected = row
        predictions.append(average_predict(selected) if selected else FALLBACK_PREDICTION)
    return predictions


# ---------------------------------------------------------------------------
# online run
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class EvalReport:
    games: tuple[Game, ...]
    runs: dict[str, AggregatorRun]
    expert_records: dict[str, dict[str, ExpertRecord]] = field(default_factory=dict)

    @property
    def outcomes(self) -> list[int]:
        return [int(game.outcome) for game in self.games]  # type: ignore[arg-type]

    def seasons(self) -> list[str]:
        return list(dict.fromkeys(game.season for game in self.games))

    def _season_slices(self) -> dict[str, np.ndarray]:
        seasons = np.array([game.season for game in self.games], dtype=object)
        return {season: np.flatnonzero(seasons == season) for season in self.seasons()}

    def _summary(
        self,
        run: AggregatorRun,
        label: str,
        idx: np.ndarray,
        population: Mapping[str, ExpertRecord],
    ) -> SeasonSummary:
        all_outcomes = self.outcomes
        outcomes = [all_outcomes[i] for i in idx]
        preds = [float(run.predictions[i]) for i in idx]
        total = math.fsum(float(run.scores[i]) for i in idx)
        rank = expert_rank(total, [r.total for r in population.values()]) if population else 1
        losses = [log_loss(p, y) for p, y in zip(preds, outcomes)]
        return SeasonSummary(
            aggregator=run.name,
            season=label,
            total_score=total,
            zero_one_error=zero_one_error(preds, outcomes),
            rank_vs_experts=rank,
            mean_log_loss=sum(losses) / len(losses) if losses else math.nan,
            fallbacks=run.fallbacks,
        )

    @staticmethod
    def _top_expert(label: str, population: Mapping[str, ExpertRecord]) -> SeasonSummary | None:
        if not population:
            return None
        best = sorted(population, key=lambda e: (-population[e].total, e))[0]
        record = population[best]
        return SeasonSummary(
            aggregator=TOP_EXPERT,
            season=label,
            total_score=record.total,
            zero_one_error=record.errors / record.games if record.games else 0.0,
            rank_vs_experts=1,
        )

    def summaries(self, include_top_expert: bool = True) -> list[SeasonSummary]:
        """Per-season rows, aggregator-major in run order."""
        slices = self._season_slices()
        rows: list[SeasonSummary] = []
        if include_top_expert:
            for season in slices:
                top = self._top_expert(season, self.expert_records.get(season, {}))
                if top is not None:
                    rows.append(top)
        for run in self.runs.values():
            for season, idx in slices.items():
                rows.append(self._summary(run, season, idx, self.expert_records.get(season, {})))
        return rows

    def _period_population(self) -> dict[str, ExpertRecord]:
        population: dict[str, ExpertRecord] = {}
        for season_records in self.expert_records.values():
            for expert_id, record in season_records.items():
                population[expert_id] = population.get(expert_id, ExpertRecord()).merged(record)
        return population

    def period_summaries(self, label: str, include_top_expert: bool = True) -> list[SeasonSummary]:
        """Rows covering every game of the report, ranked on period totals."""
        population = self._period_population()
        idx = np.arange(len(self.games))
        rows: list[SeasonSummary] = []
        if include_top_expert:
            top = self._top_expert(label, population)
            if top is not None:
                rows.append(top)
        rows.extend(self._summary(run, label, idx, population) for run in self.runs.values())
        return rows

    def results_frame(self) -> pd.DataFrame:
        records = [
            (run.name, game.season, game.game_id, float(p), float(s))
            for run in self.runs.values()
            for game, p, s in zip(self.games, run.predictions, run.scores)
        ]
        return pd.DataFrame(records, columns=RESULT_COLUMNS)

    def experts_frame(self, period: str | None = None) -> pd.DataFrame:
        """The expert population each aggregator is ranked against: one row per
        expert and season, best first, plus period rows under ``period``."""
        populations = list(self.expert_records.items())
        if period is not None:
            populations.append((period, self._period_population()))
        records = [
            (
                label,
                expert_id,
                record.total,
                record.games,
                record.errors / record.games if record.games else 0.0,
            )
            for label, population in populations
            for expert_id, record in sorted(
                population.items(), key=lambda item: (-item[1].total, item[0])
            )
        ]
        return pd.DataFrame(records, columns=EXPERT_COLUMNS)


def summary_frame(rows: Sequence[SeasonSummary]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (r.aggregator, r.season, r.total_score, r.zero_one_error, r.rank_vs_experts)
            for r in rows
        ],
        columns=SUMMARY_COLUMNS,
    )


def signtest_frame(results: Sequence[SignTestResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            (r.aggregator_a, r.aggregator_b, r.wins, r.losses, r.ties, r.p_value)
            for r in results
        ],
        columns=SIGNTEST_COLUMNS,
    )


def _run_single(dataset: Dataset, name: str, aggregator: Aggregator) -> AggregatorRun:
    aggregator.bind(dataset.roster)
    outcomes = dataset.outcomes()
    predictions = np.empty(len(dataset))
    fallbacks = 0
    for t, (game, row, y) in enumerate(zip(dataset.games, dataset.predictions, outcomes)):
        try:
            p = aggregator.predict(row)
        except NoAdviceError:
            p = FALLBACK_PREDICTION
            fallbacks += 1
            logger.debug("%s 在比赛 %s 无可用建议，按 0.5 计", name, game.key)
        if not isinstance(p, (int, float, np.floating)) or not 0.0 <= float(p) <= 1.0:
            raise AggregatorOutputError(
                f"聚合器 {name} 在比赛 {game.season}/{game.game_id} 输出非法概率: {p!r}"
            )
        predictions[t] = float(p)
        aggregator.observe(y)
    scores = np.array([prob_score(p, y) for p, y in zip(predictions, outcomes)])
    if fallbacks:
        logger.warning("%s: %s 场比赛无可用建议，已按 0.5 计分", name, fallbacks)
    return AggregatorRun(name=name, predictions=predictions, scores=scores, fallbacks=fallbacks)


def run_online(
    dataset: Dataset,
    aggregators: Mapping[str, Aggregator] | Sequence[Aggregator],
    workers: int = 1,
) -> EvalReport:
    """Predict-then-observe every game in order with each aggregator.

    A mapping supplies the report labels; a sequence uses each aggregator's
    own name. Each aggregator only ever sees outcomes of earlier games.
    """
    dataset.require_nonempty()
    if isinstance(aggregators, Mapping):
        labelled = list(aggregators.items())
    else:
        labelled = [(aggregator.name, aggregator) for aggregator in aggregators]
    if not labelled:
        raise DomainError("至少需要一个聚合器")
    names = [name for name, _ in labelled]
    if len(set(names)) != len(names):
        raise DomainError(f"聚合器名称重复: {names}")

    logger.info("在线评估 %s 个聚合器，%s 场比赛", len(labelled), len(dataset))
    if workers > 1 and len(labelled) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda item: _run_single(dataset, *item), labelled))
    else:
        runs = [_run_single(dataset, name, aggregator) for name, aggregator in labelled]

    return EvalReport(
        games=dataset.games,
        runs={run.name: run for run in runs},
        expert_records=expert_season_records(dataset),
    )


__all__ = [
    "AggregatorOutputError",
    "AggregatorRun",
    "EXPERT_COLUMNS",
    "EvalReport",
    "ExpertRecord",
    "SeasonSummary",
    "SignTestResult",
    "TOP_EXPERT",
    "below_zero_average",
    "expert_rank",
    "expert_season_records",
    "multi_year_filter",
    "run_online",
    "sign_test",
    "signtest_frame",
    "summary_frame",
    "zero_one_error",
]
