from __future__ import annotations

import math

import numpy as np
import pytest

from forecast_tools.core import (
    Dataset,
    DomainError,
    Game,
    NoAdviceError,
    PredictionRow,
    RosterIndex,
    absolute_loss,
    cumulative_score,
    log_loss,
    prob_score,
    quadratic_loss,
)


@pytest.mark.parametrize(
    "p,y,expected",
    [
        (1.0, 1, 0.0),
        (0.5, 0, 0.25),
        (0.2, 1, 0.64),
    ],
)
def test_quadratic_loss(p: float, y: int, expected: float) -> None:
    assert quadratic_loss(p, y) == pytest.approx(expected)


@pytest.mark.parametrize(
    "p,y,expected",
    [
        (1.0, 1, 0.0),
        (0.25, 1, 0.75),
        (0.25, 0, 0.25),
    ],
)
def test_absolute_loss(p: float, y: int, expected: float) -> None:
    assert absolute_loss(p, y) == pytest.approx(expected)


def test_log_loss() -> None:
    assert log_loss(1.0, 1) == 0.0
    assert log_loss(0.5, 1) == pytest.approx(math.log(2))
    assert log_loss(0.0, 1) == math.inf
    assert log_loss(1.0, 0) == math.inf


@pytest.mark.parametrize(
    "p,y,expected",
    [
        (0.5, 1, 0.0),
        (1.0, 1, 100.0),
        (0.0, 1, -300.0),
    ],
)
def test_prob_score(p: float, y: int, expected: float) -> None:
    assert prob_score(p, y) == expected


def test_prob_score_matches_quadratic_loss_on_grid() -> None:
    for p in np.linspace(0.0, 1.0, 5000):
        for y in (0, 1):
            assert prob_score(p, y) == 100.0 - 400.0 * quadratic_loss(p, y)
            assert -300.0 <= prob_score(p, y) <= 100.0


def test_quadratic_loss_symmetry() -> None:
    for p in np.linspace(0.0, 1.0, 101):
        assert quadratic_loss(p, 1) == quadratic_loss(1.0 - p, 0)


def test_losses_minimized_at_outcome() -> None:
    grid = np.linspace(0.0, 1.0, 201)
    for y in (0, 1):
        for loss in (quadratic_loss, absolute_loss, log_loss):
            values = [loss(p, y) for p in grid]
            assert min(values) == loss(float(y), y) == 0.0


def test_cumulative_score() -> None:
    assert cumulative_score([], []) == 0.0
    assert cumulative_score([0.5, 1.0], [1, 1]) == 100.0


def test_conservative_strategy_season_score() -> None:
    # 65% hit rate at a fixed 0.65, scaled to a 250-game season
    preds = [0.65] * 1000
    outcomes = [1] * 650 + [0] * 350
    per_season = cumulative_score(preds, outcomes) * 250 / 1000
    assert per_season == pytest.approx(2250.0, rel=0.01)


def test_cumulative_score_length_mismatch() -> None:
    with pytest.raises(DomainError):
        cumulative_score([0.5], [1, 0])


@pytest.mark.parametrize("p", [-0.1, 1.3, math.nan])
def test_probability_domain(p: float) -> None:
    with pytest.raises(DomainError):
        quadratic_loss(p, 1)


def test_outcome_domain() -> None:
    with pytest.raises(DomainError):
        prob_score(0.5, 2)


def test_prediction_row_iterates_in_id_order() -> None:
    row = PredictionRow({"b": 0.2, "a": 0.4, "c": 1.0})
    assert list(row) == ["a", "b", "c"]
    assert row.restrict({"a", "c"}) == PredictionRow({"a": 0.4, "c": 1.0})
    with pytest.raises(DomainError):
        PredictionRow({"a": 1.5})


def _dataset(games: list[Game], rows: list[dict[str, float]]) -> Dataset:
    roster = sorted({e for row in rows for e in row})
    return Dataset(
        roster=tuple(roster), games=tuple(games), predictions=tuple(PredictionRow(r) for r in rows)
    )


def test_dataset_requires_chronological_games() -> None:
    games = [Game("2001", 1, 1), Game("2000", 1, 0)]
    with pytest.raises(DomainError):
        _dataset(games, [{"e1": 0.5}, {"e1": 0.5}])


def test_dataset_rejects_unknown_expert() -> None:
    with pytest.raises(DomainError):
        Dataset(
            roster=("e1",),
            games=(Game("2000", 1, 1),),
            predictions=(PredictionRow({"e2": 0.5}),),
        )


def test_empty_dataset_is_constructible_but_not_nonempty() -> None:
    dataset = Dataset(roster=(), games=(), predictions=())
    assert len(dataset) == 0
    with pytest.raises(DomainError):
        dataset.require_nonempty()


def test_dataset_seasons_and_outcomes() -> None:
    games = [Game("2000", 1, 1), Game("2000", 2, 0), Game("2001", 1, 1)]
    dataset = _dataset(games, [{"e1": 0.5}, {}, {"e2": 0.1}])
    assert dataset.seasons() == ["2000", "2001"]
    assert dataset.outcomes() == [1, 0, 1]


def test_roster_index_vector_and_mask() -> None:
    index = RosterIndex(["e1", "e2", "e3"])
    row = PredictionRow({"e3": 0.9, "e1": 0.1})
    assert index.vector(row, fill=0.5).tolist() == [0.1, 0.5, 0.9]
    assert index.mask(row).tolist() == [True, False, True]


def test_no_advice_error_is_value_error() -> None:
    assert issubclass(NoAdviceError, ValueError)
