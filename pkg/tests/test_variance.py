from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from scipy import stats

from forecast_tools.aggregators import average_predict
from forecast_tools.core import NoAdviceError, PredictionRow, RosterIndex
from forecast_tools.data import GeneratorConfig, generate
from forecast_tools.variance import (
    INITIAL_SIGMA,
    SIGMA_FLOOR,
    PredictionHistory,
    VarianceAggregator,
    VarianceConfig,
    VarianceState,
    em_sweep,
    estimate_sigma,
    fit,
    log_likelihood,
    ml_probability,
    variance_predict,
    variance_top_k_predict,
)

LITERAL = VarianceConfig(leave_one_out=False)


def _state(sigma: list[float]) -> VarianceState:
    return VarianceState(
        sigma=np.array(sigma),
        consensus=np.zeros(0),
        participation=np.zeros(len(sigma), dtype=int),
    )


def test_ml_probability_examples() -> None:
    row = PredictionRow({"a": 0.0, "b": 1.0})
    assert ml_probability(row, {"a": 1.0, "b": 2.0}) == pytest.approx(0.2)
    assert ml_probability(PredictionRow({"a": 0.37}), {"a": 0.1}) == pytest.approx(0.37)


def test_ml_probability_equal_sigma_is_average() -> None:
    row = PredictionRow({"a": 0.1, "b": 0.35, "c": 0.8})
    sigma = {"a": 0.2, "b": 0.2, "c": 0.2}
    assert ml_probability(row, sigma) == pytest.approx(average_predict(row), abs=1e-12)


def test_ml_probability_scale_invariant_and_convex() -> None:
    rng = np.random.default_rng(5)
    for _ in range(50):
        probs = rng.random(6)
        sigma = rng.uniform(0.01, 0.5, 6)
        row = PredictionRow({f"e{i}": float(p) for i, p in enumerate(probs)})
        base = ml_probability(row, {f"e{i}": float(s) for i, s in enumerate(sigma)})
        scaled = ml_probability(row, {f"e{i}": float(3.7 * s) for i, s in enumerate(sigma)})
        assert scaled == pytest.approx(base, abs=1e-12)
        assert probs.min() - 1e-12 <= base <= probs.max() + 1e-12


def test_ml_probability_empty_row() -> None:
    with pytest.raises(NoAdviceError):
        ml_probability(PredictionRow({}), {})


def test_estimate_sigma_examples() -> None:
    assert estimate_sigma([0.4, 0.6], [0.4, 0.6]) == SIGMA_FLOOR
    assert estimate_sigma([0.5], [0.8]) == pytest.approx(0.3)
    consensus = [0.5, 0.5, 0.5, 0.5]
    assert estimate_sigma(consensus, [0.6, 0.4, 0.8, 0.2]) == pytest.approx(math.sqrt(0.05))
    # skipped events do not count
    assert estimate_sigma([0.5, 0.9], [0.8, None]) == pytest.approx(0.3)


def test_em_sweep_two_experts_one_event() -> None:
    history = PredictionHistory.from_rows(["a", "b"], [PredictionRow({"a": 0.2, "b": 0.8})])
    state = em_sweep(VarianceState.initial(2, LITERAL), history, LITERAL)
    assert state.consensus.tolist() == pytest.approx([0.5])
    assert state.sigma.tolist() == pytest.approx([0.3, 0.3])


def test_em_sweep_leave_one_out_examples() -> None:
    history = PredictionHistory.from_rows(["a", "b"], [PredictionRow({"a": 0.2, "b": 0.8})])
    state = em_sweep(VarianceState.initial(2), history)
    assert state.consensus.tolist() == pytest.approx([0.5])
    # each expert against the other one
    assert state.sigma.tolist() == pytest.approx([0.6, 0.6])

    rows = [PredictionRow({"a": 0.4, "b": 0.5, "c": 0.9}), PredictionRow({"a": 0.3})]
    history = PredictionHistory.from_rows(["a", "b", "c"], rows)
    state = em_sweep(VarianceState.initial(3), history)
    # the event where a is alone does not count toward a's sigma
    assert state.sigma.tolist() == pytest.approx([0.3, 0.15, 0.45])
    assert state.participation.tolist() == [2, 1, 1]


def test_lone_expert_keeps_initial_sigma() -> None:
    rows = [PredictionRow({"a": 0.4}), PredictionRow({"a": 0.9, "b": 0.7})]
    history = PredictionHistory.from_rows(["a", "b", "c"], rows)
    state = fit(history)
    assert state.sigma[2] == INITIAL_SIGMA
    assert state.sigma[:2].tolist() == pytest.approx([0.2, 0.2])

    only = PredictionHistory.from_rows(["a"], [PredictionRow({"a": 0.4})])
    assert fit(only).sigma.tolist() == [INITIAL_SIGMA]


def test_fit_warns_once_when_floor_fires(caplog: pytest.LogCaptureFixture) -> None:
    twins = [PredictionRow({"a": 0.3, "b": 0.3}), PredictionRow({"a": 0.6, "b": 0.6})]
    history = PredictionHistory.from_rows(["a", "b"], twins)
    with caplog.at_level(logging.WARNING, logger="forecast_tools.variance"):
        state = fit(history)
    assert state.sigma.tolist() == [SIGMA_FLOOR, SIGMA_FLOOR]
    assert state.clamped
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1

    caplog.clear()
    spread = PredictionHistory.from_rows(["a", "b"], [PredictionRow({"a": 0.2, "b": 0.8})])
    with caplog.at_level(logging.WARNING, logger="forecast_tools.variance"):
        fit(spread)
    assert not caplog.records


def test_em_sweep_matches_estimate_sigma() -> None:
    dataset, _ = generate(
        GeneratorConfig(n_experts=5, n_games=30, sigma_lo=0.05, sigma_hi=0.3, missing_rate=0.3)
    )
    history = PredictionHistory.from_rows(dataset.roster, dataset.predictions)
    state = em_sweep(VarianceState.initial(5, LITERAL), history, LITERAL)
    for i, expert_id in enumerate(dataset.roster):
        own = [row.get(expert_id) for row in dataset.predictions]
        expected = estimate_sigma(state.consensus.tolist(), own, LITERAL)
        assert state.sigma[i] == pytest.approx(expected, abs=1e-12)


def test_participation_threshold_keeps_initial_sigma() -> None:
    history = PredictionHistory.from_rows(["a", "b"], [PredictionRow({"a": 0.2, "b": 0.8})])
    config = VarianceConfig(min_participation=10)
    state = em_sweep(VarianceState.initial(2, config), history, config)
    assert state.sigma.tolist() == [0.25, 0.25]


def test_fit_reaches_fixed_point() -> None:
    dataset, _ = generate(GeneratorConfig(n_experts=8, n_games=80, sigma_lo=0.05, sigma_hi=0.3))
    history = PredictionHistory.from_rows(dataset.roster, dataset.predictions)
    state = fit(history)
    again = em_sweep(state, history)
    assert again.sigma == pytest.approx(state.sigma, abs=1e-4)


def test_em_log_likelihood_monotone_without_clamps() -> None:
    dataset, _ = generate(
        GeneratorConfig(
            n_experts=10, n_games=60, sigma_lo=0.05, sigma_hi=0.2, missing_rate=0.2, seed=11
        )
    )
    history = PredictionHistory.from_rows(dataset.roster, dataset.predictions)
    state = em_sweep(VarianceState.initial(10, LITERAL), history, LITERAL)
    previous = log_likelihood(state, history)
    for _ in range(30):
        state = em_sweep(state, history, LITERAL)
        current = log_likelihood(state, history)
        if not state.clamped:
            assert current >= previous - 1e-9 * abs(previous)
        previous = current


def test_sigma_recovery_rank_correlation() -> None:
    dataset, truths = generate(
        GeneratorConfig(n_experts=50, n_games=200, sigma_lo=0.05, sigma_hi=0.4, seed=1)
    )
    history = PredictionHistory.from_rows(dataset.roster, dataset.predictions)
    state = fit(history)
    true_sigma = [truths.sigmas[e] for e in dataset.roster]
    rho = stats.spearmanr(state.sigma, true_sigma).statistic
    assert rho >= 0.9


def test_sigma_error_shrinks_with_more_events() -> None:
    errors = []
    for n_games in (50, 200, 800):
        dataset, truths = generate(
            GeneratorConfig(
                n_experts=40,
                n_games=n_games,
                sigma_lo=0.03,
                sigma_hi=0.1,
                law="beta:5:5",  # type: ignore[arg-type]
                seed=2,
            )
        )
        history = PredictionHistory.from_rows(dataset.roster, dataset.predictions)
        state = fit(history)
        true_sigma = np.array([truths.sigmas[e] for e in dataset.roster])
        errors.append(float(np.median(np.abs(state.sigma - true_sigma) / true_sigma)))
    assert errors[0] > errors[1] > errors[2]


def test_top_k_examples() -> None:
    index = RosterIndex(["a", "b", "c"])
    state = _state([0.1, 0.05, 0.2])
    row = PredictionRow({"a": 0.3, "b": 0.6, "c": 0.9})
    assert variance_top_k_predict(state, row, 1, index) == pytest.approx(0.6)
    assert variance_top_k_predict(state, row, 3, index) == variance_predict(state, row, index)
    # least-sigma expert absent: fall back to every present expert
    partial = PredictionRow({"a": 0.3, "c": 0.9})
    assert variance_top_k_predict(state, partial, 1, index) == pytest.approx(
        variance_predict(state, partial, index)
    )


def test_top_k_matches_sort_and_restrict() -> None:
    dataset, _ = generate(
        GeneratorConfig(n_experts=40, n_games=60, sigma_lo=0.05, sigma_hi=0.4, missing_rate=0.2)
    )
    index = RosterIndex(dataset.roster)
    history = PredictionHistory.from_rows(dataset.roster, dataset.predictions[:-1])
    state = fit(history)
    row = dataset.predictions[-1]

    ranked = sorted(range(len(dataset.roster)), key=lambda i: (state.sigma[i], i))[:20]
    chosen = {dataset.roster[i] for i in ranked} & set(row)
    weights = {e: 1.0 / state.sigma[index.position(e)] ** 2 for e in chosen}
    expected = sum(weights[e] * row[e] for e in chosen) / sum(weights.values())
    assert variance_top_k_predict(state, row, 20, index) == pytest.approx(expected, abs=1e-12)


def test_first_event_equals_average() -> None:
    aggregator = VarianceAggregator()
    aggregator.bind(["a", "b", "c"])
    row = PredictionRow({"a": 0.1, "b": 0.4, "c": 0.85})
    assert aggregator.predict(row) == pytest.approx(average_predict(row), abs=1e-12)


def _with_exact_expert(config: VarianceConfig) -> VarianceAggregator:
    dataset, _ = generate(
        GeneratorConfig(n_experts=20, n_games=100, sigma_lo=0.1, sigma_hi=0.3, seed=4)
    )
    aggregator = VarianceAggregator(config)
    aggregator.bind(dataset.roster)
    exact = dataset.roster[0]
    for game, row, y in zip(dataset.games, dataset.predictions, dataset.outcomes()):
        probs = dict(row)
        probs[exact] = game.true_prob
        aggregator.predict(PredictionRow(probs))
        aggregator.observe(y)
    return aggregator


def test_exact_expert_sigma_hits_floor() -> None:
    aggregator = _with_exact_expert(VarianceConfig(leave_one_out=False, min_participation=10))
    assert aggregator.state.sigma[0] == pytest.approx(SIGMA_FLOOR)
    assert aggregator.state.sigma[0] == aggregator.state.sigma.min()


def test_exact_expert_dominates_leave_one_out() -> None:
    aggregator = _with_exact_expert(VarianceConfig())
    sigma = aggregator.state.sigma
    # bounded by the other experts' pooled noise, not by the floor
    assert 10 * SIGMA_FLOOR < sigma[0] < 0.08
    assert sigma[0] == sigma.min()


def test_sigma_tracks_truth_online_with_many_experts() -> None:
    dataset, truths = generate(
        GeneratorConfig(
            n_experts=100, n_games=500, sigma_lo=0.05, sigma_hi=0.4, missing_rate=0.2, seed=5
        )
    )
    aggregator = VarianceAggregator()
    aggregator.bind(dataset.roster)
    for row, y in zip(dataset.predictions, dataset.outcomes()):
        aggregator.predict(row)
        aggregator.observe(y)
    true_sigma = np.array([truths.sigmas[e] for e in dataset.roster])
    sigma = aggregator.state.sigma
    # no single expert is driven to the floor and takes over the consensus
    assert np.all(sigma >= 0.5 * true_sigma)
    assert stats.spearmanr(sigma, true_sigma).statistic >= 0.9


def test_expert_permutation_leaves_predictions_unchanged() -> None:
    dataset, _ = generate(
        GeneratorConfig(n_experts=6, n_games=40, sigma_lo=0.05, sigma_hi=0.3, missing_rate=0.2)
    )
    rename = {e: f"x{5 - i}" for i, e in enumerate(dataset.roster)}

    original = VarianceAggregator()
    original.bind(dataset.roster)
    permuted = VarianceAggregator()
    permuted.bind(sorted(rename.values()))
    for row, y in zip(dataset.predictions, dataset.outcomes()):
        renamed = PredictionRow({rename[e]: p for e, p in row.items()})
        assert permuted.predict(renamed) == pytest.approx(original.predict(row), abs=1e-9)
        original.observe(y)
        permuted.observe(y)


def test_aggregator_names() -> None:
    assert VarianceAggregator().name == "variance"
    assert VarianceAggregator(top_k=20).name == "variance-top:20"
