from __future__ import annotations

import numpy as np
import pytest

from forecast_tools.core import PredictionRow
from forecast_tools.data import GeneratorConfig, generate
from forecast_tools.market import (
    Agent,
    MarketAggregator,
    MarketConfig,
    NoMarketError,
    clear_market,
    equilibrium_price,
    market_round,
    settle,
    settle_round,
)


@pytest.mark.parametrize(
    "beliefs,wealth,expected",
    [
        ([0.3, 0.7], [1.0, 1.0], 0.5),
        ([0.42], [2.0], 0.42),
        ([0.2, 0.6], [3.0, 1.0], 0.3),
    ],
)
def test_equilibrium_price(beliefs: list[float], wealth: list[float], expected: float) -> None:
    assert equilibrium_price(np.array(beliefs), np.array(wealth)) == pytest.approx(expected)


def test_equilibrium_price_clears_kelly_demand() -> None:
    beliefs = np.array([0.2, 0.6])
    wealth = np.array([3.0, 1.0])
    price = equilibrium_price(beliefs, wealth)
    # each agent spends b W on the security at price pi; supply equals total wealth
    shares = beliefs * wealth / price
    assert shares.sum() == pytest.approx(wealth.sum())


def test_no_wealth_no_market() -> None:
    with pytest.raises(NoMarketError):
        equilibrium_price(np.array([0.5]), np.array([0.0]))


def test_settle_examples() -> None:
    after = settle(np.array([0.3, 0.7]), np.array([1.0, 1.0]), 0.5, 1)
    assert after.tolist() == pytest.approx([0.6, 1.4])
    unchanged = settle(np.array([0.4]), np.array([2.5]), 0.4, 0)
    assert unchanged.tolist() == pytest.approx([2.5], abs=1e-12)


def test_certain_wrong_agent_is_eliminated() -> None:
    after = settle(np.array([0.0, 0.8]), np.array([1.0, 1.0]), 0.4, 1)
    assert after[0] == 0.0
    assert after.sum() == pytest.approx(2.0)


def test_unanimous_market_is_fixed_point() -> None:
    price, beliefs, _ = clear_market(np.full(4, 0.37), np.ones(4))
    assert price == pytest.approx(0.37, abs=1e-12)
    assert beliefs.tolist() == pytest.approx([0.37] * 4, abs=1e-12)
    assert settle(beliefs, np.ones(4), price, 1).tolist() == pytest.approx([1.0] * 4, abs=1e-12)


def test_iterated_and_single_update_prices_agree() -> None:
    rng = np.random.default_rng(9)
    priors = rng.random(10)
    wealth = rng.random(10) + 0.1
    iterated, _, _ = clear_market(priors, wealth)
    single, _, iterations = clear_market(priors, wealth, MarketConfig(single_update=True))
    assert iterations == 1
    assert iterated == pytest.approx(single, abs=1e-9)
    beliefs = (priors + iterated) / 2
    assert iterated == pytest.approx(equilibrium_price(beliefs, wealth), abs=1e-9)


def test_wealth_conserved_over_random_rounds() -> None:
    rng = np.random.default_rng(42)
    n = 12
    agents = [Agent(wealth=1.0) for _ in range(n)]
    config = MarketConfig()
    total = float(n)
    settled = 0
    for _ in range(1000):
        present = rng.random(n) < 0.8
        priors = rng.random(n)
        extreme = rng.random(n) < 0.05
        priors[extreme] = rng.integers(0, 2, extreme.sum())
        try:
            round_ = market_round(agents, present, priors, config)
        except NoMarketError:
            continue
        assert round_.beliefs.min() - 1e-12 <= round_.price <= round_.beliefs.max() + 1e-12
        settle_round(agents, round_, int(rng.integers(0, 2)))
        settled += 1
        assert sum(agent.wealth for agent in agents) == pytest.approx(total, rel=1e-9)
    assert settled > 900


def test_direct_settlement_conserves_with_eliminations() -> None:
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 10))
        beliefs = rng.random(n)
        beliefs[rng.random(n) < 0.2] = 1.0
        wealth = rng.random(n) + 0.01
        price = equilibrium_price(beliefs, wealth)
        after = settle(beliefs, wealth, price, int(rng.integers(0, 2)))
        assert after.min() >= 0.0
        assert after.sum() == pytest.approx(wealth.sum(), rel=1e-9)


def test_absent_agents_keep_wealth() -> None:
    aggregator = MarketAggregator()
    aggregator.bind(["a", "b", "c"])
    aggregator.predict(PredictionRow({"a": 0.9, "b": 0.2}))
    aggregator.observe(1)
    assert aggregator.wealth_of("c") == 1.0
    assert aggregator.wealth_of("a") > 1.0 > aggregator.wealth_of("b")
    assert aggregator.total_wealth() == pytest.approx(3.0)


def test_equal_wealth_unanimous_price() -> None:
    aggregator = MarketAggregator()
    aggregator.bind(["a", "b", "c"])
    assert aggregator.predict(PredictionRow({"a": 0.61, "b": 0.61, "c": 0.61})) == pytest.approx(
        0.61, abs=1e-12
    )


def test_accurate_agent_gains_wealth_share() -> None:
    dataset, _ = generate(
        GeneratorConfig(n_experts=10, n_games=300, sigma_lo=0.2, sigma_hi=0.4, seed=5)
    )
    aggregator = MarketAggregator()
    aggregator.bind(dataset.roster)
    accurate = dataset.roster[0]
    shares = []
    for game, row, y in zip(dataset.games, dataset.predictions, dataset.outcomes()):
        probs = dict(row)
        probs[accurate] = game.true_prob
        aggregator.predict(PredictionRow(probs))
        aggregator.observe(y)
        shares.append(aggregator.wealth_of(accurate) / aggregator.total_wealth())
    assert shares[-1] > shares[99] > 0.1
    assert aggregator.total_wealth() == pytest.approx(10.0, rel=1e-9)


def test_no_traders_raises_no_market() -> None:
    aggregator = MarketAggregator()
    aggregator.bind(["a"])
    with pytest.raises(NoMarketError):
        aggregator.predict(PredictionRow({}))
    aggregator.observe(1)
    assert aggregator.wealth_of("a") == 1.0


def test_names() -> None:
    assert MarketAggregator().name == "market"
    assert MarketAggregator(MarketConfig(single_update=True)).name == "market:single-update"
