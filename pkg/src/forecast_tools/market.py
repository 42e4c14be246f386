"""Simulated information market of log-utility agents.

Each expert is an agent holding wealth. For every game the agents trade a
security paying 1 if the event happens. With logarithmic utility each agent
spends its wealth in proportion to its belief (Kelly allocation), so the
clearing price is the wealth-weighted mean belief. Agents then move their
belief halfway towards the price, and after the outcome each agent's wealth
is multiplied by ``b / price`` (event) or ``(1 - b) / (1 - price)`` (no event).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .aggregators import Aggregator
from .core import NoAdviceError, PredictionRow, RosterIndex, check_outcome

logger = logging.getLogger(__name__)


class NoMarketError(NoAdviceError):
    """Raised when no agent with positive wealth trades in a game."""


@dataclass(slots=True)
class MarketConfig:
    initial_wealth: float = 1.0
    price_tol: float = 1e-9
    max_iters: int = 100
    single_update: bool = False


@dataclass(slots=True)
class Agent:
    wealth: float = 1.0
    prior_belief: float = 0.5
    posterior_belief: float = 0.5

    @property
    def eliminated(self) -> bool:
        return self.wealth <= 0.0


@dataclass(frozen=True, slots=True)
class MarketRound:
    price: float
    participants: np.ndarray
    beliefs: np.ndarray
    wealth_before: np.ndarray
    iterations: int


def equilibrium_price(beliefs: np.ndarray, wealth: np.ndarray) -> float:
    """Clearing price for Kelly demand ``b W / price``: the wealth-weighted
    mean belief."""
    beliefs = np.asarray(beliefs, dtype=float)
    wealth = np.asarray(wealth, dtype=float)
    total = float(wealth.sum())
    if beliefs.size == 0 or not total > 0.0:
        raise NoMarketError("没有持有正财富的交易者")
    return min(1.0, max(0.0, float(np.dot(beliefs, wealth) / total)))


def settle(beliefs: np.ndarray, wealth: np.ndarray, price: float, outcome: int) -> np.ndarray:
    """Wealth after the security pays out.

    A price of exactly 0 or 1 means every trader agrees and nobody trades, so
    wealth is unchanged. An agent certain of the wrong outcome loses
    everything.
    """
    y = check_outcome(outcome)
    beliefs = np.asarray(beliefs, dtype=float)
    wealth = np.asarray(wealth, dtype=float)
    if price <= 0.0 or price >= 1.0:
        return wealth.copy()
    if y == 1:
        return wealth * beliefs / price
    return wealth * (1.0 - beliefs) / (1.0 - price)


def clear_market(
    priors: np.ndarray, wealth: np.ndarray, config: MarketConfig | None = None
) -> tuple[float, np.ndarray, int]:
    """Price the security and update beliefs to their equilibrium posterior.

    Returns ``(price, posterior beliefs, iterations)``.
    """
    config = config or MarketConfig()
    beliefs = np.asarray(priors, dtype=float).copy()
    price = equilibrium_price(beliefs, wealth)
    iterations = 0
    while iterations < config.max_iters:
        iterations += 1
        beliefs = (beliefs + price) / 2.0
        updated = equilibrium_price(beliefs, wealth)
        converged = abs(updated - price) < config.price_tol
        price = updated
        if config.single_update or converged:
            break
    return price, beliefs, iterations


def market_round(
    agents: list[Agent],
    present: np.ndarray,
    priors: np.ndarray,
    config: MarketConfig | None = None,
) -> MarketRound:
    """Run the pricing half of one round; beliefs of traders are updated in place."""
    wealth = np.array([agent.wealth for agent in agents])
    participants = np.flatnonzero(present & (wealth > 0.0))
    if participants.size == 0:
        raise NoMarketError("本场比赛没有可交易的代理人")
    price, beliefs, iterations = clear_market(
        priors[participants], wealth[participants], config
    )
    for i, prior, posterior in zip(participants, priors[participants], beliefs):
        agents[i].prior_belief = float(prior)
        agents[i].posterior_belief = float(posterior)
    return MarketRound(
        price=price,
        participants=participants,
        beliefs=beliefs,
        wealth_before=wealth[participants],
        iterations=iterations,
    )


def settle_round(agents: list[Agent], round_: MarketRound, outcome: int) -> None:
    after = settle(round_.beliefs, round_.wealth_before, round_.price, outcome)
    for i, wealth in zip(round_.participants, after):
        if wealth <= 0.0 and agents[i].wealth > 0.0:
            logger.debug("代理人 %s 押错全部财富，被淘汰", i)
        agents[i].wealth = max(0.0, float(wealth))


class MarketAggregator(Aggregator):
    def __init__(self, config: MarketConfig | None = None) -> None:
        super().__init__()
        self.config = config or MarketConfig()
        self.index = RosterIndex(())
        self.agents: list[Agent] = []
        self._round: MarketRound | None = None

    @property
    def name(self) -> str:
        return "market:single-update" if self.config.single_update else "market"

    def _on_bind(self, roster: tuple[str, ...]) -> None:
        self.index = RosterIndex(roster)
        self.agents = [Agent(wealth=self.config.initial_wealth) for _ in roster]
        self._round = None

    def total_wealth(self) -> float:
        return float(sum(agent.wealth for agent in self.agents))

    def wealth_of(self, expert_id: str) -> float:
        return self.agents[self.index.position(expert_id)].wealth

    def _predict(self, row: PredictionRow) -> float:
        self._round = None
        priors = self.index.vector(row, fill=0.5)
        self._round = market_round(self.agents, self.index.mask(row), priors, self.config)
        return self._round.price

    def _observe(self, row: PredictionRow, outcome: int) -> None:
        if self._round is None:
            return
        settle_round(self.agents, self._round, outcome)
        self._round = None


__all__ = [
    "Agent",
    "MarketAggregator",
    "MarketConfig",
    "MarketRound",
    "NoMarketError",
    "clear_market",
    "equilibrium_price",
    "market_round",
    "settle",
    "settle_round",
]
