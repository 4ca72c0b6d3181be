"""Domain types, parameter validation, and the deterministic RNG contract.

Everything stochastic in this package derives from a single 64-bit master
seed.  Run ``i`` of an ensemble draws from the generator returned by
``run_stream(master_seed, i)``, so runs are independent of each other and of
the order in which they are executed.

Within a run the draw order per trading period is fixed:

1. one uniform matrix of shape ``(n_agents, D)`` is drawn (``D=2`` for the
   four-action variant, ``D=3`` for the two-group variant) and consumed
   row-major, i.e. agent by agent: action draw, side draw (two-group only),
   then the price draw.  Prices are the inverse normal CDF of the agent's
   last uniform, so each draw consumes exactly one uniform.
2. markets clear in index order; a market that trades consumes exactly one
   permutation of its long valid side (the bid side when both sides have
   equal size).  Markets that do not trade consume nothing.

Identical ``(master_seed, ModelParams)`` therefore give bit-identical
trajectories.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

N_MARKETS = 2


class Variant(enum.Enum):
    """Which learning problem the agents face."""

    FOUR_ACTION = "four_action"  # learn market and side, 4 attractions
    TWO_GROUP = "two_group"      # learn market only, side drawn with fixed prob


class Side(enum.Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class Action:
    """One of the four (market, side) combinations. Markets are 1-based."""

    market: int
    side: Side

    def __post_init__(self):
        if self.market not in (1, 2):
            raise ValueError(f"market must be 1 or 2, got {self.market}")


# Canonical action order used for every attraction vector in the package:
# buy@1, sell@1, buy@2, sell@2.
ACTIONS = (
    Action(1, Side.BUY),
    Action(1, Side.SELL),
    Action(2, Side.BUY),
    Action(2, Side.SELL),
)
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}

# Per action-index lookups used by the simulation loop (0-based markets).
ACTION_MARKET = np.array([0, 0, 1, 1])
ACTION_IS_BUY = np.array([True, False, True, False])


class ParamError(ValueError):
    """A model parameter violates its invariant. ``field`` names the culprit."""

    field = ""

    def __init__(self, message, field=None):
        super().__init__(message)
        if field is not None:
            self.field = field


class NonPositiveTemperature(ParamError):
    field = "temperature"


class ThetaOutOfRange(ParamError):
    field = "theta"


class InvalidForgettingRate(ParamError):
    field = "forgetting_rate"


class NonPositiveSigma(ParamError):
    field = "sigma"


class TooFewAgents(ParamError):
    field = "n_agents"


class UnevenGroups(ParamError):
    field = "n_agents"


class GroupBuyPrefOutOfRange(ParamError):
    field = "group_buy_prefs"


class NegativeHorizon(ParamError):
    field = "horizon"


class UnsupportedMarketCount(ParamError):
    field = "n_markets"


@dataclass(frozen=True)
class ModelParams:
    """All scalars defining one experiment.

    Defaults are the reference parameter set used throughout: 200 agents,
    market biases (0.3, 0.7), unit-width bid/ask distributions one unit
    apart, forgetting rate 0.1.  Only the difference ``mu_bid - mu_ask``
    enters the dynamics; the absolute level is a gauge choice fixed at
    ``mu_ask = 0``.
    """

    n_agents: int = 200
    theta: tuple[float, float] = (0.3, 0.7)
    mu_ask: float = 0.0
    sigma_ask: float = 1.0
    mu_bid: float = 1.0
    sigma_bid: float = 1.0
    temperature: float = 0.14
    forgetting_rate: float = 0.1
    horizon: int = 10_000
    variant: Variant = Variant.FOUR_ACTION
    group_buy_prefs: tuple[float, float] = (0.2, 0.8)
    n_markets: int = N_MARKETS

    @property
    def n_choices(self) -> int:
        """Width of the attraction vector: 4 actions or 2 markets."""
        return 4 if self.variant is Variant.FOUR_ACTION else 2


def validate_params(p: ModelParams) -> ModelParams:
    """Check every ModelParams invariant; return ``p`` unchanged if they hold.

    Raises a ParamError subclass naming the offending field otherwise.
    """
    if p.n_markets != N_MARKETS:
        raise UnsupportedMarketCount(
            f"the model is defined for exactly {N_MARKETS} markets, got {p.n_markets}")
    if not isinstance(p.variant, Variant):
        raise ParamError(f"variant must be a Variant, got {p.variant!r}", "variant")
    if p.n_agents < 2:
        raise TooFewAgents(f"need at least 2 agents, got {p.n_agents}")
    if len(p.theta) != N_MARKETS:
        raise ThetaOutOfRange(f"need one theta per market, got {p.theta!r}")
    for m, th in enumerate(p.theta):
        if not np.isfinite(th) or not 0.0 <= th <= 1.0:
            raise ThetaOutOfRange(
                f"theta[{m}]={th} is not in [0, 1]; the bias is an interpolation weight")
    for name, sig in (("sigma_ask", p.sigma_ask), ("sigma_bid", p.sigma_bid)):
        if not np.isfinite(sig) or sig <= 0.0:
            raise NonPositiveSigma(f"{name}={sig} must be positive", name)
    for name, mu in (("mu_ask", p.mu_ask), ("mu_bid", p.mu_bid)):
        if not np.isfinite(mu):
            raise ParamError(f"{name}={mu} must be finite", name)
    if not np.isfinite(p.temperature) or p.temperature <= 0.0:
        raise NonPositiveTemperature(
            f"temperature={p.temperature} must be positive (softmax is undefined at T=0)")
    if not np.isfinite(p.forgetting_rate) or not 0.0 < p.forgetting_rate <= 1.0:
        raise InvalidForgettingRate(
            f"forgetting_rate={p.forgetting_rate} must lie in (0, 1]")
    if p.horizon < 0:
        raise NegativeHorizon(f"horizon={p.horizon} must be >= 0")
    if p.variant is Variant.TWO_GROUP:
        if p.n_agents % 2:
            raise UnevenGroups(
                f"two-group variant needs an even population, got {p.n_agents}")
        if len(p.group_buy_prefs) != 2:
            raise GroupBuyPrefOutOfRange(
                f"need one buy probability per group, got {p.group_buy_prefs!r}")
        for g, pb in enumerate(p.group_buy_prefs):
            if not np.isfinite(pb) or not 0.0 <= pb <= 1.0:
                raise GroupBuyPrefOutOfRange(
                    f"group_buy_prefs[{g}]={pb} is not a probability")
    return p


@dataclass
class AgentState:
    """Attraction vector of one agent, in the canonical action order.

    Four-action agents hold 4 attractions ordered as ``ACTIONS``; two-group
    agents hold 2 (market 1, market 2) plus their group label (1 or 2).
    """

    attractions: np.ndarray
    group: int | None = None

    @classmethod
    def initial(cls, variant: Variant = Variant.FOUR_ACTION, group=None) -> "AgentState":
        """All attractions start at zero (delta-peaked initial condition)."""
        n = 4 if variant is Variant.FOUR_ACTION else 2
        return cls(np.zeros(n), group)


def initial_agents(params: ModelParams) -> list[AgentState]:
    """Fresh population: zero attractions; two-group agents 0..N/2-1 are
    group 1, the rest group 2 (deterministic assignment)."""
    if params.variant is Variant.TWO_GROUP:
        half = params.n_agents // 2
        return [AgentState.initial(params.variant, 1 if i < half else 2)
                for i in range(params.n_agents)]
    return [AgentState.initial(params.variant) for _ in range(params.n_agents)]


@dataclass(frozen=True)
class Order:
    """A single bid or ask submitted to one market for one period."""

    trader: int
    market: int
    side: Side
    price: float

    def __post_init__(self):
        if not np.isfinite(self.price):
            raise ValueError(f"order price must be finite, got {self.price}")


def run_stream(master_seed: int, run_index: int = 0) -> np.random.Generator:
    """Independent substream for one run of an ensemble.

    Child ``run_index`` of ``SeedSequence(master_seed)``; constructing a
    stream requires no knowledge of the other runs, so ensembles can be
    executed in any order or in parallel without changing results.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    return np.random.Generator(np.random.PCG64(ss))
