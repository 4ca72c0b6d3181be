"""Single-period clearing of one double-auction market.

The mechanism, applied independently at each market every trading period:

1. the trading price interpolates between the mean ask and the mean bid,
   ``pi = <a> + theta (<b> - <a>)``, using every submitted order;
2. bids below and asks above ``pi`` are removed (orders priced exactly at
   ``pi`` stay valid);
3. ``min(valid bids, valid asks)`` buyer-seller pairs trade: the longer
   valid side is shuffled and its first entries are paired against the
   shorter side in submission order (when both sides are equal the bid side
   is shuffled);
4. a matched seller scores ``pi - a``, a matched buyer ``b - pi``; everyone
   else scores exactly 0.  The book is emptied afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Order, Side


@dataclass
class ClearingResult:
    """Outcome of clearing one market for one period.

    ``price`` is None when no trade happened (a one-sided or empty market).
    ``matches`` pairs buyer and seller trader ids; ``scores`` carries one
    entry per submitting trader, zero for everyone who did not trade.
    """

    price: float | None
    matches: list[tuple[int, int]] = field(default_factory=list)
    scores: dict[int, float] = field(default_factory=dict)
    n_bids: int = 0
    n_asks: int = 0
    n_valid_bids: int = 0
    n_valid_asks: int = 0
    n_trades: int = 0

    @property
    def no_trade(self) -> bool:
        return self.price is None


def set_price(orders: list[Order], theta: float):
    """Trading price for one market, or None when either side is empty."""
    bids = [o.price for o in orders if o.side is Side.BUY]
    asks = [o.price for o in orders if o.side is Side.SELL]
    if not bids or not asks:
        return None
    mean_bid = float(np.mean(bids))
    mean_ask = float(np.mean(asks))
    return mean_ask + theta * (mean_bid - mean_ask)


def clear_arrays(is_bid, prices, theta: float, rng: np.random.Generator):
    """Array core of the clearing mechanism.

    ``is_bid`` and ``prices`` describe the orders of one market in
    submission order.  Returns ``(pi, scores, buyers, sellers, counts)``
    where ``scores`` is aligned with the input orders, ``buyers[k]`` traded
    with ``sellers[k]`` (positions into the input), and ``counts`` is
    (n_bids, n_asks, n_valid_bids, n_valid_asks, n_trades).
    """
    is_bid = np.asarray(is_bid, dtype=bool)
    prices = np.asarray(prices, dtype=float)
    n = len(prices)
    scores = np.zeros(n)
    empty = np.empty(0, dtype=int)
    n_bids = int(is_bid.sum())
    n_asks = n - n_bids
    if n_bids == 0 or n_asks == 0:
        return None, scores, empty, empty, (n_bids, n_asks, 0, 0, 0)

    mean_bid = prices[is_bid].mean()
    mean_ask = prices[~is_bid].mean()
    pi = mean_ask + theta * (mean_bid - mean_ask)

    valid_bid = is_bid & (prices >= pi)
    valid_ask = ~is_bid & (prices <= pi)
    nvb = int(valid_bid.sum())
    nva = int(valid_ask.sum())
    n_trades = min(nvb, nva)
    if n_trades == 0:
        return pi, scores, empty, empty, (n_bids, n_asks, nvb, nva, 0)

    buyers = np.flatnonzero(valid_bid)
    sellers = np.flatnonzero(valid_ask)
    # one shuffle of the long side per trading market; ties shuffle bids
    if nvb >= nva:
        buyers = rng.permutation(buyers)[:n_trades]
    else:
        sellers = rng.permutation(sellers)[:n_trades]
    scores[buyers] = prices[buyers] - pi
    scores[sellers] = pi - prices[sellers]
    return pi, scores, buyers, sellers, (n_bids, n_asks, nvb, nva, n_trades)


def clear_market(orders: list[Order], theta: float, rng: np.random.Generator) -> ClearingResult:
    """Clear one market for one period; see the module docstring for the rules."""
    if not orders:
        return ClearingResult(price=None)
    markets = {o.market for o in orders}
    if len(markets) != 1:
        raise ValueError(f"orders span several markets: {sorted(markets)}")

    is_bid = np.array([o.side is Side.BUY for o in orders])
    prices = np.array([o.price for o in orders])
    pi, scores, buyers, sellers, counts = clear_arrays(is_bid, prices, theta, rng)

    result = ClearingResult(
        price=None if pi is None else float(pi),
        n_bids=counts[0], n_asks=counts[1],
        n_valid_bids=counts[2], n_valid_asks=counts[3], n_trades=counts[4],
    )
    for o in orders:
        result.scores.setdefault(o.trader, 0.0)
    for b, s in zip(buyers, sellers):
        result.matches.append((orders[b].trader, orders[s].trader))
        result.scores[orders[b].trader] += scores[b]
        result.scores[orders[s].trader] += scores[s]
    return result
