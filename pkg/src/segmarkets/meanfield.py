"""Deterministic large-population, slow-learning dynamics.

In the limit of many agents and a small forgetting rate the stochastic
learning dynamics closes on population-level quantities.  With rescaled
time ``t = r n``:

* the trading price at market m is pinned at ``pi_m = mu_a + theta_m
  (mu_b - mu_a)`` because order means stop fluctuating;
* a bid is valid with probability ``Q_B(m) = Phi((mu_b - pi_m)/sigma_b)``
  and an ask with ``Q_A(m) = Phi((pi_m - mu_a)/sigma_a)``;
* a valid buyer finds a partner with probability ``min(1, valid asks /
  valid bids)`` (and mirrored for sellers), where the valid-order volumes
  are participation fractions times validity probabilities;
* the expected score of a traded order is the truncated-Gaussian surplus
  ``E[b - pi | b > pi]`` (buyers) or ``E[pi - a | a < pi]`` (sellers).

The attraction flow is then ``dA_g/dt = P_g(A) R_g - A_g`` with softmax
probabilities ``P`` and per-action expected returns ``R``; the two-group
variant closes on the attraction differences ``Delta^(g) = A_1^(g) -
A_2^(g)`` of the two groups.  Below the critical temperature the
unsegregated fixed point of this flow loses stability; the new fixed points
it sprouts are formal (the derivation assumes a homogeneous population),
but the instability onset itself locates the segregation temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import fsolve
from scipy.special import erfcx, ndtr

from .core import ModelParams, Variant, validate_params

FLOW_TOL = 1e-10       # residual bound for an accepted fixed point
DEDUP_TOL = 1e-6       # distance under which two roots are the same point
JACOBIAN_STEP = 1e-6
KINK_TOL = 1e-4        # |volume ratio - 1| below which min() is non-smooth


class BracketInvalid(ValueError):
    """Fixed-point stability is the same at both ends of the temperature bracket."""


class NoFixedPoints(RuntimeError):
    """No root survived verification; the decay term guarantees at least one."""


def _mills(z):
    """phi(z)/Phi(z), stable for arbitrarily negative z."""
    return np.sqrt(2.0 / np.pi) / erfcx(-z / np.sqrt(2.0))


def truncated_surplus(mu, sigma, cutoff):
    """E[x - cutoff | x > cutoff] for x ~ N(mu, sigma^2).

    Equals (mu - cutoff) + sigma * phi(z)/Phi(z) with z = (mu - cutoff)/sigma;
    the Mills ratio is evaluated through erfcx so deep tails (z << -8) stay
    accurate.  The mirrored expectation E[cutoff - x | x < cutoff] is
    ``truncated_surplus(-mu, sigma, -cutoff)``.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    z = (mu - cutoff) / sigma
    return (mu - cutoff) + sigma * _mills(z)


@dataclass(frozen=True)
class MarketTable:
    """Per-market constants of the large-population limit."""

    price: np.ndarray          # pi_m
    q_bid: np.ndarray          # P(bid valid)
    q_ask: np.ndarray          # P(ask valid)
    buyer_surplus: np.ndarray  # E[b - pi | b >= pi]
    seller_surplus: np.ndarray # E[pi - a | a <= pi]


def market_table(params: ModelParams) -> MarketTable:
    theta = np.asarray(params.theta, dtype=float)
    pi = params.mu_ask + theta * (params.mu_bid - params.mu_ask)
    return MarketTable(
        price=pi,
        q_bid=ndtr((params.mu_bid - pi) / params.sigma_bid),
        q_ask=ndtr((pi - params.mu_ask) / params.sigma_ask),
        buyer_surplus=np.array(
            [truncated_surplus(params.mu_bid, params.sigma_bid, p) for p in pi]),
        seller_surplus=np.array(
            [truncated_surplus(-params.mu_ask, params.sigma_ask, -p) for p in pi]),
    )


def expected_returns(x_buy, x_sell, params: ModelParams, table: MarketTable | None = None):
    """Expected scores (r_buy, r_sell) per market for given participation.

    ``x_buy[m]``/``x_sell[m]`` are the population fractions buying/selling
    at market m.  A side with no counterparties earns 0.
    """
    t = table if table is not None else market_table(params)
    x_buy = np.asarray(x_buy, dtype=float)
    x_sell = np.asarray(x_sell, dtype=float)
    vol_bid = x_buy * t.q_bid
    vol_ask = x_sell * t.q_ask
    r_buy = np.zeros(len(vol_bid))
    r_sell = np.zeros(len(vol_ask))
    has_bids = vol_bid > 0
    has_asks = vol_ask > 0
    both = has_bids & has_asks
    r_buy[both] = (t.q_bid * np.minimum(1.0, vol_ask / np.where(both, vol_bid, 1.0))
                   * t.buyer_surplus)[both]
    r_sell[both] = (t.q_ask * np.minimum(1.0, vol_bid / np.where(both, vol_ask, 1.0))
                    * t.seller_surplus)[both]
    return r_buy, r_sell


def volume_ratios(state, params: ModelParams):
    """Valid-bid / valid-ask volume ratio at each market (kink diagnostics)."""
    t = market_table(params)
    x_buy, x_sell = participation(state, params)
    vb = x_buy * t.q_bid
    va = x_sell * t.q_ask
    with np.errstate(divide="ignore", invalid="ignore"):
        return vb / va


def _two_group_fractions(delta, temperature):
    """Fraction of each group choosing market 1: logistic in Delta/T."""
    return 1.0 / (1.0 + np.exp(-np.asarray(delta, dtype=float) / temperature))


def participation(state, params: ModelParams):
    """(x_buy, x_sell) participation fractions per market for a state.

    Four-action states are attraction vectors (A_B1, A_S1, A_B2, A_S2);
    two-group states are the group attraction differences (Delta1, Delta2),
    each group making up half the population.
    """
    state = np.asarray(state, dtype=float)
    if params.variant is Variant.FOUR_ACTION:
        z = state / params.temperature
        e = np.exp(z - z.max())
        P = e / e.sum()
        return P[[0, 2]], P[[1, 3]]
    f = _two_group_fractions(state, params.temperature)
    pb = np.asarray(params.group_buy_prefs, dtype=float)
    f_at = np.stack([f, 1.0 - f])            # (market, group)
    x_buy = 0.5 * (f_at * pb).sum(axis=1)
    x_sell = 0.5 * (f_at * (1.0 - pb)).sum(axis=1)
    return x_buy, x_sell


def flow(state, params: ModelParams, table: MarketTable | None = None):
    """Time derivative of the mean-field state in rescaled time.

    Four-action: dA_g/dt = P_g R_g - A_g for the four attractions.
    Two-group:  dDelta^(g)/dt = f^(g) R_1^(g) - (1 - f^(g)) R_2^(g) - Delta^(g)
    with R_m^(g) = p_B^(g) r_buy[m] + (1 - p_B^(g)) r_sell[m].
    """
    state = np.asarray(state, dtype=float)
    t = table if table is not None else market_table(params)
    x_buy, x_sell = participation(state, params)
    r_buy, r_sell = expected_returns(x_buy, x_sell, params, t)
    if params.variant is Variant.FOUR_ACTION:
        z = state / params.temperature
        e = np.exp(z - z.max())
        P = e / e.sum()
        R = np.array([r_buy[0], r_sell[0], r_buy[1], r_sell[1]])
        return P * R - state
    f = _two_group_fractions(state, params.temperature)
    pb = np.asarray(params.group_buy_prefs, dtype=float)
    R = pb[None, :] * r_buy[:, None] + (1.0 - pb[None, :]) * r_sell[:, None]  # (market, group)
    return f * R[0] - (1.0 - f) * R[1] - state


def flow_jacobian(state, params: ModelParams, step: float = JACOBIAN_STEP):
    """Numerical Jacobian of the flow, central differences.

    Falls back to one-sided (forward) differences when the state sits within
    KINK_TOL of a matching-volume kink, where the central stencil straddles
    the non-differentiable point of min().
    """
    state = np.asarray(state, dtype=float)
    ratios = volume_ratios(state, params)
    one_sided = bool(np.any(np.abs(ratios - 1.0) < KINK_TOL))
    n = len(state)
    J = np.empty((n, n))
    f0 = flow(state, params) if one_sided else None
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        if one_sided:
            J[:, j] = (flow(state + e, params) - f0) / step
        else:
            J[:, j] = (flow(state + e, params) - flow(state - e, params)) / (2 * step)
    return J


@dataclass
class FixedPoint:
    state: np.ndarray
    eigenvalues: np.ndarray
    residual: float

    @property
    def stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))


def _solve_from(guess, params, table):
    sol, info, ier, _ = fsolve(lambda s: flow(s, params, table), guess,
                               full_output=True)
    if ier != 1:
        return None
    if np.max(np.abs(flow(sol, params, table))) > FLOW_TOL:
        return None
    return sol


def _classify(state, params) -> FixedPoint:
    J = flow_jacobian(state, params)
    return FixedPoint(
        state=np.asarray(state, dtype=float),
        eigenvalues=np.linalg.eigvals(J),
        residual=float(np.max(np.abs(flow(state, params)))),
    )


def _seed_states(params: ModelParams, grid: int):
    """Newton seeds covering the state space."""
    T = params.temperature
    if params.variant is Variant.TWO_GROUP:
        fs = np.linspace(0.5 / grid, 1.0 - 0.5 / grid, grid)
        logits = T * np.log(fs / (1.0 - fs))
        return [np.array([a, b]) for a in logits for b in logits]
    # fractions on the 3-simplex mapped to attractions A = T log P
    m = max(3, grid // 2)
    fs = np.linspace(0.5 / m, 1.0 - 0.5 / m, m)
    seeds = []
    for p0 in fs:
        for p1 in fs:
            for p2 in fs:
                p3 = 1.0 - p0 - p1 - p2
                if p3 <= 0.0:
                    continue
                seeds.append(T * np.log(np.array([p0, p1, p2, p3])))
    return seeds


def find_fixed_points(params: ModelParams, grid: int = 21) -> list[FixedPoint]:
    """All fixed points of the flow found from a grid of Newton seeds.

    Roots are verified to FLOW_TOL, deduplicated at DEDUP_TOL and returned
    sorted by their first coordinate.  Seeds that fail to converge are
    dropped; finding no root at all raises NoFixedPoints.
    """
    validate_params(params)
    table = market_table(params)
    found = []
    for guess in _seed_states(params, grid):
        sol = _solve_from(guess, params, table)
        if sol is None:
            continue
        if any(np.linalg.norm(sol - f) < DEDUP_TOL for f in found):
            continue
        found.append(sol)
    if not found:
        raise NoFixedPoints(f"no fixed point found at T={params.temperature}")
    found.sort(key=lambda s: tuple(s))
    return [_classify(s, params) for s in found]


def _initial_branch_guess(params: ModelParams, table: MarketTable):
    if params.variant is Variant.TWO_GROUP:
        return np.array([0.05, -0.05])
    x_buy, x_sell = participation(np.zeros(4), params)
    r_buy, r_sell = expected_returns(x_buy, x_sell, params, table)
    return 0.25 * np.array([r_buy[0], r_sell[0], r_buy[1], r_sell[1]])


def _lead_at(T, params, guess):
    """Fixed point continued to temperature T, and its leading eigenvalue."""
    p = replace(params, temperature=T)
    sol = _solve_from(guess, p, market_table(p))
    if sol is None:
        raise NoFixedPoints(f"lost the unsegregated branch at T={T}")
    return sol, float(_classify(sol, p).eigenvalues.real.max())


def critical_temperature(params: ModelParams, bracket=(0.05, 0.6),
                         tol: float = 1e-4) -> float:
    """Temperature where the unsegregated fixed point loses stability.

    Tracks the fixed point down from the high end of ``bracket`` by
    continuation until the real part of its leading eigenvalue first turns
    non-negative, then bisects the sign change to ``tol``.  Below the
    transition the dynamics grows additional fixed points, so continuation
    stops at the first instability rather than walking the whole bracket.
    Raises BracketInvalid when the stability is the same at both ends.
    """
    validate_params(params)
    t_lo, t_hi = min(bracket), max(bracket)
    p_hi = replace(params, temperature=t_hi)
    guess = _initial_branch_guess(p_hi, market_table(p_hi))

    walk = np.linspace(t_hi, t_lo, 24)
    sol, lead = _lead_at(walk[0], params, guess)
    if lead >= 0:
        raise BracketInvalid(
            f"unsegregated fixed point is already unstable at T={t_hi}")
    hi, hi_state = walk[0], sol
    lo = None
    for T in walk[1:]:
        sol, lead = _lead_at(T, params, hi_state)
        if lead >= 0:
            lo = T
            break
        hi, hi_state = T, sol
    if lo is None:
        raise BracketInvalid(
            f"unsegregated fixed point is stable at both ends of [{t_lo}, {t_hi}]")

    # seed every midpoint from the stable side: just above the transition the
    # symmetric point is far closer to that guess than the bifurcated pair
    while hi - lo > tol:
        mid = 0.5 * (hi + lo)
        sol, lead = _lead_at(mid, params, hi_state)
        if lead >= 0:
            lo = mid
        else:
            hi, hi_state = mid, sol
    return 0.5 * (hi + lo)


def phase_diagram(thetas, params: ModelParams, bracket=(0.05, 0.6),
                  tol: float = 1e-4):
    """(theta, T_c) rows for symmetric market biases theta_1 = 1 - theta_2.

    The previous point's T_c seeds the next bracket (continuation in theta);
    points whose bracket fails are recorded with T_c = nan.
    """
    rows = []
    lo, hi = min(bracket), max(bracket)
    for th in thetas:
        p = replace(params, theta=(float(th), 1.0 - float(th)))
        try:
            tc = critical_temperature(p, bracket=(lo, hi), tol=tol)
            rows.append((float(th), tc))
            # keep a comfortable margin around the moving boundary
            lo = max(min(bracket), tc - 0.15)
            hi = min(max(bracket), tc + 0.15)
            if hi <= lo:
                lo, hi = min(bracket), max(bracket)
        except (BracketInvalid, NoFixedPoints):
            rows.append((float(th), float("nan")))
            lo, hi = min(bracket), max(bracket)
    return rows


def flow_field(params: ModelParams, resolution: int = 21):
    """Two-group flow in fraction coordinates on a regular grid.

    Returns (f1, f2, df1, df2) arrays of shape (resolution, resolution),
    using df/dt = f (1 - f) / T * dDelta/dt.
    """
    if params.variant is not Variant.TWO_GROUP:
        raise ValueError("flow fields are defined for the two-group variant")
    validate_params(params)
    T = params.temperature
    table = market_table(params)
    fs = np.linspace(0.5 / resolution, 1.0 - 0.5 / resolution, resolution)
    f1, f2 = np.meshgrid(fs, fs, indexing="ij")
    df1 = np.empty_like(f1)
    df2 = np.empty_like(f2)
    for i in range(resolution):
        for j in range(resolution):
            delta = T * np.log(np.array([f1[i, j], f2[i, j]])
                               / (1.0 - np.array([f1[i, j], f2[i, j]])))
            d = flow(delta, params, table)
            df1[i, j] = f1[i, j] * (1.0 - f1[i, j]) / T * d[0]
            df2[i, j] = f2[i, j] * (1.0 - f2[i, j]) / T * d[1]
    return f1, f2, df1, df2


def integrate_flow(state0, params: ModelParams, t_max: float, dt: float = 0.01):
    """Classical fourth-order Runge-Kutta integration of the flow.

    Returns (times, states) including the initial state.
    """
    table = market_table(params)
    n_steps = int(round(t_max / dt))
    state = np.asarray(state0, dtype=float).copy()
    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, len(state)))
    times[0] = 0.0
    states[0] = state
    for k in range(n_steps):
        k1 = flow(state, params, table)
        k2 = flow(state + 0.5 * dt * k1, params, table)
        k3 = flow(state + 0.5 * dt * k2, params, table)
        k4 = flow(state + dt * k3, params, table)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        times[k + 1] = (k + 1) * dt
        states[k + 1] = state
    return times, states
