"""Trading-period loops for both model variants, single runs and ensembles.

A period: every agent draws an action from the softmax of its attractions
(four-action: one of buy/sell at market 1/2; two-group: a market, with the
buy/sell side drawn from the agent group's fixed buy probability), draws a
Gaussian bid or ask, both markets clear (see ``auction``), and every agent
updates its chosen attraction with the realized score (zero when it did not
trade) while the others decay.

Ensembles run ``n_runs`` independent trajectories whose RNG substreams
depend only on ``(master_seed, run_index)``; results are therefore
independent of execution order and can be computed in parallel.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from . import auction, observables
from .core import (ACTION_IS_BUY, ACTION_MARKET, AgentState, ModelParams,
                   Variant, run_stream, validate_params)
from .learning import choice_probabilities, update_attractions_inplace

_TINY = np.finfo(float).tiny  # inverse-CDF guard against a uniform of exactly 0


@dataclass(frozen=True)
class RecordingSchedule:
    """What a run keeps.

    ``record_last`` attraction snapshots at the end of the run (the
    steady-state statistics window); the per-period channels are off by
    default because persistence analysis is the only consumer that needs
    every period.
    """

    record_last: int = 100
    record_quadrants: bool = False   # per-period sign-quadrant labels, all periods
    record_popmean: bool = False     # per-period population-mean attractions
    record_actions: bool = False     # per-period chosen action labels


DEFAULT_SCHEDULE = RecordingSchedule()


@dataclass
class ClearingSeries:
    """Per recorded period, per market: price and order-flow counts."""

    price: np.ndarray
    n_bids: np.ndarray
    n_asks: np.ndarray
    n_valid_bids: np.ndarray
    n_valid_asks: np.ndarray
    n_trades: np.ndarray


@dataclass
class Trajectory:
    """One run's recorded history."""

    params: ModelParams
    periods: np.ndarray              # recorded period indices, strictly increasing
    attractions: np.ndarray          # (n_recorded, n_agents, n_choices)
    clearing: ClearingSeries
    final_attractions: np.ndarray    # state after the last period
    quadrants: np.ndarray | None = None   # (horizon, n_agents) int8
    popmean: np.ndarray | None = None     # (horizon, n_choices)
    actions: np.ndarray | None = None     # (horizon, n_agents) int8


def _agents_to_matrix(agents: list[AgentState], params: ModelParams) -> np.ndarray:
    A = np.array([a.attractions for a in agents], dtype=float)
    if A.shape != (params.n_agents, params.n_choices):
        raise ValueError(
            f"expected {params.n_agents} agents with {params.n_choices} attractions, "
            f"got shape {A.shape}")
    return A


def _group_buy_probs(params: ModelParams) -> np.ndarray:
    """Per-agent buy probability; agents 0..N/2-1 are group 1."""
    half = params.n_agents // 2
    pb = np.empty(params.n_agents)
    pb[:half] = params.group_buy_prefs[0]
    pb[half:] = params.group_buy_prefs[1]
    return pb


def _draw_choices(A, params, pb_agent, rng):
    """Draw every agent's action and price for one period.

    Consumes one uniform matrix (row per agent); returns (act, chosen,
    is_buy, market, price) where ``act`` is the canonical 4-action label and
    ``chosen`` the column of the attraction matrix that was played.
    """
    n = A.shape[0]
    P = choice_probabilities(A, params.temperature)
    if params.variant is Variant.FOUR_ACTION:
        U = rng.random((n, 2))
        cum = np.cumsum(P, axis=1)
        act = np.minimum((U[:, :1] > cum).sum(axis=1), 3)
        chosen = act
        is_buy = ACTION_IS_BUY[act]
        market = ACTION_MARKET[act]
        u_price = U[:, 1]
    else:
        U = rng.random((n, 3))
        market = (U[:, 0] > P[:, 0]).astype(np.int64)
        is_buy = U[:, 1] < pb_agent
        act = 2 * market + np.where(is_buy, 0, 1)
        chosen = market
        u_price = U[:, 2]
    z = ndtri(np.maximum(u_price, _TINY))
    price = np.where(is_buy,
                     params.mu_bid + params.sigma_bid * z,
                     params.mu_ask + params.sigma_ask * z)
    return act, chosen, is_buy, market, price


def _clear_both_markets(is_buy, market, price, params, rng, scores):
    """Clear market 0 then market 1; fill ``scores`` in place.

    Returns per-market tuples (pi, buyers, sellers, counts) with global
    agent indices.
    """
    out = []
    for m in range(params.n_markets):
        sel = np.flatnonzero(market == m)
        pi, sc, b, s, counts = auction.clear_arrays(
            is_buy[sel], price[sel], params.theta[m], rng)
        scores[sel] = sc
        out.append((pi, sel[b], sel[s], counts))
    return out


def run_period(agents: list[AgentState], params: ModelParams,
               rng: np.random.Generator):
    """Advance a population by one trading period.

    Returns ``(new_agents, results)`` with one ClearingResult per market;
    scores are keyed by agent index and include every agent that submitted
    to that market.
    """
    validate_params(params)
    A = _agents_to_matrix(agents, params)
    pb_agent = _group_buy_probs(params) if params.variant is Variant.TWO_GROUP else None

    act, chosen, is_buy, market, price = _draw_choices(A, params, pb_agent, rng)
    scores = np.zeros(params.n_agents)
    cleared = _clear_both_markets(is_buy, market, price, params, rng, scores)
    update_attractions_inplace(A, chosen, scores, params.forgetting_rate)

    results = []
    for m, (pi, buyers, sellers, counts) in enumerate(cleared):
        res = auction.ClearingResult(
            price=None if pi is None else float(pi),
            n_bids=counts[0], n_asks=counts[1],
            n_valid_bids=counts[2], n_valid_asks=counts[3], n_trades=counts[4],
        )
        for i in np.flatnonzero(market == m):
            res.scores[int(i)] = float(scores[i])
        res.matches = [(int(b), int(s)) for b, s in zip(buyers, sellers)]
        results.append(res)

    new_agents = [AgentState(A[i].copy(), agents[i].group)
                  for i in range(params.n_agents)]
    return new_agents, results


def run_simulation(params: ModelParams, seed: int = 0,
                   schedule: RecordingSchedule = DEFAULT_SCHEDULE,
                   rng: np.random.Generator | None = None) -> Trajectory:
    """Run ``params.horizon`` trading periods from the all-zero state.

    ``seed`` selects run 0 of that master seed; pass ``rng`` (e.g. from
    ``core.run_stream``) to place the run inside an ensemble.
    """
    validate_params(params)
    if rng is None:
        rng = run_stream(seed, 0)
    n, k, horizon = params.n_agents, params.n_choices, params.horizon
    two_group = params.variant is Variant.TWO_GROUP
    pb_agent = _group_buy_probs(params) if two_group else None

    n_rec = min(schedule.record_last, horizon)
    rec_from = horizon - n_rec
    A = np.zeros((n, k))
    rec_attr = np.empty((n_rec, n, k))
    cs = ClearingSeries(
        price=np.full((n_rec, 2), np.nan),
        n_bids=np.zeros((n_rec, 2), np.int32),
        n_asks=np.zeros((n_rec, 2), np.int32),
        n_valid_bids=np.zeros((n_rec, 2), np.int32),
        n_valid_asks=np.zeros((n_rec, 2), np.int32),
        n_trades=np.zeros((n_rec, 2), np.int32),
    )
    quad = np.empty((horizon, n), np.int8) if schedule.record_quadrants else None
    popmean = np.empty((horizon, k)) if schedule.record_popmean else None
    actions = np.empty((horizon, n), np.int8) if schedule.record_actions else None
    scores = np.empty(n)

    for t in range(horizon):
        act, chosen, is_buy, market, price = _draw_choices(A, params, pb_agent, rng)
        scores[:] = 0.0
        cleared = _clear_both_markets(is_buy, market, price, params, rng, scores)
        update_attractions_inplace(A, chosen, scores, params.forgetting_rate)

        if actions is not None:
            actions[t] = act
        if popmean is not None:
            popmean[t] = A.mean(axis=0)
        if quad is not None:
            if two_group:
                d = A[:, 0] - A[:, 1]
                quad[t] = np.where(d == 0, -1, (d > 0).astype(np.int8))
            else:
                dbs, d12 = observables.reduce_attractions(A)
                quad[t] = observables.quadrant_labels(dbs, d12)
        if t >= rec_from:
            j = t - rec_from
            rec_attr[j] = A
            for m, (pi, _, _, counts) in enumerate(cleared):
                if pi is not None:
                    cs.price[j, m] = pi
                (cs.n_bids[j, m], cs.n_asks[j, m], cs.n_valid_bids[j, m],
                 cs.n_valid_asks[j, m], cs.n_trades[j, m]) = counts

    return Trajectory(
        params=params,
        periods=np.arange(rec_from, horizon),
        attractions=rec_attr,
        clearing=cs,
        final_attractions=A,
        quadrants=quad,
        popmean=popmean,
        actions=actions,
    )


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------

@dataclass
class RunStats:
    """One run reduced to the pooled observables an ensemble keeps."""

    run_index: int
    delta_12: np.ndarray
    p_market1: np.ndarray
    delta_bs: np.ndarray | None
    p_buy: np.ndarray | None
    moments: np.ndarray            # (2, 3): (delta_bs, delta_12) x (sum x^2, sum x^4, n)
    mean_trades: np.ndarray        # (2,) mean trades per market over recorded periods
    persistence: observables.PersistenceRecord | None
    popmean: np.ndarray | None


@dataclass
class EnsembleStats:
    """Pooled steady-state samples over runs x agents x recorded periods."""

    params: ModelParams
    n_runs: int
    master_seed: int
    schedule: RecordingSchedule
    delta_12: np.ndarray
    p_market1: np.ndarray
    delta_bs: np.ndarray | None
    p_buy: np.ndarray | None
    run_moments: np.ndarray        # (n_runs, 2, 3)
    mean_trades: np.ndarray
    persistence: observables.PersistenceRecord | None
    popmean: np.ndarray | None     # (n_runs, horizon, n_choices)

    @property
    def n_samples(self) -> int:
        return len(self.delta_12)

    def binder(self):
        """Pooled Binder cumulants with delete-one-run jackknife stderr.

        Returns a dict with entries ``delta_bs`` (four-action only),
        ``delta_12`` and their average ``mean``, each a (value, stderr)
        pair.
        """
        mom = self.run_moments
        out = {}
        loo_sets = []
        for ci, name in ((0, "delta_bs"), (1, "delta_12")):
            if np.all(mom[:, ci, 2] == 0):
                continue
            b, se = observables.binder_jackknife(
                mom[:, ci, 0], mom[:, ci, 1], mom[:, ci, 2])
            out[name] = (b, se)
            tot = mom[:, ci, :].sum(axis=0)
            loo = np.array([
                observables.binder_from_moments(*(tot - mom[i, ci, :]))
                for i in range(self.n_runs)
            ]) if self.n_runs > 1 else None
            loo_sets.append((observables.binder_from_moments(*tot), loo))
        vals = np.array([v for v, _ in loo_sets])
        if len(loo_sets) > 1 and all(l is not None for _, l in loo_sets):
            loo_mean = np.mean([l for _, l in loo_sets], axis=0)
            R = self.n_runs
            se_mean = float(np.sqrt((R - 1) / R * np.sum((loo_mean - loo_mean.mean()) ** 2)))
        else:
            se_mean = out.get("delta_12", (np.nan, np.nan))[1]
        out["mean"] = (float(vals.mean()), se_mean)
        return out


def reduce_run(traj: Trajectory, run_index: int = 0) -> RunStats:
    """Pool one trajectory's recorded states into flat sample arrays."""
    params = traj.params
    A = traj.attractions
    moments = np.zeros((2, 3))
    if params.variant is Variant.FOUR_ACTION:
        dbs, d12 = observables.reduce_attractions(A)
        p_buy, p1 = observables.preference_coords(A, params.temperature)
        dbs, d12 = dbs.ravel(), d12.ravel()
        p_buy, p1 = p_buy.ravel(), p1.ravel()
        moments[0] = [(dbs ** 2).sum(), (dbs ** 4).sum(), dbs.size]
    else:
        d12 = (A[..., 0] - A[..., 1]).ravel()
        p1 = choice_probabilities(A, params.temperature)[..., 0].ravel()
        dbs = p_buy = None
    moments[1] = [(d12 ** 2).sum(), (d12 ** 4).sum(), d12.size]

    persistence = None
    if traj.quadrants is not None:
        persistence = observables.persistence_times(
            traj.quadrants, params.forgetting_rate)

    return RunStats(
        run_index=run_index,
        delta_12=d12,
        p_market1=p1,
        delta_bs=dbs,
        p_buy=p_buy,
        moments=moments,
        mean_trades=traj.clearing.n_trades.mean(axis=0)
        if len(traj.periods) else np.zeros(2),
        persistence=persistence,
        popmean=traj.popmean,
    )


def _ensemble_worker(args) -> RunStats:
    params, master_seed, run_index, schedule = args
    traj = run_simulation(params, schedule=schedule,
                          rng=run_stream(master_seed, run_index))
    return reduce_run(traj, run_index)


def run_ensemble(params: ModelParams, n_runs: int, master_seed: int = 0,
                 schedule: RecordingSchedule = DEFAULT_SCHEDULE,
                 n_jobs: int = 1) -> EnsembleStats:
    """``n_runs`` independent runs pooled into one EnsembleStats.

    ``n_jobs > 1`` distributes runs over processes; the merge is ordered by
    run index, so the result is identical whatever the execution order.
    """
    validate_params(params)
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    jobs = [(params, master_seed, i, schedule) for i in range(n_runs)]
    if n_jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, n_runs)) as pool:
            stats = list(pool.map(_ensemble_worker, jobs,
                                  chunksize=max(1, n_runs // (4 * n_jobs))))
    else:
        stats = [_ensemble_worker(j) for j in jobs]
    stats.sort(key=lambda s: s.run_index)

    four = params.variant is Variant.FOUR_ACTION
    persistence = None
    if schedule.record_quadrants:
        persistence = observables.PersistenceRecord.merge(
            [s.persistence for s in stats])
    return EnsembleStats(
        params=params,
        n_runs=n_runs,
        master_seed=master_seed,
        schedule=schedule,
        delta_12=np.concatenate([s.delta_12 for s in stats]),
        p_market1=np.concatenate([s.p_market1 for s in stats]),
        delta_bs=np.concatenate([s.delta_bs for s in stats]) if four else None,
        p_buy=np.concatenate([s.p_buy for s in stats]) if four else None,
        run_moments=np.stack([s.moments for s in stats]),
        mean_trades=np.mean([s.mean_trades for s in stats], axis=0),
        persistence=persistence,
        popmean=np.stack([s.popmean for s in stats])
        if schedule.record_popmean else None,
    )


def mc_expected_returns(params: ModelParams, fractions, n_agents: int = 1_000_000,
                        n_periods: int = 1, seed: int = 0):
    """Monte Carlo per-action expected scores from a prescribed population state.

    Every agent is pinned to the same choice distribution (attractions are
    backed out of ``fractions`` through the softmax) and one trading period
    is simulated ``n_periods`` times without learning; scores are averaged
    per action.  Four-action: ``fractions`` is the 4-vector of action
    probabilities, the result has shape (4,).  Two-group: ``fractions`` is
    (f1, f2), the market-1 fraction of each group, and the result has shape
    (2, 2) indexed (market, group).

    This is the brute-force counterpart of ``meanfield.expected_returns``.
    """
    validate_params(replace(params, n_agents=n_agents))
    p = replace(params, n_agents=n_agents)
    fractions = np.asarray(fractions, dtype=float)
    two_group = p.variant is Variant.TWO_GROUP
    if two_group:
        half = n_agents // 2
        deltas = p.temperature * np.log(fractions / (1.0 - fractions))
        A = np.zeros((n_agents, 2))
        A[:half, 0] = deltas[0]
        A[half:, 0] = deltas[1]
        pb_agent = _group_buy_probs(p)
        group = (np.arange(n_agents) >= half).astype(np.int64)
        totals = np.zeros((2, 2))
        counts = np.zeros((2, 2))
    else:
        A = np.tile(p.temperature * np.log(fractions), (n_agents, 1))
        pb_agent = None
        totals = np.zeros(4)
        counts = np.zeros(4)

    rng = run_stream(seed, 0)
    scores = np.empty(n_agents)
    for _ in range(n_periods):
        act, chosen, is_buy, market, price = _draw_choices(A, p, pb_agent, rng)
        scores[:] = 0.0
        _clear_both_markets(is_buy, market, price, p, rng, scores)
        if two_group:
            for m in range(2):
                for g in range(2):
                    sel = (market == m) & (group == g)
                    totals[m, g] += scores[sel].sum()
                    counts[m, g] += sel.sum()
        else:
            for a in range(4):
                sel = act == a
                totals[a] += scores[sel].sum()
                counts[a] += sel.sum()
    return totals / np.maximum(counts, 1)


def stationarity_gap(popmean_runs, early=(1000, 2000), late=(9000, 10000)):
    """Early-vs-late window gap of population-mean attractions.

    Returns the largest |difference| / stderr over attraction components,
    where the stderr pools the per-run window differences.  Values below ~5
    indicate the run length comfortably reaches the steady state.
    """
    pm = np.asarray(popmean_runs)
    e = pm[:, early[0]:early[1], :].mean(axis=1)
    l = pm[:, late[0]:late[1], :].mean(axis=1)
    diff = e - l
    se = diff.std(axis=0, ddof=1) / np.sqrt(pm.shape[0])
    return float(np.max(np.abs(diff.mean(axis=0)) / se))
