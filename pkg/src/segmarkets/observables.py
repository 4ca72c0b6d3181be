"""Reduced coordinates, Binder cumulants, persistence times, histograms.

Agent states are summarized by two attraction differences,

    delta_bs = (A_B1 + A_B2 - A_S1 - A_S2) / 2   (buying vs selling)
    delta_12 = (A_B1 + A_S1 - A_B2 - A_S2) / 2   (market 1 vs market 2)

and by the preference coordinates p_buy = P_B1 + P_B2 and
p_market1 = P_B1 + P_S1 built from the softmax probabilities.  Any positive
rescaling of the deltas leaves sign quadrants and Binder cumulants
unchanged, so downstream observables do not depend on the factor 1/2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import AgentState
from .learning import choice_probabilities


class DegenerateSample(ValueError):
    """All samples are zero; the Binder cumulant is 0/0."""


@dataclass
class ReducedCoords:
    delta_bs: float
    delta_12: float
    p_buy: float
    p_market1: float


def reduce_attractions(A):
    """(delta_bs, delta_12) for attraction arrays of shape (..., 4)."""
    A = np.asarray(A, dtype=float)
    dbs = 0.5 * (A[..., 0] + A[..., 2] - A[..., 1] - A[..., 3])
    d12 = 0.5 * (A[..., 0] + A[..., 1] - A[..., 2] - A[..., 3])
    return dbs, d12


def preference_coords(A, temperature):
    """(p_buy, p_market1) for attraction arrays of shape (..., 4)."""
    P = choice_probabilities(A, temperature)
    return P[..., 0] + P[..., 2], P[..., 0] + P[..., 1]


def reduce_coords(agent: AgentState, temperature: float) -> ReducedCoords:
    """Reduced coordinates of a single four-action agent."""
    A = np.asarray(agent.attractions, dtype=float)
    if A.shape != (4,):
        raise ValueError("reduce_coords needs a four-action agent")
    dbs, d12 = reduce_attractions(A)
    pb, p1 = preference_coords(A, temperature)
    return ReducedCoords(float(dbs), float(d12), float(pb), float(p1))


def binder_cumulant(samples) -> float:
    """B = 1 - <x^4> / (3 <x^2>^2) with raw moments about zero.

    0 for Gaussian samples, 2/3 for a symmetric two-point distribution;
    never exceeds 2/3.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    m2 = np.mean(x * x)
    if m2 == 0.0:
        raise DegenerateSample("all samples are zero")
    m4 = np.mean(x ** 4)
    return 1.0 - m4 / (3.0 * m2 * m2)


def binder_from_moments(m2_sum, m4_sum, count) -> float:
    """Binder cumulant from accumulated raw-moment sums."""
    m2 = m2_sum / count
    if m2 == 0.0:
        raise DegenerateSample("all samples are zero")
    return 1.0 - (m4_sum / count) / (3.0 * m2 * m2)


def binder_jackknife(m2_sums, m4_sums, counts):
    """Pooled Binder cumulant and its delete-one-run jackknife stderr.

    The inputs are per-run sums of x^2 and x^4 and per-run sample counts.
    """
    m2_sums = np.asarray(m2_sums, dtype=float)
    m4_sums = np.asarray(m4_sums, dtype=float)
    counts = np.asarray(counts, dtype=float)
    R = len(counts)
    b = binder_from_moments(m2_sums.sum(), m4_sums.sum(), counts.sum())
    if R < 2:
        return b, float("nan")
    loo = np.array([
        binder_from_moments(m2_sums.sum() - m2_sums[i],
                            m4_sums.sum() - m4_sums[i],
                            counts.sum() - counts[i])
        for i in range(R)
    ])
    se = np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2))
    return b, float(se)


# --------------------------------------------------------------------------
# persistence in sign quadrants
# --------------------------------------------------------------------------

def quadrant_labels(delta_bs, delta_12):
    """int8 labels 0..3 for the sign quadrant of (delta_bs, delta_12).

    -1 where either coordinate is exactly zero (no quadrant, e.g. the
    all-zero initial state).
    """
    dbs = np.asarray(delta_bs)
    d12 = np.asarray(delta_12)
    q = (2 * (dbs > 0) + (d12 > 0)).astype(np.int8)
    q[(dbs == 0) | (d12 == 0)] = -1
    return q


@dataclass
class PersistenceRecord:
    """Quadrant-residence intervals in rescaled time t = r * periods.

    ``completed`` intervals closed with a quadrant change; ``censored``
    intervals were still open when the simulation ended.  ``mean_observed``
    averages over all intervals at their observed (run-length-limited)
    length, which is the quantity that levels off at the simulation length
    in strongly segregated runs; ``mean_completed`` excludes the censored
    ones and is only meaningful while censoring is rare.
    """

    completed: np.ndarray = field(default_factory=lambda: np.empty(0))
    censored: np.ndarray = field(default_factory=lambda: np.empty(0))
    completed_quadrants: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))
    censored_quadrants: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))

    @property
    def n_intervals(self) -> int:
        return len(self.completed) + len(self.censored)

    @property
    def censored_fraction(self) -> float:
        n = self.n_intervals
        return len(self.censored) / n if n else float("nan")

    @property
    def mean_completed(self) -> float:
        return float(np.mean(self.completed)) if len(self.completed) else float("nan")

    @property
    def mean_observed(self) -> float:
        if not self.n_intervals:
            return float("nan")
        total = self.completed.sum() + self.censored.sum()
        return float(total / self.n_intervals)

    @property
    def mean_is_lower_bound(self) -> bool:
        """More than half the intervals ran into the end of the simulation."""
        return self.censored_fraction > 0.5

    @staticmethod
    def merge(records: list["PersistenceRecord"]) -> "PersistenceRecord":
        return PersistenceRecord(
            completed=np.concatenate([r.completed for r in records]) if records else np.empty(0),
            censored=np.concatenate([r.censored for r in records]) if records else np.empty(0),
            completed_quadrants=np.concatenate([r.completed_quadrants for r in records])
            if records else np.empty(0, np.int8),
            censored_quadrants=np.concatenate([r.censored_quadrants for r in records])
            if records else np.empty(0, np.int8),
        )


def persistence_times(quadrants, forgetting_rate: float) -> PersistenceRecord:
    """Quadrant-residence intervals from a full-resolution label trajectory.

    ``quadrants`` has shape (periods, agents) (or (periods,) for a single
    agent) with values from ``quadrant_labels``.  Counting starts at each
    agent's first labelled period; unlabelled periods (-1) in the interior
    extend the current interval.  Durations are r * (period count); the
    final interval of every agent is censored at the horizon.
    """
    q = np.asarray(quadrants)
    if q.ndim == 1:
        q = q[:, None]
    horizon = q.shape[0]
    r = forgetting_rate
    completed, censored = [], []
    completed_q, censored_q = [], []
    for i in range(q.shape[1]):
        idx = np.flatnonzero(q[:, i] >= 0)
        if idx.size == 0:
            continue
        labels = q[idx, i]
        change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
        first = np.concatenate(([0], change))           # per-interval index into labels
        start_periods = idx[first]
        end_periods = np.concatenate((start_periods[1:], [horizon]))
        lengths = (end_periods - start_periods) * r
        labs = labels[first]
        completed.extend(lengths[:-1])
        completed_q.extend(labs[:-1])
        censored.append(lengths[-1])
        censored_q.append(labs[-1])
    return PersistenceRecord(
        completed=np.asarray(completed, dtype=float),
        censored=np.asarray(censored, dtype=float),
        completed_quadrants=np.asarray(completed_q, dtype=np.int8),
        censored_quadrants=np.asarray(censored_q, dtype=np.int8),
    )


# --------------------------------------------------------------------------
# histograms
# --------------------------------------------------------------------------

def histogram2d(x, y, bins=50, ranges=None):
    """2-D histogram over the data range (or explicit ``ranges``)."""
    counts, xedges, yedges = np.histogram2d(x, y, bins=bins, range=ranges)
    return counts, xedges, yedges


def write_histogram_csv(path, counts, xedges, yedges):
    """CSV rows (bin_x_low, bin_y_low, count), full float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_x_low", "bin_y_low", "count"])
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                w.writerow([format(xedges[i], ".17g"),
                            format(yedges[j], ".17g"),
                            int(counts[i, j])])


def crossing_temperature(temperatures, values, level=1.0 / 3.0):
    """Temperature where a descending curve crosses ``level``.

    Scans the (ascending-temperature) grid from the hot end for the first
    bracketing pair and interpolates linearly.  Used on Binder curves, which
    fall from ~2/3 to ~0 with temperature: the B = 1/3 crossing estimates
    the segregation onset.  Returns nan when the curve never crosses.
    """
    t = np.asarray(temperatures, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) != len(v) or len(t) < 2:
        raise ValueError("need matching temperature/value arrays of length >= 2")
    order = np.argsort(t)
    t, v = t[order], v[order]
    for i in range(len(t) - 1, 0, -1):
        if v[i - 1] >= level > v[i]:
            w = (v[i - 1] - level) / (v[i - 1] - v[i])
            return float(t[i - 1] + w * (t[i] - t[i - 1]))
    return float("nan")


def count_modes(counts) -> int:
    """Number of connected above-half-max regions of a histogram.

    Bins with at least half the maximum count are foreground; connectivity
    is 4-neighbour.  One region means a unimodal distribution, four
    well-separated regions the fully segregated state.
    """
    counts = np.asarray(counts)
    if counts.max() <= 0:
        return 0
    mask = counts >= counts.max() / 2.0
    _, n = ndimage.label(mask)
    return int(n)
