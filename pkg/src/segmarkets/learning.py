"""Softmax action choice and exponential-forgetting attraction updates."""

from __future__ import annotations

import numpy as np


def choice_probabilities(attractions, temperature):
    """Softmax choice probabilities P = exp(A/T) / sum exp(A/T).

    Works on the last axis of any array of attractions.  The maximum
    attraction is subtracted before exponentiating, so huge attractions
    (e.g. A=1000, T=0.1) cannot overflow.  Probabilities are strictly
    positive and sum to 1 to within 1e-12 for finite inputs.
    """
    A = np.asarray(attractions, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("attractions must be finite")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = A / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def update_attractions(attractions, chosen: int, score: float, forgetting_rate: float):
    """One learning step: the chosen action moves toward its realized score,
    every other attraction decays.

        A_chosen <- (1-r) A_chosen + r S
        A_other  <- (1-r) A_other

    Unplayed actions are treated as having scored 0.  Returns a new array.
    """
    r = forgetting_rate
    if not 0.0 < r <= 1.0:
        raise ValueError(f"forgetting_rate must lie in (0, 1], got {r}")
    A = np.asarray(attractions, dtype=float) * (1.0 - r)
    A[chosen] += r * score
    return A


def update_attractions_inplace(A, chosen_idx, scores, forgetting_rate):
    """Vectorized update for a whole population, modifying ``A`` in place.

    ``A`` has shape (n_agents, n_choices); ``chosen_idx`` and ``scores``
    give each agent's played column and realized score.
    """
    r = forgetting_rate
    A *= 1.0 - r
    A[np.arange(A.shape[0]), chosen_idx] += r * scores
    return A
