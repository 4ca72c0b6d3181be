"""Shared helpers for the expensive ensemble computations.

Acceptance-grade ensembles (100 runs x 10,000 periods) take minutes each, so
their reduced summaries are cached on disk outside the repository, keyed by
the exact parameters, seeds, schedule and a digest of the package sources.
Results are deterministic, so a cache hit reproduces a fresh run exactly;
editing any source file invalidates the cache.
"""

import dataclasses
import hashlib
import os
from pathlib import Path

import numpy as np

import segmarkets
from segmarkets.core import ModelParams, Variant
from segmarkets.engine import RecordingSchedule, run_ensemble
from segmarkets import observables

CACHE_DIR = Path(os.environ.get(
    "SEGMARKETS_TEST_CACHE",
    os.path.join(os.path.expanduser("~"), ".cache", "segmarkets-tests")))

_SRC_DIGEST = None


def _source_digest() -> str:
    global _SRC_DIGEST
    if _SRC_DIGEST is None:
        h = hashlib.sha256()
        src = Path(segmarkets.__file__).parent
        for path in sorted(src.glob("*.py")):
            h.update(path.name.encode())
            h.update(path.read_bytes())
        _SRC_DIGEST = h.hexdigest()[:16]
    return _SRC_DIGEST


def _key(params: ModelParams, n_runs, master_seed, schedule) -> str:
    fields = dataclasses.asdict(params)
    fields["variant"] = params.variant.value
    spec = (sorted(fields.items()), n_runs, master_seed,
            dataclasses.astuple(schedule), _source_digest(), "v1")
    return hashlib.sha256(repr(spec).encode()).hexdigest()[:24]


def summarize_ensemble(stats) -> dict:
    """Reduce an EnsembleStats to the arrays the acceptance criteria need."""
    out = {
        "run_moments": stats.run_moments,
        "n_samples": np.array(stats.n_samples),
        "mean_trades": stats.mean_trades,
    }
    if stats.params.variant is Variant.FOUR_ACTION:
        counts, xe, ye = observables.histogram2d(stats.delta_bs, stats.delta_12,
                                                 bins=50)
        out["hist_attr"] = counts
        out["hist_xedges"] = xe
        out["hist_yedges"] = ye
    if stats.persistence is not None:
        p = stats.persistence
        out["persistence"] = np.array([
            p.mean_observed, p.mean_completed, p.censored_fraction,
            len(p.completed), len(p.censored)])
    return out


def ensemble_summary(params: ModelParams, n_runs: int, master_seed: int,
                     schedule: RecordingSchedule = RecordingSchedule()) -> dict:
    """Cached reduced summary of one ensemble."""
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    path = CACHE_DIR / f"{_key(params, n_runs, master_seed, schedule)}.npz"
    if path.exists():
        with np.load(path) as z:
            return {k: z[k] for k in z.files}
    stats = run_ensemble(params, n_runs, master_seed, schedule=schedule,
                         n_jobs=min(2, os.cpu_count() or 1))
    out = summarize_ensemble(stats)
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, **out)
    os.replace(tmp, path)
    return out


def binder_mean_with_se(run_moments) -> tuple[float, float]:
    """Pooled Binder cumulant averaged over the recorded coordinates.

    Uses both delta coordinates when present (four-action), otherwise the
    market-preference delta alone; stderr by delete-one-run jackknife.
    """
    mom = np.asarray(run_moments)
    cols = [c for c in (0, 1) if mom[:, c, 2].sum() > 0]
    totals = [mom[:, c, :].sum(axis=0) for c in cols]
    b = float(np.mean([observables.binder_from_moments(*t) for t in totals]))
    R = mom.shape[0]
    loo = np.array([
        np.mean([observables.binder_from_moments(*(t - mom[i, c, :]))
                 for c, t in zip(cols, totals)])
        for i in range(R)
    ])
    se = float(np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))
    return b, se
