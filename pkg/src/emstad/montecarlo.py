"""Deterministic per-trial RNG derivation and parallel trial execution.

Trial i of a batch draws from ``PCG64(SeedSequence([base_seed, i]))``, so a
trial's stream depends only on the seed pair, never on worker count or
scheduling; results are returned in trial order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

SEED_RULE = (
    "trial i draws from PCG64(SeedSequence([base_seed, i])); "
    "threshold calibration uses base_seed + 1"
)


def derive_trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    """Independent, platform-stable stream for one Monte Carlo trial."""
    if base_seed < 0 or trial_index < 0:
        raise ValueError("seeds and trial indices must be nonnegative")
    seq = np.random.SeedSequence([int(base_seed), int(trial_index)])
    return np.random.Generator(np.random.PCG64(seq))


def _run_chunk(fn, payload, base_seed, lo, hi):
    return [fn(payload, i, derive_trial_rng(base_seed, i)) for i in range(lo, hi)]


def map_trials(fn, payload, n_trials: int, base_seed: int, workers: int = 1) -> list:
    """Evaluate ``fn(payload, i, rng_i)`` for every trial, optionally across
    processes, and return results ordered by trial index.

    ``fn`` must be a module-level callable (it is sent to worker processes)
    and ``payload`` picklable. Output is identical for any worker count.
    """
    if n_trials < 0:
        raise ValueError("trial count must be nonnegative")
    if n_trials == 0:
        return []
    workers = min(workers, n_trials)
    if workers <= 1:
        return _run_chunk(fn, payload, base_seed, 0, n_trials)

    bounds = np.linspace(0, n_trials, 4 * workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_chunk, fn, payload, base_seed, lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        parts = [f.result() for f in futures]
    return [item for part in parts for item in part]
