"""Performance measures over Monte Carlo trial batches: per-bin correct
classification, AoA classification, Hausdorff RMS for positions, RMS errors
for angles and target count, detection/false-alarm rates, and CFAR sweeps.

All aggregations are pure folds in trial order, so batch results do not
depend on how trials were scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import Classification, h0_statistics
from .em import EmConfig
from .scene import AngleGrid, InterferenceConfig


class EmptyBatch(ValueError):
    """A rate or error was requested over zero trials."""


@dataclass(frozen=True)
class TrialOutcome:
    """Per-trial record behind every aggregate metric.

    ``decision`` is None when the trial ran without a detection threshold
    (pure estimation experiments).
    """

    truth_bins: frozenset[int]
    truth_grid_idx: dict[int, int]
    est: Classification
    statistic: float
    decision: str | None


def hausdorff(x, y, k: int) -> float:
    """Max-min index distance between two bin sets.

    When exactly one set is empty there is no min to take; the distance is
    set to ``k``, the largest possible index separation, so RMS aggregation
    stays defined.
    """
    xs, ys = set(x), set(y)
    if not xs and not ys:
        return 0.0
    if not xs or not ys:
        return float(k)
    xa = np.fromiter(xs, dtype=float)
    ya = np.fromiter(ys, dtype=float)
    d = np.abs(xa[:, None] - ya[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def hd_rms(outcomes, k: int) -> float:
    """Root mean square Hausdorff distance between estimated and true bins."""
    if not outcomes:
        raise EmptyBatch("no trials")
    sq = [hausdorff(o.est.omega_t_hat, o.truth_bins, k) ** 2 for o in outcomes]
    return float(np.sqrt(np.mean(sq)))


def rmse_aoa(outcomes, truth_angles_deg, miss_penalty_deg: float = 40.0) -> float:
    """RMS of per-trial mean squared angle errors.

    Each true angle is charged the squared gap to its closest estimate; a
    trial with no estimates at all is charged ``miss_penalty_deg`` squared
    per target (the grid span by default), keeping the metric bounded.
    """
    if not outcomes:
        raise EmptyBatch("no trials")
    truth = np.asarray(truth_angles_deg, dtype=float)
    if truth.size == 0:
        raise ValueError("need at least one true angle")
    per_trial = []
    for o in outcomes:
        ests = np.asarray(sorted(o.est.theta_hat.values()), dtype=float)
        if ests.size == 0:
            per_trial.append(miss_penalty_deg**2)
            continue
        gaps = (truth[:, None] - ests[None, :]) ** 2
        per_trial.append(gaps.min(axis=1).mean())
    return float(np.sqrt(np.mean(per_trial)))


def rmse_count(outcomes) -> float:
    """Root mean square error of the estimated target count."""
    if not outcomes:
        raise EmptyBatch("no trials")
    sq = [(o.est.t_hat - len(o.truth_bins)) ** 2 for o in outcomes]
    return float(np.sqrt(np.mean(sq)))


def ccp_per_bin(outcomes) -> np.ndarray:
    """Percentage of trials classifying each bin correctly (target or not)."""
    if not outcomes:
        raise EmptyBatch("no trials")
    k = len(outcomes[0].est.s_hat)
    hits = np.zeros(k)
    for o in outcomes:
        truth = np.zeros(k, dtype=int)
        for b in o.truth_bins:
            truth[b - 1] = 1
        hits += np.asarray(o.est.s_hat, dtype=int) == truth
    return 100.0 * hits / len(outcomes)


def pc_aoa(outcomes, truth_grid_idx: dict[int, int]) -> dict[int, float]:
    """Per-target percentage of trials that both flag the target's bin and
    pick its (nearest-grid) angle index; all trials count in the denominator."""
    if not outcomes:
        raise EmptyBatch("no trials")
    hits = {b: 0 for b in truth_grid_idx}
    for o in outcomes:
        for b, n_true in truth_grid_idx.items():
            if o.est.n_hat.get(b) == n_true:
                hits[b] += 1
    return {b: 100.0 * c / len(outcomes) for b, c in hits.items()}


def estimate_rate(outcomes) -> float:
    """Fraction of trials decided for the target hypothesis.

    This is Pd when the batch was generated under targets-present data and
    Pfa when it was generated under interference only.
    """
    if not outcomes:
        raise EmptyBatch("no trials")
    decisions = [o.decision for o in outcomes]
    if any(d is None for d in decisions):
        raise ValueError("batch contains trials run without a threshold")
    return sum(d == "H1" for d in decisions) / len(decisions)


def cfar_sweep(
    eta: float,
    axis: str,
    values,
    interference: InterferenceConfig,
    k: int,
    grid: AngleGrid,
    em_cfg: EmConfig,
    n_trials: int,
    base_seed: int,
    workers: int = 1,
) -> list[tuple[float, float]]:
    """Measured false-alarm rate against a fixed threshold while one clutter
    parameter sweeps away from its calibration value.

    ``axis`` selects which field of ``interference`` is replaced per point
    ("rho_c" or "cnr_db"); the threshold is left untouched.
    """
    if axis not in ("rho_c", "cnr_db"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    points = []
    for value in values:
        cfg = InterferenceConfig(
            n=interference.n,
            sigma_n2=interference.sigma_n2,
            cnr_db=float(value) if axis == "cnr_db" else interference.cnr_db,
            rho_c=float(value) if axis == "rho_c" else interference.rho_c,
        )
        stats = h0_statistics(k, grid, cfg, em_cfg, n_trials, base_seed, workers)
        points.append((float(value), float(np.mean(stats > eta))))
    return points


@dataclass
class MetricSummary:
    """Aggregated metrics for one batch; fields that do not apply are None."""

    n_trials: int
    ccp_per_bin: list[float] | None = None
    pc_per_target: dict[int, float] | None = None
    hd_rms: float | None = None
    rmse_aoa: float | None = None
    rmse_t: float | None = None
    pd: float | None = None
    pfa: float | None = None


def summarize(
    outcomes,
    k: int,
    truth_angles_deg,
    truth_grid_idx: dict[int, int],
    miss_penalty_deg: float = 40.0,
) -> MetricSummary:
    """All estimation metrics of a targets-present batch, plus the detection
    rate when the trials carried decisions."""
    if not outcomes:
        raise EmptyBatch("no trials")
    has_decisions = all(o.decision is not None for o in outcomes)
    return MetricSummary(
        n_trials=len(outcomes),
        ccp_per_bin=[float(x) for x in ccp_per_bin(outcomes)],
        pc_per_target=pc_aoa(outcomes, truth_grid_idx),
        hd_rms=hd_rms(outcomes, k),
        rmse_aoa=rmse_aoa(outcomes, truth_angles_deg, miss_penalty_deg),
        rmse_t=rmse_count(outcomes),
        pd=estimate_rate(outcomes) if has_decisions else None,
        pfa=None,
    )
