"""MAP classification of range bins and AoAs plus the adaptive LRT detector
with Monte Carlo threshold calibration.

The detector compares the fitted mixture model against the pure-interference
model whose covariance is the plain sample covariance; its threshold is an
order statistic of statistics collected on interference-only scenes, cached
on disk keyed by a configuration digest because calibration dominates cost.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .em import LOG_PI, EmConfig, EmState, Responsibilities, log_likelihood, run_em
from .hermitian import HermitianPd, cholesky, logdet, whiten
from .montecarlo import map_trials
from .scene import AngleGrid, InterferenceConfig, generate_scene, interference_covariance


@dataclass(frozen=True)
class Classification:
    """MAP read-out of one EM run.

    ``s_hat`` has one 0/1 entry per range bin (bin k at position k-1);
    ``omega_t_hat`` is the set of flagged 1-based bins; ``n_hat`` and
    ``theta_hat`` map each flagged bin to its 1-based grid index and angle.
    """

    s_hat: tuple[int, ...]
    omega_t_hat: frozenset[int]
    n_hat: dict[int, int]
    theta_hat: dict[int, float]
    t_hat: int


@dataclass(frozen=True)
class DetectionReport:
    statistic: float
    threshold: float
    decision: str  # "H0" or "H1"
    classification: Classification


def classify_bins(resp: Responsibilities) -> np.ndarray:
    """Per-bin MAP class; an exact tie counts as interference."""
    return (resp.q[:, 1] > resp.q[:, 0]).astype(int)


def estimate_aoas(resp: Responsibilities, omega_t_hat, grid: AngleGrid):
    """MAP grid angle per flagged bin; ties resolve to the smallest index.

    Returns (bin -> grid index, bin -> degrees, target count).
    """
    n_hat: dict[int, int] = {}
    theta_hat: dict[int, float] = {}
    for k1 in sorted(omega_t_hat):
        n = int(np.argmax(resp.r[k1 - 1])) + 1
        n_hat[k1] = n
        theta_hat[k1] = grid.angle(n)
    return n_hat, theta_hat, len(n_hat)


def classify(resp: Responsibilities, grid: AngleGrid) -> Classification:
    """Bundle the bin and angle MAP rules into one record."""
    s_hat = classify_bins(resp)
    omega = frozenset(int(i) + 1 for i in np.flatnonzero(s_hat))
    n_hat, theta_hat, t_hat = estimate_aoas(resp, omega, grid)
    return Classification(tuple(int(s) for s in s_hat), omega, n_hat, theta_hat, t_hat)


def h0_covariance(z) -> HermitianPd:
    """Sample covariance Z Z^H / K, the interference-only ML estimate."""
    z = np.asarray(z, dtype=np.complex128)
    m0 = HermitianPd(z @ z.conj().T / z.shape[1])
    cholesky(m0)  # force the factorization so K < N fails here, not later
    return m0


def _null_loglik(z, m0: HermitianPd) -> float:
    w = whiten(m0, z)
    wsq = np.einsum("ij,ij->j", w.conj(), w).real
    n, k = z.shape
    return float(-k * (n * LOG_PI + logdet(m0)) - wsq.sum())


def lrt_statistic(z, final: EmState, grid: AngleGrid) -> float:
    """Log likelihood ratio of the fitted mixture against the sample-covariance
    interference-only model."""
    z = np.asarray(z, dtype=np.complex128)
    return log_likelihood(z, final, grid) - _null_loglik(z, h0_covariance(z))


def detect(z, eta: float, grid: AngleGrid, cfg: EmConfig) -> DetectionReport:
    """Full pipeline: fit, score against the threshold, classify.

    The classification is populated regardless of the decision so estimation
    metrics can be evaluated unconditionally. A statistic exactly at the
    threshold decides for interference.
    """
    trajectory = run_em(z, grid, cfg)
    final = trajectory[-1]
    statistic = lrt_statistic(z, final, grid)
    decision = "H1" if statistic > eta else "H0"
    return DetectionReport(statistic, eta, decision, classify(final.resp, grid))


def threshold_from_statistics(stats, pfa: float) -> float:
    """ceil(pfa * n)-th largest statistic of a calibration batch."""
    if not 0.0 < pfa < 1.0:
        raise ValueError("false-alarm probability must lie in (0, 1)")
    stats = np.sort(np.asarray(stats, dtype=float))
    if stats.size == 0:
        raise ValueError("cannot calibrate a threshold from zero trials")
    rank = math.ceil(pfa * stats.size)
    return float(stats[stats.size - rank])


def _h0_statistic_trial(payload, index, rng):
    k, grid, interference, m, em_cfg = payload
    scene = generate_scene(k, grid, interference, [], rng, m=m)
    trajectory = run_em(scene.z, grid, em_cfg)
    return lrt_statistic(scene.z, trajectory[-1], grid)


def h0_statistics(
    k: int,
    grid: AngleGrid,
    interference: InterferenceConfig,
    em_cfg: EmConfig,
    n_trials: int,
    base_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Detector statistics on independent interference-only scenes."""
    m = interference_covariance(interference)
    cholesky(m)  # warm the cached factor shipped to every worker
    payload = (k, grid, interference, m, em_cfg)
    return np.asarray(map_trials(_h0_statistic_trial, payload, n_trials, base_seed, workers))


class ThresholdCache:
    """JSON map from configuration digest to a calibrated threshold."""

    def __init__(self, path):
        self.path = path

    def load(self) -> dict:
        if not os.path.exists(self.path):
            return {}
        with open(self.path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def get(self, digest: str):
        entry = self.load().get(digest)
        return None if entry is None else float(entry["eta"])

    def put(self, digest: str, pfa: float, n_trials: int, eta: float, base_seed: int):
        entries = self.load()
        entries[digest] = {
            "pfa": pfa,
            "n_trials": n_trials,
            "eta": eta,
            "base_seed": base_seed,
        }
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(entries, fh, indent=2, sort_keys=True)


def threshold_digest(
    k: int,
    grid: AngleGrid,
    interference: InterferenceConfig,
    em_cfg: EmConfig,
    pfa: float,
    n_trials: int,
    base_seed: int,
) -> str:
    payload = {
        "k": k,
        "grid": list(grid.angles_deg),
        "n": interference.n,
        "sigma_n2": interference.sigma_n2,
        "cnr_db": interference.cnr_db,
        "rho_c": interference.rho_c,
        "rho": em_cfg.rho,
        "max_iters": em_cfg.max_iters,
        "delta": em_cfg.delta,
        "amplitude_sweeps": em_cfg.amplitude_sweeps,
        "jitter": em_cfg.jitter,
        "pfa": pfa,
        "n_trials": n_trials,
        "base_seed": base_seed,
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def calibrate_threshold(
    k: int,
    grid: AngleGrid,
    interference: InterferenceConfig,
    em_cfg: EmConfig,
    pfa: float,
    n_trials: int,
    base_seed: int,
    workers: int = 1,
    cache: ThresholdCache | None = None,
    recalibrate: bool = False,
) -> float:
    """Monte Carlo threshold for the requested false-alarm rate.

    Reuses a cached value for an identical configuration unless
    ``recalibrate`` is set; a fresh run always refreshes the cache.
    """
    digest = threshold_digest(k, grid, interference, em_cfg, pfa, n_trials, base_seed)
    if cache is not None and not recalibrate:
        eta = cache.get(digest)
        if eta is not None:
            return eta
    stats = h0_statistics(k, grid, interference, em_cfg, n_trials, base_seed, workers)
    eta = threshold_from_statistics(stats, pfa)
    if cache is not None:
        cache.put(digest, pfa, n_trials, eta, base_seed)
    return eta
