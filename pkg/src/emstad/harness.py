"""Experiment runner: config parsing, Monte Carlo batch execution, and
CSV/JSON artifact emission for every bundled preset.

Outputs are bitwise reproducible: per-trial RNG streams depend only on
(base_seed, trial index), trials are aggregated in index order, and floats
are written with shortest round-trip formatting. Threshold calibration runs
under ``base_seed + 1`` so measurement batches never share streams with the
batch that set the threshold.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._version import __version__
from .detect import ThresholdCache, calibrate_threshold, classify, lrt_statistic
from .em import EmConfig, run_em, trajectory_to_json
from .metrics import (
    MetricSummary,
    cfar_sweep,
    estimate_rate,
    summarize,
)
from .montecarlo import SEED_RULE, derive_trial_rng, map_trials
from .presets import preset_config, preset_names, split_preset
from .scene import (
    AngleGrid,
    InterferenceConfig,
    TargetSpec,
    generate_scene,
    interference_covariance,
)
from .hermitian import cholesky


class ConfigError(Exception):
    """The experiment configuration is missing, malformed, or inconsistent."""


_KNOWN_KEYS = {
    "preset",
    "n",
    "k",
    "grid",
    "sigma_n2",
    "cnr_db",
    "rho_c",
    "target_bins",
    "target_aoas",
    "em",
    "sinr_grid",
    "sinr_db",
    "pfa",
    "n_trials",
    "n_cal_trials",
    "sweep_values",
    "base_seed",
    "threshold_cache",
}

_NEEDS_SINR_GRID = {"convergence", "ccp", "pc", "estimation_rms", "pd_curve"}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved, validated experiment description."""

    preset: str
    k: int
    grid: AngleGrid
    interference: InterferenceConfig
    target_bins: tuple[int, ...]
    target_aoas: tuple[float, ...]
    em: EmConfig
    sinr_grid: tuple[float, ...]
    sinr_db: float | None
    pfa: float
    n_trials: int
    n_cal_trials: int
    sweep_values: tuple[float, ...]
    base_seed: int
    threshold_cache: str

    @property
    def experiment(self) -> str:
        return split_preset(self.preset)[0]

    def targets(self, sinr_db: float) -> tuple[TargetSpec, ...]:
        return tuple(
            TargetSpec(b, a, sinr_db)
            for b, a in zip(self.target_bins, self.target_aoas)
        )

    def resolved_dict(self) -> dict:
        return {
            "preset": self.preset,
            "n": self.interference.n,
            "k": self.k,
            "grid": list(self.grid.angles_deg),
            "sigma_n2": self.interference.sigma_n2,
            "cnr_db": self.interference.cnr_db,
            "rho_c": self.interference.rho_c,
            "target_bins": list(self.target_bins),
            "target_aoas": list(self.target_aoas),
            "em": {
                "rho": self.em.rho,
                "max_iters": self.em.max_iters,
                "delta": self.em.delta,
                "amplitude_sweeps": self.em.amplitude_sweeps,
                "jitter": self.em.jitter,
            },
            "sinr_grid": list(self.sinr_grid),
            "sinr_db": self.sinr_db,
            "pfa": self.pfa,
            "n_trials": self.n_trials,
            "n_cal_trials": self.n_cal_trials,
            "sweep_values": list(self.sweep_values),
            "base_seed": self.base_seed,
            "threshold_cache": self.threshold_cache,
        }

    def digest(self) -> str:
        blob = json.dumps(self.resolved_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    return raw


def _parse_grid(spec) -> AngleGrid:
    if isinstance(spec, dict) and {"start", "stop", "step"} <= set(spec):
        return AngleGrid.from_range(spec["start"], spec["stop"], spec["step"])
    if isinstance(spec, dict) and "angles" in spec:
        return AngleGrid(tuple(float(a) for a in spec["angles"]))
    raise ConfigError(
        "grid must be {start, stop, step} or {angles: [...]}, got " + repr(spec)
    )


def resolve_config(raw: dict, fast: bool = False) -> ExperimentConfig:
    """Merge a raw config over its preset defaults and validate everything.

    ``fast`` divides the trial budgets by 10 for CI-sized runs.
    """
    if "preset" not in raw:
        raise ConfigError("config must name a preset")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        defaults = preset_config(raw["preset"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None

    cfg = defaults
    for key, value in raw.items():
        if key in ("em", "grid") and isinstance(value, dict):
            cfg[key] = {**cfg.get(key, {}), **value} if key == "em" else value
        else:
            cfg[key] = value

    experiment, _ = split_preset(cfg["preset"])
    try:
        grid = _parse_grid(cfg["grid"])
        interference = InterferenceConfig(
            n=int(cfg["n"]),
            sigma_n2=float(cfg["sigma_n2"]),
            cnr_db=float(cfg["cnr_db"]),
            rho_c=float(cfg["rho_c"]),
        )
        em = EmConfig(**{k: v for k, v in cfg["em"].items()})
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

    bins = tuple(int(b) for b in cfg["target_bins"])
    aoas = tuple(float(a) for a in cfg["target_aoas"])
    if len(bins) != len(aoas):
        raise ConfigError("target_bins and target_aoas must have equal length")
    if len(set(bins)) != len(bins):
        raise ConfigError("target range bins must be distinct")
    k = int(cfg["k"])
    if any(not 1 <= b <= k for b in bins):
        raise ConfigError(f"target bins must lie in 1..{k}")

    pfa = float(cfg["pfa"])
    if not 0.0 < pfa < 1.0:
        raise ConfigError("pfa must lie in (0, 1)")
    base_seed = int(cfg["base_seed"])
    if not 0 <= base_seed < 2**64:
        raise ConfigError("base_seed must be an unsigned 64-bit integer")

    sinr_grid = tuple(float(s) for s in cfg.get("sinr_grid", []))
    if experiment in _NEEDS_SINR_GRID and not sinr_grid:
        raise ConfigError(f"preset {cfg['preset']} needs a nonempty sinr_grid")
    sinr_db = cfg.get("sinr_db")
    if experiment == "snapshot" and sinr_db is None:
        raise ConfigError("snapshot preset needs sinr_db")
    sweep_values = tuple(float(v) for v in cfg.get("sweep_values", []))
    if experiment.startswith("cfar") and not sweep_values:
        raise ConfigError(f"preset {cfg['preset']} needs nonempty sweep_values")

    n_trials = int(cfg.get("n_trials", 1))
    n_cal_trials = int(cfg.get("n_cal_trials", 0)) or max(1, round(100.0 / pfa))
    if fast:
        n_trials = max(1, n_trials // 10)
        n_cal_trials = max(1, n_cal_trials // 10)
    if n_trials < 1:
        raise ConfigError("n_trials must be at least 1")

    return ExperimentConfig(
        preset=cfg["preset"],
        k=k,
        grid=grid,
        interference=interference,
        target_bins=bins,
        target_aoas=aoas,
        em=em,
        sinr_grid=sinr_grid,
        sinr_db=None if sinr_db is None else float(sinr_db),
        pfa=pfa,
        n_trials=n_trials,
        n_cal_trials=n_cal_trials,
        sweep_values=sweep_values,
        base_seed=base_seed,
        threshold_cache=str(cfg["threshold_cache"]),
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


# --- per-trial workers (module level so process pools can import them) ---


def _h1_trial(payload, index, rng):
    from .metrics import TrialOutcome  # local to avoid a module cycle

    k, grid, interference, m, targets, em_cfg, eta = payload
    scene = generate_scene(k, grid, interference, targets, rng, m=m)
    trajectory = run_em(scene.z, grid, em_cfg)
    final = trajectory[-1]
    statistic = lrt_statistic(scene.z, final, grid)
    decision = None if eta is None else ("H1" if statistic > eta else "H0")
    return TrialOutcome(
        truth_bins=scene.truth_bins,
        truth_grid_idx=dict(scene.truth_grid_index),
        est=classify(final.resp, grid),
        statistic=statistic,
        decision=decision,
    )


def _convergence_trial(payload, index, rng):
    k, grid, interference, m, targets, em_cfg, _ = payload
    scene = generate_scene(k, grid, interference, targets, rng, m=m)
    trajectory = run_em(scene.z, grid, em_cfg)
    out = np.full((2, em_cfg.max_iters), np.nan)
    for state in trajectory:
        out[0, state.iteration - 1] = state.rel_change
        out[1, state.iteration - 1] = state.obj_rel_change
    return out


def _trial_payload(cfg: ExperimentConfig, sinr_db: float | None, eta=None):
    m = interference_covariance(cfg.interference)
    cholesky(m)  # cache the factor once; workers inherit it
    targets = () if sinr_db is None else cfg.targets(sinr_db)
    return (cfg.k, cfg.grid, cfg.interference, m, targets, cfg.em, eta)


def run_outcomes(
    cfg: ExperimentConfig, sinr_db: float, workers: int = 1, eta: float | None = None
):
    """Targets-present trial batch for one SINR point, in trial order."""
    payload = _trial_payload(cfg, sinr_db, eta)
    return map_trials(_h1_trial, payload, cfg.n_trials, cfg.base_seed, workers)


# --- preset runners ---


def _run_convergence(cfg: ExperimentConfig, workers: int, out: Path) -> list[str]:
    rows = []
    for sinr in cfg.sinr_grid:
        payload = _trial_payload(cfg, sinr)
        curves = map_trials(
            _convergence_trial, payload, cfg.n_trials, cfg.base_seed, workers
        )
        mean_rel = np.nanmean(np.stack(curves), axis=0)  # (2, max_iters)
        for m_idx in range(mean_rel.shape[1]):
            rows.append(
                (sinr, m_idx + 1, float(mean_rel[0, m_idx]), float(mean_rel[1, m_idx]))
            )
    _write_csv(
        out / "convergence.csv",
        ["sinr_db", "m", "mean_rel_variation", "mean_rel_objective_variation"],
        rows,
    )
    return ["convergence.csv"]


def _run_snapshot(cfg: ExperimentConfig, workers: int, out: Path) -> list[str]:
    rng = derive_trial_rng(cfg.base_seed, 0)
    targets = cfg.targets(cfg.sinr_db)
    scene = generate_scene(cfg.k, cfg.grid, cfg.interference, list(targets), rng)
    trajectory = run_em(scene.z, cfg.grid, cfg.em)
    cls = classify(trajectory[-1].resp, cfg.grid)
    true_theta = {t.range_bin: t.aoa_deg for t in targets}
    rows = []
    for b in range(1, cfg.k + 1):
        rows.append(
            (
                b,
                1 + cls.s_hat[b - 1],
                cls.theta_hat.get(b),
                1 + (1 if b in scene.truth_bins else 0),
                true_theta.get(b),
            )
        )
    _write_csv(
        out / "snapshot.csv",
        ["bin", "class", "theta_hat_deg", "true_class", "true_theta_deg"],
        rows,
    )
    _write_json(out / "trajectory.json", trajectory_to_json(trajectory))
    return ["snapshot.csv", "trajectory.json"]


def _summaries_json(cfg: ExperimentConfig, summaries: list[tuple[float, MetricSummary]]):
    return [
        {
            "sinr_db": sinr,
            "n_trials": s.n_trials,
            "ccp_per_bin": s.ccp_per_bin,
            "pc_per_target": None
            if s.pc_per_target is None
            else {str(b): v for b, v in s.pc_per_target.items()},
            "hd_rms": s.hd_rms,
            "rmse_aoa": s.rmse_aoa,
            "rmse_t": s.rmse_t,
            "pd": s.pd,
            "pfa": s.pfa,
        }
        for sinr, s in summaries
    ]


def _classification_summaries(cfg: ExperimentConfig, workers: int):
    truth_grid_idx = {
        b: cfg.grid.nearest(a) for b, a in zip(cfg.target_bins, cfg.target_aoas)
    }
    results = []
    for sinr in cfg.sinr_grid:
        outcomes = run_outcomes(cfg, sinr, workers)
        summary = summarize(
            outcomes, cfg.k, cfg.target_aoas, truth_grid_idx, cfg.grid.span
        )
        results.append((sinr, outcomes, summary))
    return results


def _run_ccp(cfg: ExperimentConfig, workers: int, out: Path) -> list[str]:
    rows = []
    summaries = []
    for sinr, _, summary in _classification_summaries(cfg, workers):
        for b, pct in enumerate(summary.ccp_per_bin, start=1):
            rows.append((sinr, b, pct))
        summaries.append((sinr, summary))
    _write_csv(out / "ccp.csv", ["sinr_db", "bin", "ccp_pct"], rows)
    _write_json(out / "metrics.json", _summaries_json(cfg, summaries))
    return ["ccp.csv", "metrics.json"]


def _run_pc(cfg: ExperimentConfig, workers: int, out: Path) -> list[str]:
    rows = []
    mean_rows = []
    summaries = []
    aoa_of = dict(zip(cfg.target_bins, cfg.target_aoas))
    for sinr, _, summary in _classification_summaries(cfg, workers):
        for b in cfg.target_bins:
            rows.append((sinr, b, aoa_of[b], summary.pc_per_target[b]))
        mean_rows.append((sinr, float(np.mean(list(summary.pc_per_target.values())))))
        summaries.append((sinr, summary))
    _write_csv(out / "pc.csv", ["sinr_db", "target_bin", "true_aoa_deg", "pc_pct"], rows)
    _write_csv(out / "pc_mean.csv", ["sinr_db", "pc_mean_pct"], mean_rows)
    _write_json(out / "metrics.json", _summaries_json(cfg, summaries))
    return ["pc.csv", "pc_mean.csv", "metrics.json"]


def _run_estimation(cfg: ExperimentConfig, workers: int, out: Path) -> list[str]:
    rows = []
    summaries = []
    for sinr, _, summary in _classification_summaries(cfg, workers):
        rows.append((sinr, summary.hd_rms, summary.rmse_aoa, summary.rmse_t, summary.n_trials))
        summaries.append((sinr, summary))
    _write_csv(
        out / "estimation_rms.csv",
        ["sinr_db", "hd_rms", "rmse_aoa_deg", "rmse_count", "n_trials"],
        rows,
    )
    _write_json(out / "metrics.json", _summaries_json(cfg, summaries))
    return ["estimation_rms.csv", "metrics.json"]


def _threshold(cfg: ExperimentConfig, workers: int, recalibrate: bool) -> float:
    cache = ThresholdCache(cfg.threshold_cache)
    return calibrate_threshold(
        cfg.k,
        cfg.grid,
        cfg.interference,
        cfg.em,
        cfg.pfa,
        cfg.n_cal_trials,
        cfg.base_seed + 1,
        workers=workers,
        cache=cache,
        recalibrate=recalibrate,
    )


def _run_pd_curve(
    cfg: ExperimentConfig, workers: int, out: Path, recalibrate: bool
) -> list[str]:
    eta = _threshold(cfg, workers, recalibrate)
    rows = []
    for sinr in cfg.sinr_grid:
        outcomes = run_outcomes(cfg, sinr, workers, eta=eta)
        rows.append((sinr, estimate_rate(outcomes), cfg.n_trials, eta, cfg.pfa))
    _write_csv(out / "pd.csv", ["sinr_db", "pd", "n_trials", "eta", "pfa"], rows)
    return ["pd.csv"]


def _run_cfar(
    cfg: ExperimentConfig, axis: str, workers: int, out: Path, recalibrate: bool
) -> list[str]:
    eta = _threshold(cfg, workers, recalibrate)
    points = cfar_sweep(
        eta,
        axis,
        cfg.sweep_values,
        cfg.interference,
        cfg.k,
        cfg.grid,
        cfg.em,
        cfg.n_trials,
        cfg.base_seed,
        workers,
    )
    name = f"cfar_{'rho' if axis == 'rho_c' else 'cnr'}.csv"
    rows = [(value, pfa_hat, cfg.n_trials, eta) for value, pfa_hat in points]
    _write_csv(out / name, [axis, "pfa_hat", "n_trials", "eta"], rows)
    return [name]


def default_workers() -> int:
    env = os.environ.get("EMSTAD_WORKERS")
    return max(1, int(env)) if env else 1


def run_experiment(
    config,
    out_dir=None,
    workers: int | None = None,
    fast: bool = False,
    recalibrate: bool = False,
) -> Path:
    """Run one experiment and write its artifacts.

    ``config`` is a config file path or an already-loaded dict. Returns the
    output directory, which holds ``manifest.json`` plus one CSV per curve.
    """
    raw = load_config(config) if not isinstance(config, dict) else dict(config)
    cfg = resolve_config(raw, fast=fast)
    workers = default_workers() if workers is None else max(1, int(workers))
    out = Path(out_dir) if out_dir is not None else Path(f"out_{cfg.preset}")
    out.mkdir(parents=True, exist_ok=True)

    started = datetime.now(timezone.utc).isoformat()
    experiment = cfg.experiment
    if experiment == "convergence":
        outputs = _run_convergence(cfg, workers, out)
    elif experiment == "snapshot":
        outputs = _run_snapshot(cfg, workers, out)
    elif experiment == "ccp":
        outputs = _run_ccp(cfg, workers, out)
    elif experiment == "pc":
        outputs = _run_pc(cfg, workers, out)
    elif experiment == "estimation_rms":
        outputs = _run_estimation(cfg, workers, out)
    elif experiment == "pd_curve":
        outputs = _run_pd_curve(cfg, workers, out, recalibrate)
    elif experiment == "cfar_rho":
        outputs = _run_cfar(cfg, "rho_c", workers, out, recalibrate)
    elif experiment == "cfar_cnr":
        outputs = _run_cfar(cfg, "cnr_db", workers, out, recalibrate)
    else:  # pragma: no cover - presets and runners are kept in sync
        raise ConfigError(f"no runner for preset {cfg.preset}")

    manifest = {
        "config_digest": cfg.digest(),
        "code_version": __version__,
        "preset": cfg.preset,
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
        "seed_rule": SEED_RULE,
        "config": cfg.resolved_dict(),
    }
    _write_json(out / "manifest.json", manifest)
    return out


def list_presets() -> list[tuple[str, str]]:
    from .presets import describe

    return [(name, describe(name)) for name in preset_names()]
