"""Bundled experiment presets.

Each preset is a complete default configuration for one reproduction
experiment; a config file names a preset and overrides keys as needed.
The "matched" variants put every target AoA on the scan grid, the
"mismatched" variants move two of them between grid points.
"""

from __future__ import annotations

import copy

_BASE = {
    "n": 8,
    "k": 24,
    "grid": {"start": -20.0, "stop": 20.0, "step": 2.0},
    "sigma_n2": 1.0,
    "cnr_db": 15.0,
    "rho_c": 0.9,
    "target_bins": [6, 13, 16],
    "em": {
        "rho": 3.0,
        "max_iters": 4,
        "delta": 1e-4,
        "amplitude_sweeps": 1,
        "jitter": 1e-10,
    },
    "pfa": 1e-3,
    "base_seed": 12345,
    "threshold_cache": "emstad_thresholds.json",
}

_AOAS = {
    "matched": [-16.0, 4.0, 12.0],
    "mismatched": [-15.0, 5.0, 12.0],
}

_EXPERIMENTS = {
    # Mean relative log-likelihood variation per iteration; the stop
    # tolerance is lowered so every trial runs the full iteration budget.
    "convergence": {
        "sinr_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "n_trials": 1000,
        "em": {"max_iters": 6, "delta": 1e-12},
    },
    # Per-bin class labels and AoA estimates over a single trial.
    "snapshot": {"sinr_db": 20.0},
    # Correct classification probability of target position per bin.
    "ccp": {"sinr_grid": [15.0, 20.0], "n_trials": 1000},
    # Probability of selecting each target's true grid angle.
    "pc": {"sinr_grid": [15.0, 20.0], "n_trials": 1000},
    # Hausdorff RMS for positions plus RMSEs for AoA and target count.
    "estimation_rms": {
        "sinr_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "n_trials": 1000,
    },
    # Detection probability against a Monte Carlo calibrated threshold.
    "pd_curve": {
        "sinr_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "n_trials": 1000,
        "n_cal_trials": 100000,
    },
    # False-alarm rate against a fixed threshold while clutter varies.
    "cfar_rho": {
        "sweep_values": [0.5, 0.7, 0.9, 0.95, 0.99],
        "n_trials": 100000,
        "n_cal_trials": 100000,
    },
    "cfar_cnr": {
        "sweep_values": [5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "n_trials": 100000,
        "n_cal_trials": 100000,
    },
}

DESCRIPTIONS = {
    "convergence": "mean relative log-likelihood variation vs SINR per iteration",
    "snapshot": "one-trial per-bin class labels and AoA estimates",
    "ccp": "correct classification probability of target position (%)",
    "pc": "probability of selecting each target's true grid AoA (%)",
    "estimation_rms": "Hausdorff RMS (position) and RMSEs (AoA, target count)",
    "pd_curve": "detection probability vs SINR at fixed false-alarm rate",
    "cfar_rho": "false-alarm rate vs one-lag clutter correlation, fixed threshold",
    "cfar_cnr": "false-alarm rate vs clutter-to-noise ratio, fixed threshold",
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset_names() -> list[str]:
    return [f"{exp}_{var}" for exp in _EXPERIMENTS for var in _AOAS]


def describe(name: str) -> str:
    experiment, _ = split_preset(name)
    return DESCRIPTIONS[experiment]


def split_preset(name: str) -> tuple[str, str]:
    """Split '<experiment>_<variant>' and validate both halves."""
    for variant in _AOAS:
        suffix = f"_{variant}"
        if name.endswith(suffix):
            experiment = name[: -len(suffix)]
            if experiment in _EXPERIMENTS:
                return experiment, variant
    raise KeyError(f"unknown preset {name!r}; choose from {preset_names()}")


def preset_config(name: str) -> dict:
    """Fully resolved default configuration for one preset."""
    experiment, variant = split_preset(name)
    cfg = _merge(_BASE, _EXPERIMENTS[experiment])
    cfg["target_aoas"] = list(_AOAS[variant])
    cfg["preset"] = name
    return cfg
