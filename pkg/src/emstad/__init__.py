"""EM-based classification and adaptive detection of multiple point-like
radar targets with unknown range bins, angles of arrival, and count.

The package provides the estimator and detector as a library plus a CLI
(`emstad`) that reproduces the reference Monte Carlo experiments and writes
CSV/JSON artifacts.
"""

__version__ = "0.1.0"

from .hermitian import (
    HermitianPd,
    NotPositiveDefinite,
    accumulate_outer,
    cholesky,
    logdet,
    quad_form,
)
from .scene import (
    AngleGrid,
    DuplicateBin,
    InterferenceConfig,
    Scene,
    TargetSpec,
    amplitude_from_sinr,
    generate_scene,
    interference_covariance,
    sample_gaussian,
    steering_vector,
)
from .em import (
    DegeneratePosterior,
    EmConfig,
    EmState,
    NoTargetMass,
    Responsibilities,
    component_loglik,
    e_step,
    initial_state,
    log_likelihood,
    run_em,
    update_amplitudes,
    update_angle_pmf,
    update_covariance,
    update_mixing,
)
from .detect import (
    Classification,
    DetectionReport,
    calibrate_threshold,
    classify,
    classify_bins,
    detect,
    estimate_aoas,
    h0_covariance,
    lrt_statistic,
)
from .metrics import (
    EmptyBatch,
    MetricSummary,
    TrialOutcome,
    ccp_per_bin,
    cfar_sweep,
    estimate_rate,
    hausdorff,
    hd_rms,
    pc_aoa,
    rmse_aoa,
    rmse_count,
)
from .montecarlo import derive_trial_rng, map_trials
from .harness import ConfigError, ExperimentConfig, resolve_config, run_experiment
