"""Complex sparse-group AMP for grant-free activity detection.

The package has three layers:

- problem generation: Zadoff-Chu preambles twisted-shifted over a
  delay-Doppler grid, multipath channels, and synthetic instances
  (`otfs`), plus the core containers and seeded RNG plumbing (`core`);
- recovery: the two-stage complex sparse-group denoiser with its
  closed-form Onsager correction (`denoise`), AMP / FISTA / OST solvers
  (`solvers`), and sklearn-style estimator wrappers (`estimators`);
- experiments: config parsing (`config`), the deterministic Monte Carlo
  harness (`harness`), and the `csgl-amp` command line (`cli`).
"""

from .config import (
    ExperimentConfig,
    FistaSettings,
    config_digest,
    parse_config,
    parse_config_text,
    serialize_config,
)
from .core import (
    GroundTruth,
    GroupPartition,
    GroupedComplexVector,
    ProblemInstance,
    SensingMatrix,
    seeded_rng,
    substream,
)
from .denoise import (
    Thresholds,
    csgl_denoise,
    csgl_denoise_compact,
    numerical_wirtinger_divergence,
    onsager_closed_form,
    soft_threshold_complex,
)
from .estimators import CsglAmp, FistaSgl, OstDetector
from .harness import (
    CalibrationRow,
    MetricsRow,
    RegionRow,
    TrialRecord,
    calibrate_thresholds,
    make_context,
    run_trial,
    snr_sweep,
    validity_region,
)
from .otfs import (
    ChannelProfile,
    DdGrid,
    Preamble,
    build_dd_grid,
    build_sensing_matrix,
    default_preamble_pool,
    sample_channel,
    synthesize,
    twisted_shift,
    veh_a_profile,
    zadoff_chu,
)
from .solvers import (
    AmpDivergenceError,
    DetectionResult,
    OstConfig,
    SolverConfig,
    ost_detect,
    ost_null_threshold,
    run_amp,
    run_amp_batch,
    run_fista_sgl,
    threshold_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core containers
    "GroupPartition", "GroupedComplexVector", "SensingMatrix",
    "GroundTruth", "ProblemInstance", "seeded_rng", "substream",
    # problem generation
    "DdGrid", "build_dd_grid", "Preamble", "zadoff_chu", "twisted_shift",
    "build_sensing_matrix", "default_preamble_pool", "ChannelProfile",
    "veh_a_profile", "sample_channel", "synthesize",
    # denoiser
    "Thresholds", "soft_threshold_complex", "csgl_denoise",
    "csgl_denoise_compact", "onsager_closed_form",
    "numerical_wirtinger_divergence",
    # solvers
    "SolverConfig", "OstConfig", "DetectionResult", "AmpDivergenceError",
    "threshold_schedule", "run_amp", "run_amp_batch", "run_fista_sgl",
    "ost_null_threshold", "ost_detect",
    # estimators
    "CsglAmp", "FistaSgl", "OstDetector",
    # experiments
    "ExperimentConfig", "FistaSettings", "parse_config", "parse_config_text",
    "serialize_config", "config_digest", "MetricsRow", "RegionRow",
    "CalibrationRow", "TrialRecord", "make_context", "run_trial",
    "snr_sweep", "validity_region", "calibrate_thresholds",
]
