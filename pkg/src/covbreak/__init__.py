"""Multiscale detection of breaks in the covariance of high-dimensional data.

Typical offline use::

    import covbreak as cb

    cal = cb.calibrate(X, cb.WindowSet([20, 40]), alpha=0.05, M=1000, seed=1)
    report = cb.detect_offline(X, None, cal)
    if report.rejected:
        print(report.interval)
"""

from .bootstrap import (
    BootstrapMatrix,
    CalibrationResult,
    ResidualSet,
    bootstrap_statistic,
    calibrate,
    compute_residuals,
    draw_bootstrap_stream,
    empirical_quantile,
    familywise_exceedance,
    multiplicity_correct,
    replicate_rng,
    run_replicates,
)
from .detector import Alarm, DetectionReport, OnlineDetector, detect_offline, exceedances, localize
from .exceptions import (
    ConfigurationError,
    CovBreakError,
    DataFormatError,
    InsufficientDataError,
    InvalidInputError,
    NoDetectionError,
    OutOfRangeError,
    SampleTooShortError,
)
from .io import IngestSpec, ingest
from .simulation import (
    CovarianceSpec,
    ExperimentConfig,
    ExperimentResult,
    break_extent,
    delay_sweep,
    gen_break_sample,
    gen_sample,
    realize_covariance,
    run_experiment,
)
from .stats import (
    ScalingVector,
    StatisticsTrace,
    WindowSet,
    compute_scaling,
    scan_all,
    scan_window,
    statistic_at,
    vec_outer,
)

__version__ = "0.1.0"
