from demandmix.evaluation.coverage import (
    ErrorCurve,
    ResponseTimeConfig,
    coverage_curve,
    coverage_fraction,
    operational_error,
)
from demandmix.evaluation.diagnostics import (
    effective_sample_size,
    gelman_rubin,
    summarize_chains,
)
from demandmix.evaluation.scoring import (
    PaResult,
    PosteriorMeanDensity,
    ScoredDensity,
    batch_means_ci,
    event_log_scores,
    normal_ci,
    pa_mix,
    predictive_accuracy,
)

__all__ = [
    "ErrorCurve",
    "PaResult",
    "PosteriorMeanDensity",
    "ResponseTimeConfig",
    "ScoredDensity",
    "batch_means_ci",
    "coverage_curve",
    "coverage_fraction",
    "effective_sample_size",
    "event_log_scores",
    "gelman_rubin",
    "normal_ci",
    "operational_error",
    "pa_mix",
    "predictive_accuracy",
    "summarize_chains",
]
