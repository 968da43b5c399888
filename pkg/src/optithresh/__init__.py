"""Data-driven thresholds for cohorts of bounded one-dimensional distributions.

Cohorts of histograms or raw samples are summarized at a common set of
thresholds; the quality of a threshold set is measured by Wasserstein-based
losses computed on piecewise-linearized quantile functions, and optimized with
exhaustive, stepwise, or evolutionary solvers.  Includes a synthetic benchmark
harness, CGM-style CSV ingestion, and time-in-range evaluation utilities.
"""

from .histograms import (
    Domain,
    EmpiricalSample,
    Histogram,
    QuantileGrid,
    ThresholdSet,
    amalgamate,
    build_histogram,
    cdf_at,
    empirical_quantile,
    linearized_quantile_grid,
    probability_grid,
    quantile_at,
    quantile_grid,
    soft_amalgamate,
)
from .losses import (
    Cohort,
    LossKind,
    LossSpec,
    bray_curtis,
    evaluate_loss,
    loss_l1,
    loss_l2,
    loss_l2_braycurtis,
    wasserstein_sq,
)
from .optimizers import (
    DEConfig,
    Method,
    OptimizationResult,
    SearchBudgetExceeded,
    differential_evolution,
    exhaustive_search,
    optimize,
    paa_baseline,
    round_up_thresholds,
    stepwise_aggregation,
    stepwise_splitting,
)
from .simulation import (
    BenchmarkReport,
    MixtureSpec,
    WeightScheme,
    generate_cohort,
    run_benchmark,
    sample_dirichlet,
    sample_mixture,
    sample_truncated_normal,
)
from .ingestion import (
    CGM_DOMAIN,
    CsvSchema,
    InclusionPolicy,
    SubjectSeries,
    apply_inclusion,
    empirical_histogram,
    read_cgm_csv,
    write_cgm_csv,
)
from .evaluation import (
    ClassifierResult,
    TIRSummary,
    compare_thresholds,
    fit_univariate_logistic,
    tir_summary,
)

__version__ = "0.1.0"
