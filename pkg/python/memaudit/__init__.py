__version__ = '0.1.0'

from ._errors import (
    MemauditError,
    ConfigurationError,
    InvalidDatasetError,
    InvalidPlanError,
    DimensionMismatchError,
    NumericError,
    FitError,
    PartialTableError,
    FormatError,
    ReportFormatError,
    ReportVersionError,
)

from ._core import (
    FAMILIES,
    derive_seed,
    Dataset,
    subset,
    FoldPlan,
    make_fold_plan,
    EstimatorSpec,
)

from ._numerics import (
    log_sum_exp,
    log_mean_exp,
    quantile,
    adam_step,
    finite_diff_gradient,
)

from ._estimators import (
    DensityEstimator,
    get_estimator,
    fit_model,
    dump_model,
    load_model,
)

from ._memscore import (
    LogProbTable,
    MemorizationResult,
    LooResult,
    QuantileTrace,
    compute_logprob_table,
    aggregate_scores,
    loo_memorization,
    quantile_trace,
    top_fraction,
    summarize_by_label,
)

from ._nn_ratio import (
    DistanceRatios,
    RatioReport,
    downsample_avg2,
    distance_ratio,
    ratio_report,
)

from ._mitigate import (
    DpHistogram,
    with_outlier_component,
    fit_dp_histogram,
    dp_bound_check,
)

from ._datasets import (
    SynthResult,
    load_idx,
    load_csv,
    generate_synth,
    split_holdout,
    load_dataset,
)

from ._report import (
    ReportFile,
    write_report,
    read_report,
    hist_bins,
)

from ._config import load_config, validate_config, config_hash

from ._types import (
    EstimatorDocument,
    RunConfig,
    SynthSpec,
    DatasetSource,
    Provenance,
)

__all__ = (
    '__version__',
    'MemauditError',
    'ConfigurationError',
    'InvalidDatasetError',
    'InvalidPlanError',
    'DimensionMismatchError',
    'NumericError',
    'FitError',
    'PartialTableError',
    'FormatError',
    'ReportFormatError',
    'ReportVersionError',
    'FAMILIES',
    'derive_seed',
    'Dataset',
    'subset',
    'FoldPlan',
    'make_fold_plan',
    'EstimatorSpec',
    'log_sum_exp',
    'log_mean_exp',
    'quantile',
    'adam_step',
    'finite_diff_gradient',
    'DensityEstimator',
    'get_estimator',
    'fit_model',
    'dump_model',
    'load_model',
    'LogProbTable',
    'MemorizationResult',
    'LooResult',
    'QuantileTrace',
    'compute_logprob_table',
    'aggregate_scores',
    'loo_memorization',
    'quantile_trace',
    'top_fraction',
    'summarize_by_label',
    'DistanceRatios',
    'RatioReport',
    'downsample_avg2',
    'distance_ratio',
    'ratio_report',
    'DpHistogram',
    'with_outlier_component',
    'fit_dp_histogram',
    'dp_bound_check',
    'SynthResult',
    'load_idx',
    'load_csv',
    'generate_synth',
    'split_holdout',
    'load_dataset',
    'ReportFile',
    'write_report',
    'read_report',
    'hist_bins',
    'load_config',
    'validate_config',
    'config_hash',
    'EstimatorDocument',
    'RunConfig',
    'SynthSpec',
    'DatasetSource',
    'Provenance',
)
