"""sourceridge: multi-source Bayesian ridge regression for wide data.

Source-specific shrinkage levels tuned by empirical Bayes, with all heavy
algebra reduced to n-by-n Gram operations, and optional sparsification of
the posterior mode by penalized KL projection.
"""

from .data import (
    ColumnStats,
    MultiSourceDataset,
    ShrinkageVector,
    drop_constant_columns,
    load_dataset,
    load_dataset_dir,
    save_dataset,
    standardize,
)
from .errors import DataError, NumericalError
from .fit import (
    SbrFit,
    load_fit,
    log_marginal,
    posterior_mode,
    posterior_variances,
    predict,
    predict_gram,
    save_fit,
    sigma2_posterior,
)
from .gram import CoreSolve, GramCache, assemble_g, compute_gram, core_solve
from .simulate import (
    SimConfig,
    SimTruth,
    generate_scenario,
    metric_auc,
    metric_correlation,
    sample_gnd,
    scenario_config,
)
from .sparsify import (
    KlContext,
    SparseSolution,
    adaptive_penalties,
    build_relaxed_context,
    build_svd_context,
    expected_kl,
    pcr_penalty,
    solve_general,
    solve_relaxed,
)
from .tuning import TuneConfig, TuneResult, cv_objective, map_objective, ml_objective, tune

__version__ = "0.1.0"

__all__ = [
    "ColumnStats",
    "CoreSolve",
    "DataError",
    "GramCache",
    "KlContext",
    "MultiSourceDataset",
    "NumericalError",
    "SbrFit",
    "ShrinkageVector",
    "SimConfig",
    "SimTruth",
    "SparseSolution",
    "TuneConfig",
    "TuneResult",
    "adaptive_penalties",
    "assemble_g",
    "build_relaxed_context",
    "build_svd_context",
    "compute_gram",
    "core_solve",
    "cv_objective",
    "drop_constant_columns",
    "expected_kl",
    "generate_scenario",
    "load_dataset",
    "load_dataset_dir",
    "load_fit",
    "log_marginal",
    "map_objective",
    "metric_auc",
    "metric_correlation",
    "ml_objective",
    "pcr_penalty",
    "posterior_mode",
    "posterior_variances",
    "predict",
    "predict_gram",
    "sample_gnd",
    "save_dataset",
    "save_fit",
    "scenario_config",
    "sigma2_posterior",
    "solve_general",
    "solve_relaxed",
    "standardize",
    "tune",
]
