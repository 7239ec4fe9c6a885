"""Randomization-based inference for distributions and quantiles of
individual treatment effects in randomized, stratified, matched, and
sampling-based studies."""

__version__ = "0.1.0"

from .model import (
    DataError,
    ExperimentData,
    IntervalFamily,
    MonteCarloConfig,
    OneSidedInterval,
    QuantileHypothesis,
    RankTransform,
    load_experiment,
    switch_labels_negate,
)
from .engine import (
    ExactEnumerationError,
    NullDistribution,
    null_distribution,
    null_for,
    ranks,
    statistic,
    stratified_statistic,
    survival,
)
from .worst_case import best_allocation, brute_force_min, min_stat_cre, min_stat_scre
from .tails import (
    CorrectionSpec,
    choose_kprime_multi,
    choose_kprime_single,
    delta_h,
    delta_m,
)
from .cre import (
    PValueResult,
    band,
    ci_count,
    ci_single,
    combine_treated_control,
    corrected_pvalue,
    intervals_from_treated_only,
    prediction_intervals_treated,
    pvalue_all,
    pvalue_treated,
    simultaneous_cis,
)
from .stratified import (
    SensitivityModel,
    combine_scre,
    intervals_scre,
    pvalue_scre,
    pvalue_sensitivity,
    sensitivity_curve,
    sensitivity_intervals,
    worst_case_tail,
)
from .population import PopulationTarget, population_band, population_cis
from .simulate import DgpSpec, coverage_audit, gamma_study, generate, method_comparison
