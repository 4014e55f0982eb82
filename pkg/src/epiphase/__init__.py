"""Multiphase epidemic simulation and phase-structure inference.

A renewal-equation epidemic model with piecewise-constant reproduction
numbers. The package simulates stochastic epidemics, fits the number,
timing and magnitude of phases under three priors (fixed changepoint count,
exponential-duration stick-breaking, Dirichlet-process stick-breaking), and
compares candidate models by WAIC and PSIS-LOO.
"""

from .dataio import (
    IfrStep,
    RegionSeries,
    StudyConfig,
    apply_start_rule,
    daily_summary,
    parse_model_flag,
    parse_series,
    read_results,
    write_results,
)
from .diagnostics import DiagnosticsReport, bulk_ess, diagnose, split_rhat
from .likelihood import DeathsLikelihood, InfectionsLikelihood, LikelihoodResult
from .mcmc import (
    FitConfig,
    ModelSpec,
    PosteriorDraws,
    SamplerDivergence,
    build_engine,
    run_mcmc,
    trim_start,
)
from .phases import (
    DPPrior,
    FixedKPrior,
    PhaseTrajectory,
    PPPrior,
    assemble_rt,
    dp_gap_weights,
    dp_stick_weights,
    fixedk_changepoints_logprior,
    occupied_phase_count,
    pp_stick_weights,
    sample_pp_weights,
)
from .priors import ExponentialPrior, GammaPrior, LogNormalPrior
from .renewal import (
    DiscretizedInterval,
    EpidemicState,
    active_infectives,
    death_expectation,
    discretize_gamma,
    effective_r,
    lagged_convolve,
    negbin_log_pmf,
    negbin_sample,
    renewal_expectation,
)
from .selection import (
    LooResult,
    ModelScore,
    SelectionReport,
    WaicResult,
    psis_loo,
    rank_models,
    score_model,
    waic,
)
from .simulate import (
    ScenarioConfig,
    deterministic_infections,
    multiphase_scenario,
    replicate_study,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "DPPrior",
    "DeathsLikelihood",
    "DiagnosticsReport",
    "DiscretizedInterval",
    "EpidemicState",
    "ExponentialPrior",
    "FitConfig",
    "FixedKPrior",
    "GammaPrior",
    "IfrStep",
    "InfectionsLikelihood",
    "LikelihoodResult",
    "LogNormalPrior",
    "LooResult",
    "ModelScore",
    "ModelSpec",
    "PPPrior",
    "PhaseTrajectory",
    "PosteriorDraws",
    "RegionSeries",
    "SamplerDivergence",
    "ScenarioConfig",
    "SelectionReport",
    "StudyConfig",
    "WaicResult",
    "active_infectives",
    "apply_start_rule",
    "assemble_rt",
    "build_engine",
    "bulk_ess",
    "daily_summary",
    "death_expectation",
    "deterministic_infections",
    "diagnose",
    "discretize_gamma",
    "dp_gap_weights",
    "dp_stick_weights",
    "effective_r",
    "fixedk_changepoints_logprior",
    "lagged_convolve",
    "multiphase_scenario",
    "negbin_log_pmf",
    "negbin_sample",
    "occupied_phase_count",
    "parse_model_flag",
    "parse_series",
    "pp_stick_weights",
    "psis_loo",
    "rank_models",
    "read_results",
    "renewal_expectation",
    "replicate_study",
    "run_mcmc",
    "sample_pp_weights",
    "score_model",
    "simulate",
    "split_rhat",
    "trim_start",
    "waic",
    "write_results",
]
