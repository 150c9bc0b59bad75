//! Mixed logit models with nonparametric finite mixture distributions.
//!
//! The taste-coefficient distribution is a finite mixture whose support is
//! an unstructured point set, a grid with equal intervals, or a grid with
//! unequal intervals over the coefficient space; both the support locations
//! and the probability masses are estimated. Estimation runs an EM
//! algorithm whose M-steps are bound-constrained weighted logit problems
//! solved by a projected limited-memory quasi-Newton method.
//!
//! The crate also provides long-format panel ingestion, synthetic data
//! generators for three Monte Carlo designs, and post-estimation analytics
//! (information criteria, holdout log-likelihood, willingness-to-pay
//! distributions, mixture moments, marginal mass functions and attribute
//! non-attendance reports).

pub mod analytics;
pub mod config;
pub mod data;
pub mod em;
pub mod error;
pub mod kernel;
pub mod model;
pub mod optim;
pub mod support;
pub mod synth;

pub use analytics::{
    holdout_log_likelihood, info_criteria, ks_distance, marginal_cdf, marginal_pmf,
    mixture_moments, nonattendance_report, wtp_distribution, CostSpec, InfoCriteria,
    MixtureMoments, TimeUnit, WtpDistribution,
};
pub use config::{
    apply_overrides, default_model_config, default_schema_config, parse_model_config,
    parse_schema_config, ModelConfig, WtpConfig,
};
pub use data::{
    load_panel, save_panel, split_holdout, AlternativeRow, ChoicePanel, ColumnSchema, Observation,
    PersonRecord,
};
pub use em::{
    e_step, equal_fit_as_unequal_start, fit, fit_mnl, fit_with_start, initial_values,
    m_step_equal_grid, m_step_shares, m_step_unequal_grid, m_step_unstructured, standard_errors,
    unequal_spec_like, EstimationConfig, FitResult, MStepOptions, MStepOutcome, SeValue,
    StandardErrors,
};
pub use error::{Error, Result};
pub use kernel::{
    logit_probabilities, logsumexp, mixture_log_likelihood, panel_log_likelihood,
    weighted_logit_objective, ObservationWeights,
};
pub use model::{
    CoefficientMeta, CoefficientSpec, CoefficientVector, MixtureModel, ModelFile, ModelMeta,
    ModelSpec, Role, SignConstraint, SupportVariant,
};
pub use optim::{maximize, BoundedProblem, Bounds, SolveReport, SolveStatus};
pub use support::{
    class_coordinates, class_index, enumerate_support, flat_index, parameter_count, ClassIndex,
    MixtureSupport,
};
pub use synth::{
    error_rate, gen_experiment1, gen_experiment2, gen_experiment3, generate, experiment3_mixture,
    sample_truncated_mvn, Experiment, ExperimentKind, SyntheticScenario, TruncatedMvn,
    TruncatedMvnMixture, TruthRecord,
};
