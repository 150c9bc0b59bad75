//! EM estimation of finite-mixture logit models.
//!
//! The driver alternates an E-step (posterior class memberships, computed
//! in log space) with the closed-form share update and a variant-matched
//! weighted-logit M-step. Inner solves are warm-started from the current
//! parameters, and an inner solve that merely improves the objective is
//! accepted (generalized EM): every cycle still increases the observed
//! log-likelihood.

mod init;
mod mstep;
mod se;

pub use init::initial_values;
pub use mstep::{
    m_step, m_step_equal_grid, m_step_unequal_grid, m_step_unstructured, MStepOptions,
    MStepOutcome,
};
pub use se::{standard_errors, SeValue, StandardErrors};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analytics::info_criteria;
use crate::data::ChoicePanel;
use crate::error::{Error, Result};
use crate::kernel::{
    class_loglik_matrix, logsumexp, weighted_logit_objective, ObservationWeights, PROB_FLOOR,
};
use crate::model::{CoefficientVector, MixtureModel, ModelSpec, Role};
use crate::optim::{maximize, BoundedProblem, Bounds, SolveReport};
use crate::support::parameter_count;

/// Class shares are never allowed to reach zero; they are floored here and
/// renormalized so the E-step stays well defined.
pub const SHARE_FLOOR: f64 = 1e-12;

/// Estimation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    /// Stop when the absolute change in log-likelihood between successive
    /// EM iterations falls below this threshold.
    pub tolerance: f64,
    /// Replication switch: use the looser 0.1 threshold instead.
    pub paper_convergence: bool,
    pub max_iterations: usize,
    pub seed: u64,
    /// Compute standard errors after convergence (numerical Hessian; can
    /// be slow for large parameter vectors).
    pub standard_errors: bool,
    /// Relative empty-class threshold (multiplied by the person count).
    pub empty_class_threshold: f64,
    /// Inner solver: projected-gradient tolerance per M-step.
    pub inner_gradient_tolerance: f64,
    /// Inner solver: iteration cap per M-step.
    pub inner_max_iterations: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            tolerance: 1e-6,
            paper_convergence: false,
            max_iterations: 2000,
            seed: 0,
            standard_errors: false,
            empty_class_threshold: 1e-8,
            inner_gradient_tolerance: 1e-6,
            inner_max_iterations: 500,
        }
    }
}

impl EstimationConfig {
    pub fn effective_tolerance(&self) -> f64 {
        if self.paper_convergence {
            0.1
        } else {
            self.tolerance
        }
    }

    fn m_step_options(&self) -> MStepOptions {
        MStepOptions {
            gradient_tolerance: self.inner_gradient_tolerance,
            max_iterations: self.inner_max_iterations,
            empty_class_threshold: self.empty_class_threshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "convergence tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A converged (or capped) fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    /// Observed-data log-likelihood at the start of each EM iteration,
    /// including the final value.
    pub ll_trajectory: Vec<f64>,
    /// Number of EM update cycles performed.
    pub iterations: usize,
    pub converged: bool,
    /// Posterior class memberships from the final E-step (N x S).
    pub posteriors: DMatrix<f64>,
    pub final_ll: f64,
    pub bic: f64,
    pub aic: f64,
    pub n_parameters: usize,
    pub standard_errors: Option<StandardErrors>,
    /// Classes frozen in the last M-step (unstructured supports only).
    pub frozen_classes: Vec<usize>,
}

impl FitResult {
    /// Largest single-iteration decrease observed in the trajectory
    /// (zero if the trajectory is perfectly nondecreasing).
    pub fn worst_ll_decrease(&self) -> f64 {
        self.ll_trajectory
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn posterior_stats(model: &MixtureModel, panel: &ChoicePanel) -> Result<(DMatrix<f64>, f64)> {
    let ll_matrix = class_loglik_matrix(model, panel)?;
    let s = model.n_classes();
    let log_shares: Vec<f64> = model
        .class_shares
        .iter()
        .map(|g| g.max(PROB_FLOOR).ln())
        .collect();
    let mut q = DMatrix::zeros(panel.n_persons(), s);
    let mut total_ll = 0.0;
    let mut buf = vec![0.0; s];
    for n in 0..panel.n_persons() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = log_shares[j] + ll_matrix[(n, j)];
        }
        let denom = logsumexp(&buf);
        if !denom.is_finite() {
            return Err(Error::Estimation(format!(
                "person {n} has zero likelihood under every class"
            )));
        }
        total_ll += denom;
        for (j, &b) in buf.iter().enumerate() {
            q[(n, j)] = (b - denom).exp();
        }
    }
    Ok((q, total_ll))
}

/// E-step: posterior class-membership probabilities for every person.
/// Rows sum to one.
pub fn e_step(model: &MixtureModel, panel: &ChoicePanel) -> Result<ObservationWeights> {
    model.validate()?;
    let (q, _) = posterior_stats(model, panel)?;
    Ok(ObservationWeights { w: q })
}

/// Closed-form class-share update: column means of the posteriors, floored
/// at `SHARE_FLOOR` and renormalized onto the simplex.
pub fn m_step_shares(q: &ObservationWeights) -> Vec<f64> {
    let n = q.n_persons() as f64;
    let mut shares: Vec<f64> = (0..q.n_classes())
        .map(|s| q.w.column(s).iter().sum::<f64>() / n)
        .collect();
    for g in shares.iter_mut() {
        if *g < SHARE_FLOOR {
            *g = SHARE_FLOOR;
        }
    }
    let total: f64 = shares.iter().sum();
    for g in shares.iter_mut() {
        *g /= total;
    }
    shares
}

/// Fits `spec` to `panel` from protocol starting values derived from the
/// seed in `config`.
pub fn fit(panel: &ChoicePanel, spec: &ModelSpec, config: &EstimationConfig) -> Result<FitResult> {
    let start = initial_values(panel, spec, config.seed)?;
    fit_with_start(panel, spec, config, start)
}

/// Fits `spec` to `panel` from an explicit starting model (used for warm
/// starts, e.g. seeding an unequal grid from a converged equal grid).
pub fn fit_with_start(
    panel: &ChoicePanel,
    spec: &ModelSpec,
    config: &EstimationConfig,
    start: MixtureModel,
) -> Result<FitResult> {
    config.validate()?;
    spec.validate_against(panel)?;
    start.validate()?;

    let tolerance = config.effective_tolerance();
    let options = config.m_step_options();
    let mut model = start;
    let mut trajectory: Vec<f64> = Vec::new();
    let mut frozen_classes = Vec::new();
    let mut converged = false;

    for iteration in 0..=config.max_iterations {
        let (q, ll) = posterior_stats(&model, panel)?;
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration });
        }
        trajectory.push(ll);
        if let [.., prev, last] = trajectory[..] {
            if (last - prev).abs() < tolerance {
                converged = true;
                break;
            }
        }
        if iteration == config.max_iterations {
            break;
        }

        let weights = ObservationWeights { w: q };
        model.class_shares = m_step_shares(&weights);
        let outcome = mstep::m_step(&weights, panel, &model, &options)?;
        model = outcome.model;
        frozen_classes = outcome.frozen_classes;
    }

    let (posteriors, final_ll) = posterior_stats(&model, panel)?;
    let n_parameters = parameter_count(spec);
    let ic = info_criteria(final_ll, n_parameters, panel.n_persons());

    let mut result = FitResult {
        model,
        iterations: trajectory.len().saturating_sub(1),
        converged,
        posteriors,
        final_ll,
        bic: ic.bic,
        aic: ic.aic,
        n_parameters,
        standard_errors: None,
        frozen_classes,
        ll_trajectory: trajectory,
    };
    if config.standard_errors {
        match standard_errors(&result, panel) {
            Ok(se) => result.standard_errors = Some(se),
            Err(e) => log::warn!("standard errors unavailable: {e}"),
        }
    }
    Ok(result)
}

/// Multinomial-logit fit: the weighted logit objective with unit weights
/// over all coefficients in `spec`, used as the baseline and for starting
/// values.
pub fn fit_mnl(panel: &ChoicePanel, spec: &ModelSpec) -> Result<(CoefficientVector, SolveReport)> {
    spec.validate_against(panel)?;
    let positions: Vec<usize> = spec
        .coefficients
        .iter()
        .map(|c| panel.attribute_index(&c.attribute).unwrap())
        .collect();
    let k_panel = panel.n_attributes();
    let weights = vec![1.0; panel.n_persons()];

    let objective = |theta: &[f64]| {
        let mut beta = vec![0.0; k_panel];
        for (t, &pos) in theta.iter().zip(&positions) {
            beta[pos] = *t;
        }
        let (value, grad_panel) =
            weighted_logit_objective(&beta, panel, &weights).expect("validated inputs");
        let grad = positions.iter().map(|&pos| grad_panel[pos]).collect();
        (value, grad)
    };

    let bounds = Bounds {
        lower: spec.coefficients.iter().map(|c| c.sign.bounds().0).collect(),
        upper: spec.coefficients.iter().map(|c| c.sign.bounds().1).collect(),
    };
    let report = maximize(
        &BoundedProblem::new(objective, vec![0.0; spec.coefficients.len()]).with_bounds(bounds),
    )?;

    let estimate = CoefficientVector {
        labels: spec
            .coefficients
            .iter()
            .map(|c| c.attribute.clone())
            .collect(),
        values: report.solution.clone(),
    };
    Ok((estimate, report))
}

/// Convenience: map a fitted equal grid onto the equivalent unequal grid
/// (equally spaced levels) so it can seed an unequal-interval fit.
pub fn equal_fit_as_unequal_start(model: &MixtureModel) -> Result<MixtureModel> {
    let mut start = model.clone();
    start.support = model.support.to_unequal()?;
    Ok(start)
}

/// Builds a `ModelSpec` whose variant is `unequal` but is otherwise
/// identical, for nesting runs.
pub fn unequal_spec_like(spec: &ModelSpec) -> ModelSpec {
    let mut out = spec.clone();
    out.variant = crate::model::SupportVariant::UnequalGrid;
    out
}

/// Number of fixed coefficients in a fitted model (helper for reports).
pub fn n_fixed(model: &MixtureModel) -> usize {
    model
        .coefficients
        .iter()
        .filter(|c| c.role == Role::Fixed)
        .count()
}
