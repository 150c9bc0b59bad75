//! Post-estimation analysis: information criteria, holdout fit,
//! willingness-to-pay distributions, mixture moments, marginal mass
//! functions and attribute non-attendance reports.
//!
//! Everything here is a pure read-only function of a fitted model; the
//! sample size entering the BIC is the number of decision-makers, not the
//! number of observations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ChoicePanel;
use crate::error::{Error, Result};
use crate::kernel::mixture_log_likelihood;
use crate::model::MixtureModel;
use crate::support::enumerate_support;

/// In-sample information criteria.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoCriteria {
    pub bic: f64,
    pub aic: f64,
}

/// AIC = 2P - 2 ll; BIC = -2 ll + P ln(N), with N the person count.
pub fn info_criteria(ll: f64, n_parameters: usize, n_persons: usize) -> InfoCriteria {
    let p = n_parameters as f64;
    InfoCriteria {
        bic: -2.0 * ll + p * (n_persons as f64).ln(),
        aic: 2.0 * p - 2.0 * ll,
    }
}

/// Mixture log-likelihood on unseen persons; no refitting. The holdout
/// panel must carry every attribute the model references.
pub fn holdout_log_likelihood(model: &MixtureModel, holdout: &ChoicePanel) -> Result<f64> {
    model.bind(holdout)?;
    mixture_log_likelihood(model, holdout)
}

/// Identifies the cost coefficient (and optional income interaction) used
/// to turn time coefficients into money values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSpec {
    pub cost_attribute: String,
    /// Attribute holding the cost x income interaction, if the model has
    /// one; the effective cost coefficient is then
    /// `cost + income_interaction * income`.
    #[serde(default)]
    pub income_attribute: Option<String>,
    /// Household income in the units of the interaction (e.g. $100,000s).
    #[serde(default)]
    pub income: f64,
}

/// Unit the time coefficient is denominated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Hours,
    Minutes,
}

impl TimeUnit {
    fn per_hour(self) -> f64 {
        match self {
            TimeUnit::Hours => 1.0,
            TimeUnit::Minutes => 60.0,
        }
    }
}

/// A discrete willingness-to-pay distribution in $/hr.
#[derive(Debug, Clone)]
pub struct WtpDistribution {
    pub time_attribute: String,
    /// Support points in $/hr, ascending, with aggregated masses.
    pub support: Vec<f64>,
    pub mass: Vec<f64>,
    pub mean: f64,
    /// Smallest support point whose cumulative mass reaches one half.
    pub median: f64,
    /// Effective cost coefficient used in the ratio.
    pub cost_coefficient: f64,
    pub income: f64,
}

fn effective_cost_coefficient(model: &MixtureModel, cost: &CostSpec) -> Result<f64> {
    let base = model.fixed_value(&cost.cost_attribute).ok_or_else(|| {
        Error::Analytics(format!(
            "cost attribute '{}' is not a fixed coefficient of the model",
            cost.cost_attribute
        ))
    })?;
    let interaction = match &cost.income_attribute {
        Some(name) if !name.is_empty() => model.fixed_value(name).ok_or_else(|| {
            Error::Analytics(format!(
                "income interaction '{name}' is not a fixed coefficient of the model"
            ))
        })?,
        _ => 0.0,
    };
    Ok(base + interaction * cost.income)
}

/// Value-of-time distribution for one random time dimension: each time
/// mass point divided by the effective cost coefficient, rescaled to $/hr.
pub fn wtp_distribution(
    model: &MixtureModel,
    time_dim: &str,
    cost: &CostSpec,
    unit: TimeUnit,
) -> Result<WtpDistribution> {
    let dim = model.random_index(time_dim).ok_or_else(|| {
        Error::Analytics(format!("'{time_dim}' is not a random dimension of the model"))
    })?;
    let cost_coefficient = effective_cost_coefficient(model, cost)?;
    if cost_coefficient == 0.0 {
        return Err(Error::Analytics(
            "effective cost coefficient is zero; value of time is undefined".into(),
        ));
    }
    let marginal = marginal_pmf(model, &[dim])?;
    let factor = unit.per_hour() / cost_coefficient;
    let mut points: Vec<(f64, f64)> = marginal
        .into_iter()
        .map(|(coord, mass)| (coord[0] * factor, mass))
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // Merge numerically identical values produced by the projection.
    let mut support: Vec<f64> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (v, m) in points {
        match support.last() {
            Some(&last) if last == v => *mass.last_mut().unwrap() += m,
            _ => {
                support.push(v);
                mass.push(m);
            }
        }
    }
    let mean = support.iter().zip(&mass).map(|(v, m)| v * m).sum();
    let mut cum = 0.0;
    let mut median = *support.last().unwrap();
    for (v, m) in support.iter().zip(&mass) {
        cum += m;
        if cum >= 0.5 {
            median = *v;
            break;
        }
    }
    Ok(WtpDistribution {
        time_attribute: time_dim.to_string(),
        support,
        mass,
        mean,
        median,
        cost_coefficient,
        income: cost.income,
    })
}

/// First and second moments of the mixing distribution over the random
/// dimensions.
#[derive(Debug, Clone)]
pub struct MixtureMoments {
    pub dims: Vec<String>,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Correlations; entries involving a zero-variance dimension are NaN.
    pub correlation: DMatrix<f64>,
}

pub fn mixture_moments(model: &MixtureModel) -> Result<MixtureMoments> {
    let points = enumerate_support(&model.support)?;
    let kr = points.nrows();
    let s = points.ncols();
    let shares = &model.class_shares;

    let mut mean = vec![0.0; kr];
    for class in 0..s {
        for k in 0..kr {
            mean[k] += shares[class] * points[(k, class)];
        }
    }
    let mut covariance = DMatrix::<f64>::zeros(kr, kr);
    for class in 0..s {
        for i in 0..kr {
            let di = points[(i, class)] - mean[i];
            for j in 0..kr {
                let dj = points[(j, class)] - mean[j];
                covariance[(i, j)] += shares[class] * di * dj;
            }
        }
    }
    let mut correlation = DMatrix::<f64>::zeros(kr, kr);
    for i in 0..kr {
        for j in 0..kr {
            let denom: f64 = (covariance[(i, i)] * covariance[(j, j)]).sqrt();
            correlation[(i, j)] = if denom > 0.0 {
                covariance[(i, j)] / denom
            } else {
                f64::NAN
            };
        }
    }
    Ok(MixtureMoments {
        dims: model.random_names().iter().map(|s| s.to_string()).collect(),
        mean,
        covariance,
        correlation,
    })
}

/// Marginal probability mass function over a subset of random dimensions:
/// class shares summed over all classes sharing the projected coordinates.
/// Rows are sorted lexicographically by coordinate.
pub fn marginal_pmf(model: &MixtureModel, dims: &[usize]) -> Result<Vec<(Vec<f64>, f64)>> {
    let kr = model.support.n_random_dims();
    if dims.is_empty() || dims.iter().any(|&d| d >= kr) {
        return Err(Error::Analytics(format!(
            "dims {dims:?} invalid for {kr} random dimensions"
        )));
    }
    let points = enumerate_support(&model.support)?;
    let mut table: Vec<(Vec<f64>, f64)> = Vec::new();
    for class in 0..points.ncols() {
        let coord: Vec<f64> = dims.iter().map(|&d| points[(d, class)]).collect();
        match table.iter_mut().find(|(c, _)| *c == coord) {
            Some((_, mass)) => *mass += model.class_shares[class],
            None => table.push((coord, model.class_shares[class])),
        }
    }
    table.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(table)
}

/// Marginal cumulative distribution of one random dimension: sorted support
/// with cumulative masses, ending at one.
pub fn marginal_cdf(model: &MixtureModel, dim: usize) -> Result<Vec<(f64, f64)>> {
    let pmf = marginal_pmf(model, &[dim])?;
    let total: f64 = pmf.iter().map(|(_, m)| m).sum();
    let mut cum = 0.0;
    Ok(pmf
        .into_iter()
        .map(|(coord, mass)| {
            cum += mass;
            (coord[0], cum / total)
        })
        .collect())
}

/// Kolmogorov-Smirnov distance between a discrete step CDF and a reference
/// CDF, evaluated from both sides of every jump.
pub fn ks_distance<F: Fn(f64) -> f64>(step_cdf: &[(f64, f64)], reference: F) -> f64 {
    let mut worst: f64 = 0.0;
    let mut prev = 0.0;
    for &(x, cum) in step_cdf {
        let r = reference(x);
        worst = worst.max((prev - r).abs()).max((cum - r).abs());
        prev = cum;
    }
    worst
}

/// Per-dimension non-attendance diagnostics.
#[derive(Debug, Clone)]
pub struct NonattendanceRow {
    pub dim: String,
    /// Share mass on points within `epsilon` of zero.
    pub mass_near_zero: f64,
    /// True when a mass point sits exactly at zero (typically pinned by a
    /// sign bound).
    pub pinned_at_zero: bool,
    /// Share mass on points at or below the large-negative threshold,
    /// read as a choice-set-formation signal for constants.
    pub large_negative_mass: f64,
}

/// Scans every random dimension for mass at (or pinned to) zero
/// sensitivity and for large negative constants.
pub fn nonattendance_report(
    model: &MixtureModel,
    epsilon: f64,
    negative_threshold: f64,
) -> Result<Vec<NonattendanceRow>> {
    let names = model.random_names();
    let mut rows = Vec::with_capacity(names.len());
    for (dim, name) in names.iter().enumerate() {
        let pmf = marginal_pmf(model, &[dim])?;
        let mut mass_near_zero = 0.0;
        let mut pinned = false;
        let mut large_negative = 0.0;
        for (coord, mass) in &pmf {
            let v = coord[0];
            if v.abs() <= epsilon {
                mass_near_zero += mass;
            }
            if v == 0.0 && *mass > 0.0 {
                pinned = true;
            }
            if v <= -negative_threshold.abs() {
                large_negative += mass;
            }
        }
        rows.push(NonattendanceRow {
            dim: name.to_string(),
            mass_near_zero,
            pinned_at_zero: pinned,
            large_negative_mass: large_negative,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientMeta, Role, SignConstraint};
    use crate::support::MixtureSupport;
    use approx::assert_relative_eq;

    #[test]
    fn information_criteria_match_published_mnl_row() {
        let ic = info_criteria(-10_521.0, 7, 17_700);
        assert!((ic.aic - 21_055.0).abs() <= 1.0, "aic {}", ic.aic);
        assert!((ic.bic - 21_110.0).abs() <= 1.0, "bic {}", ic.bic);
    }

    #[test]
    fn zero_parameters_reduce_aic_to_deviance() {
        let ic = info_criteria(-100.0, 0, 50);
        assert_eq!(ic.aic, 200.0);
        assert_eq!(ic.bic, 200.0);
    }

    #[test]
    fn doubling_parameters_adds_p_log_n_to_bic() {
        let n = 321;
        let a = info_criteria(-55.5, 4, n);
        let b = info_criteria(-55.5, 8, n);
        assert_relative_eq!(b.bic - a.bic, 4.0 * (n as f64).ln(), epsilon = 1e-10);
    }

    fn grid_model(levels: Vec<Vec<f64>>, shares: Vec<f64>) -> MixtureModel {
        let dims = levels.len();
        let mut coefficients = vec![CoefficientMeta {
            name: "cost".into(),
            role: Role::Fixed,
            sign: SignConstraint::Free,
        }];
        for k in 0..dims {
            coefficients.push(CoefficientMeta {
                name: format!("t{k}"),
                role: Role::Random,
                sign: SignConstraint::Free,
            });
        }
        MixtureModel {
            coefficients,
            fixed_values: vec![-0.30],
            support: MixtureSupport::UnequalGrid { levels },
            class_shares: shares,
        }
    }

    #[test]
    fn hand_ratio_value_of_time() {
        let model = grid_model(vec![vec![-6.0]], vec![1.0]);
        let cost = CostSpec {
            cost_attribute: "cost".into(),
            income_attribute: None,
            income: 0.0,
        };
        let wtp = wtp_distribution(&model, "t0", &cost, TimeUnit::Hours).unwrap();
        assert_relative_eq!(wtp.support[0], 20.0, epsilon = 1e-12);
        assert_relative_eq!(wtp.mean, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_time_mass_point_gives_zero_vot() {
        let model = grid_model(vec![vec![-6.0, 0.0]], vec![0.5, 0.5]);
        let cost = CostSpec {
            cost_attribute: "cost".into(),
            income_attribute: None,
            income: 0.0,
        };
        let wtp = wtp_distribution(&model, "t0", &cost, TimeUnit::Hours).unwrap();
        assert!(wtp.support.contains(&0.0));
    }

    #[test]
    fn wtp_mean_and_median_follow_the_masses() {
        // Four-point marginal with masses (0.25, 0.27, 0.25, 0.23).
        let model = grid_model(
            vec![vec![-10.0, -7.5, -4.0, -0.8]],
            vec![0.25, 0.27, 0.25, 0.23],
        );
        let cost = CostSpec {
            cost_attribute: "cost".into(),
            income_attribute: None,
            income: 0.0,
        };
        let wtp = wtp_distribution(&model, "t0", &cost, TimeUnit::Hours).unwrap();
        // VOT ascending: (-0.8, -4, -7.5, -10)/-0.3 reversed.
        let expect: Vec<f64> = vec![-0.8 / -0.3, -4.0 / -0.3, -7.5 / -0.3, -10.0 / -0.3];
        for (a, b) in wtp.support.iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(wtp.mass, vec![0.23, 0.25, 0.27, 0.25]);
        let mean: f64 = wtp
            .support
            .iter()
            .zip(&wtp.mass)
            .map(|(v, m)| v * m)
            .sum();
        assert_relative_eq!(wtp.mean, mean, epsilon = 1e-12);
        // Cumulative 0.23, 0.48, 0.75 -> median at the third point.
        assert_relative_eq!(wtp.median, wtp.support[2], epsilon = 1e-12);
    }

    #[test]
    fn income_interaction_shifts_the_cost_coefficient() {
        let mut model = grid_model(vec![vec![-6.0]], vec![1.0]);
        model.coefficients.push(CoefficientMeta {
            name: "cost_inc".into(),
            role: Role::Fixed,
            sign: SignConstraint::Free,
        });
        model.fixed_values.push(0.02);
        let cost = CostSpec {
            cost_attribute: "cost".into(),
            income_attribute: Some("cost_inc".into()),
            income: 0.875,
        };
        let wtp = wtp_distribution(&model, "t0", &cost, TimeUnit::Hours).unwrap();
        assert_relative_eq!(wtp.cost_coefficient, -0.30 + 0.02 * 0.875, epsilon = 1e-15);
    }

    #[test]
    fn zero_cost_coefficient_is_an_error() {
        let mut model = grid_model(vec![vec![-6.0]], vec![1.0]);
        model.fixed_values[0] = 0.0;
        let cost = CostSpec {
            cost_attribute: "cost".into(),
            income_attribute: None,
            income: 0.0,
        };
        assert!(wtp_distribution(&model, "t0", &cost, TimeUnit::Hours).is_err());
    }

    #[test]
    fn point_mass_moments_are_zero_covariance() {
        let model = grid_model(vec![vec![-2.0]], vec![1.0]);
        let m = mixture_moments(&model).unwrap();
        assert_eq!(m.mean, vec![-2.0]);
        assert_eq!(m.covariance[(0, 0)], 0.0);
        assert!(m.correlation[(0, 0)].is_nan());
    }

    #[test]
    fn two_point_moments_hand_values() {
        // Equi-probable points (0,0) and (2,2).
        let model = MixtureModel {
            coefficients: vec![
                CoefficientMeta {
                    name: "a".into(),
                    role: Role::Random,
                    sign: SignConstraint::Free,
                },
                CoefficientMeta {
                    name: "b".into(),
                    role: Role::Random,
                    sign: SignConstraint::Free,
                },
            ],
            fixed_values: vec![],
            support: MixtureSupport::Unstructured {
                points: vec![vec![0.0, 2.0], vec![0.0, 2.0]],
            },
            class_shares: vec![0.5, 0.5],
        };
        let m = mixture_moments(&model).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(m.covariance[(i, j)], 1.0, epsilon = 1e-14);
                assert_relative_eq!(m.correlation[(i, j)], 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn full_projection_returns_the_classes_verbatim() {
        let model = grid_model(vec![vec![-1.0, 0.0], vec![2.0, 3.0]], vec![0.1, 0.2, 0.3, 0.4]);
        let pmf = marginal_pmf(&model, &[0, 1]).unwrap();
        assert_eq!(pmf.len(), 4);
        let total: f64 = pmf.iter().map(|(_, m)| m).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_two_by_two_grid_has_uniform_marginals() {
        let model = grid_model(vec![vec![-1.0, 0.0], vec![2.0, 3.0]], vec![0.25; 4]);
        for dim in 0..2 {
            let pmf = marginal_pmf(&model, &[dim]).unwrap();
            assert_eq!(pmf.len(), 2);
            assert_relative_eq!(pmf[0].1, 0.5, epsilon = 1e-12);
            assert_relative_eq!(pmf[1].1, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn cdf_steps_to_one_and_is_nondecreasing() {
        let model = grid_model(vec![vec![-3.0, -1.0, 0.5]], vec![0.2, 0.5, 0.3]);
        let cdf = marginal_cdf(&model, 0).unwrap();
        assert_relative_eq!(cdf.last().unwrap().1, 1.0, epsilon = 1e-12);
        for w in cdf.windows(2) {
            assert!(w[0].1 <= w[1].1);
            assert!(w[0].0 < w[1].0);
        }
        let single = grid_model(vec![vec![0.7]], vec![1.0]);
        let cdf = marginal_cdf(&single, 0).unwrap();
        assert_eq!(cdf, vec![(0.7, 1.0)]);
    }

    #[test]
    fn nonattendance_flags_zero_mass_points() {
        let model = grid_model(vec![vec![-9.0, -5.0, -1.5, 0.0]], vec![0.27, 0.25, 0.25, 0.23]);
        let rows = nonattendance_report(&model, 1e-9, 5.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].pinned_at_zero);
        assert_relative_eq!(rows[0].mass_near_zero, 0.23, epsilon = 1e-12);
        assert_relative_eq!(rows[0].large_negative_mass, 0.52, epsilon = 1e-12);

        let far = grid_model(vec![vec![-3.0, -2.0]], vec![0.5, 0.5]);
        let rows = nonattendance_report(&far, 1e-6, 5.0).unwrap();
        assert_eq!(rows[0].mass_near_zero, 0.0);
        assert!(!rows[0].pinned_at_zero);

        let rows = nonattendance_report(&far, f64::INFINITY, 5.0).unwrap();
        assert_relative_eq!(rows[0].mass_near_zero, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ks_distance_of_matching_step_function_is_small() {
        // Step CDF that brackets the reference uniform CDF on [0, 1].
        let steps = vec![(0.25, 0.25), (0.5, 0.5), (0.75, 0.75), (1.0, 1.0)];
        let d = ks_distance(&steps, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.25, epsilon = 1e-12);
    }
}
