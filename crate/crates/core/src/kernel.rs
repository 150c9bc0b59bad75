//! Conditional logit probabilities, panel likelihoods, the finite-mixture
//! log-likelihood and the weighted logit objective with its analytic score.
//!
//! Everything is computed in log space with max-subtraction, and choice
//! probabilities are floored at 1e-300 before logs so that extreme
//! coefficients encountered mid-optimization never produce -inf or NaN.
//! Person sums are parallelized in fixed chunks and reduced in person
//! order, so results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{ChoicePanel, Observation, PersonRecord};
use crate::error::{Error, Result};
use crate::model::MixtureModel;

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;
/// ln(PROB_FLOOR).
pub const LOG_PROB_FLOOR: f64 = -690.77552789821368;

/// Persons per parallel work unit; results are concatenated in chunk order
/// so the reduction is deterministic.
const CHUNK: usize = 64;

/// Numerically stable log(sum(exp(x))).
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[inline]
fn utility(beta: &[f64], attributes: &[f64]) -> f64 {
    beta.iter().zip(attributes).map(|(b, x)| b * x).sum()
}

/// Fills `probs` with the observation's choice probabilities (aligned with
/// rows, zero where unavailable) and returns the floored log probability of
/// the chosen alternative. Single pass, no allocation beyond the buffer.
#[inline]
fn obs_log_prob_into(beta: &[f64], obs: &Observation, probs: &mut Vec<f64>) -> f64 {
    probs.clear();
    let mut max_u = f64::NEG_INFINITY;
    let mut chosen_u = f64::NEG_INFINITY;
    for row in &obs.rows {
        let u = if row.available {
            let u = utility(beta, &row.attributes);
            if u > max_u {
                max_u = u;
            }
            if row.chosen {
                chosen_u = u;
            }
            u
        } else {
            f64::NEG_INFINITY
        };
        probs.push(u);
    }
    let mut total = 0.0;
    for p in probs.iter_mut() {
        if p.is_finite() {
            *p = (*p - max_u).exp();
            total += *p;
        } else {
            *p = 0.0;
        }
    }
    let inv = 1.0 / total;
    for p in probs.iter_mut() {
        *p *= inv;
    }
    (chosen_u - max_u - total.ln()).max(LOG_PROB_FLOOR)
}

/// Logit choice probabilities for one observation, aligned with its rows.
/// Unavailable alternatives get probability zero; available probabilities
/// are strictly positive and sum to one.
pub fn logit_probabilities(beta: &[f64], obs: &Observation) -> Result<Vec<f64>> {
    if obs.rows.iter().all(|r| !r.available) {
        return Err(Error::Validation(format!(
            "observation '{}' has an empty choice set",
            obs.obs_id
        )));
    }
    let mut probs = Vec::with_capacity(obs.rows.len());
    obs_log_prob_into(beta, obs, &mut probs);
    Ok(probs)
}

/// Log-likelihood of one person's choice sequence under coefficients `beta`.
pub fn panel_log_likelihood(beta: &[f64], person: &PersonRecord) -> f64 {
    let mut probs = Vec::with_capacity(8);
    person
        .observations
        .iter()
        .map(|obs| obs_log_prob_into(beta, obs, &mut probs))
        .sum()
}

/// Person log-likelihood and its score (gradient with respect to `beta`),
/// accumulated into `score`. `probs` is a caller-owned scratch buffer.
pub(crate) fn person_ll_and_score(
    beta: &[f64],
    person: &PersonRecord,
    score: &mut [f64],
    probs: &mut Vec<f64>,
) -> f64 {
    let mut ll = 0.0;
    for obs in &person.observations {
        ll += obs_log_prob_into(beta, obs, probs);
        for (row, &p) in obs.rows.iter().zip(probs.iter()) {
            if !row.available {
                continue;
            }
            let w = if row.chosen { 1.0 - p } else { -p };
            for (g, &x) in score.iter_mut().zip(&row.attributes) {
                *g += w * x;
            }
        }
    }
    ll
}

/// Posterior-ready weight matrix: one row per person, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWeights {
    pub w: DMatrix<f64>,
}

impl ObservationWeights {
    pub fn n_persons(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w.ncols()
    }

    /// Checks that every row sums to one, as E-step output must.
    pub fn validate_rows(&self) -> Result<()> {
        for n in 0..self.w.nrows() {
            let total: f64 = self.w.row(n).iter().sum();
            if (total - 1.0).abs() > 1e-10 {
                return Err(Error::Validation(format!(
                    "weight row {n} sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        self.w.column(s).iter().cloned().collect()
    }
}

/// Per-person log-likelihood under every class: an (N x S) matrix.
pub(crate) fn class_loglik_matrix(
    model: &MixtureModel,
    panel: &ChoicePanel,
) -> Result<DMatrix<f64>> {
    let betas = model.class_betas(panel)?;
    Ok(class_loglik_matrix_from_betas(&betas, panel))
}

/// Same as [`class_loglik_matrix`] but over explicit per-class coefficient
/// vectors already expanded to panel columns.
pub(crate) fn class_loglik_matrix_from_betas(
    betas: &[Vec<f64>],
    panel: &ChoicePanel,
) -> DMatrix<f64> {
    let n = panel.n_persons();
    let s = betas.len();
    let rows: Vec<Vec<f64>> = panel
        .persons
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|person| {
                    betas
                        .iter()
                        .map(|beta| panel_log_likelihood(beta, person))
                        .collect::<Vec<f64>>()
                })
                .collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    DMatrix::from_row_slice(n, s, &flat)
}

fn validate_shares(model: &MixtureModel) -> Result<()> {
    let total: f64 = model.class_shares.iter().sum();
    if (total - 1.0).abs() > 1e-8 || model.class_shares.iter().any(|&g| g < 0.0) {
        return Err(Error::Validation(format!(
            "class shares off the simplex (sum {total})"
        )));
    }
    Ok(())
}

/// Mixture log-likelihood of the panel under `model`, evaluated with
/// log-sum-exp over classes.
pub fn mixture_log_likelihood(model: &MixtureModel, panel: &ChoicePanel) -> Result<f64> {
    validate_shares(model)?;
    let ll_matrix = class_loglik_matrix(model, panel)?;
    let log_shares: Vec<f64> = model.class_shares.iter().map(|g| g.max(PROB_FLOOR).ln()).collect();
    let mut total = 0.0;
    let mut buf = vec![0.0; model.n_classes()];
    for n in 0..panel.n_persons() {
        for (s, b) in buf.iter_mut().enumerate() {
            *b = log_shares[s] + ll_matrix[(n, s)];
        }
        total += logsumexp(&buf);
    }
    if !total.is_finite() {
        return Err(Error::Estimation("non-finite mixture log-likelihood".into()));
    }
    Ok(total)
}

/// Weighted multinomial-logit objective and analytic gradient.
///
/// `weights` holds one nonnegative weight per person; the value is
/// `sum_n w_n * ll_n(beta)` and the gradient is the matching weighted score.
pub fn weighted_logit_objective(
    beta: &[f64],
    panel: &ChoicePanel,
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if weights.len() != panel.n_persons() {
        return Err(Error::Validation(format!(
            "{} weights for {} persons",
            weights.len(),
            panel.n_persons()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Validation("weights must be nonnegative".into()));
    }
    let k = panel.n_attributes();
    let partials: Vec<(f64, Vec<f64>)> = panel
        .persons
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut value = 0.0;
            let mut grad = vec![0.0; k];
            let mut score = vec![0.0; k];
            let mut probs = Vec::with_capacity(8);
            for (i, person) in chunk.iter().enumerate() {
                let w = weights[c * CHUNK + i];
                if w == 0.0 {
                    continue;
                }
                score.iter_mut().for_each(|g| *g = 0.0);
                let ll = person_ll_and_score(beta, person, &mut score, &mut probs);
                value += w * ll;
                for (g, s) in grad.iter_mut().zip(&score) {
                    *g += w * s;
                }
            }
            (value, grad)
        })
        .collect();

    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    for (v, g) in partials {
        value += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AlternativeRow;
    use crate::model::{CoefficientMeta, Role, SignConstraint};
    use crate::support::MixtureSupport;
    use approx::assert_relative_eq;

    fn obs(rows: Vec<(bool, bool, Vec<f64>)>) -> Observation {
        Observation {
            obs_id: "1".into(),
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (available, chosen, attributes))| AlternativeRow {
                    alternative_id: format!("a{i}"),
                    available,
                    chosen,
                    attributes,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_coefficients_give_uniform_probabilities() {
        let o = obs(vec![
            (true, true, vec![1.0]),
            (true, false, vec![2.0]),
            (true, false, vec![-1.0]),
            (true, false, vec![0.0]),
        ]);
        let p = logit_probabilities(&[0.0], &o).unwrap();
        for &pi in &p {
            assert_relative_eq!(pi, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_alternatives_split_evenly() {
        let o = obs(vec![
            (true, true, vec![0.7, -1.0]),
            (true, false, vec![0.7, -1.0]),
        ]);
        let p = logit_probabilities(&[3.0, -2.5], &o).unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn binary_logit_hand_value() {
        let o = obs(vec![(true, true, vec![1.0]), (true, false, vec![0.0])]);
        let p = logit_probabilities(&[1.0], &o).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(p[0], e / (1.0 + e), epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0 / (1.0 + e), epsilon = 1e-12);
        assert_relative_eq!(p[0], 0.731059, epsilon = 1e-6);
        assert_relative_eq!(p[1], 0.268941, epsilon = 1e-6);
    }

    #[test]
    fn unavailable_rows_get_zero_probability() {
        let o = obs(vec![
            (true, true, vec![1.0]),
            (false, false, vec![5.0]),
            (true, false, vec![0.0]),
        ]);
        let p = logit_probabilities(&[1.0], &o).unwrap();
        assert_eq!(p[1], 0.0);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_choice_set_errors() {
        let o = obs(vec![(false, false, vec![1.0]), (false, false, vec![0.0])]);
        assert!(logit_probabilities(&[1.0], &o).is_err());
    }

    fn person_t_choices(t: usize) -> PersonRecord {
        PersonRecord {
            person_id: "p".into(),
            observations: (0..t)
                .map(|i| {
                    obs(vec![
                        (true, true, vec![i as f64]),
                        (true, false, vec![1.0]),
                        (true, false, vec![-1.0]),
                        (true, false, vec![0.5]),
                    ])
                })
                .collect(),
        }
    }

    #[test]
    fn panel_ll_is_sum_of_observation_logs() {
        let person = person_t_choices(2);
        let beta = [0.3];
        let p1 = logit_probabilities(&beta, &person.observations[0]).unwrap()[0];
        let p2 = logit_probabilities(&beta, &person.observations[1]).unwrap()[0];
        assert_relative_eq!(
            panel_log_likelihood(&beta, &person),
            p1.ln() + p2.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ten_uniform_choices_hand_value() {
        let person = person_t_choices(10);
        assert_relative_eq!(
            panel_log_likelihood(&[0.0], &person),
            10.0 * 0.25f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            panel_log_likelihood(&[0.0], &person),
            -13.8629,
            epsilon = 1e-4
        );
    }

    fn toy_panel() -> ChoicePanel {
        let persons = (0..3)
            .map(|i| PersonRecord {
                person_id: format!("p{i}"),
                observations: vec![obs(vec![
                    (true, i != 1, vec![0.4 * i as f64]),
                    (true, i == 1, vec![-0.3]),
                    (true, false, vec![1.1]),
                ])],
            })
            .collect();
        ChoicePanel::new(
            persons,
            vec!["x".into()],
            vec!["a0".into(), "a1".into(), "a2".into()],
        )
        .unwrap()
    }

    fn two_class_model(points: Vec<f64>, shares: Vec<f64>) -> MixtureModel {
        MixtureModel {
            coefficients: vec![CoefficientMeta {
                name: "x".into(),
                role: Role::Random,
                sign: SignConstraint::Free,
            }],
            fixed_values: vec![],
            support: MixtureSupport::Unstructured {
                points: vec![points],
            },
            class_shares: shares,
        }
    }

    #[test]
    fn single_class_mixture_reduces_to_panel_sum() {
        let panel = toy_panel();
        let model = two_class_model(vec![0.8], vec![1.0]);
        let direct: f64 = panel
            .persons
            .iter()
            .map(|p| panel_log_likelihood(&[0.8], p))
            .sum();
        assert_relative_eq!(
            mixture_log_likelihood(&model, &panel).unwrap(),
            direct,
            epsilon = 1e-12
        );
    }

    #[test]
    fn identical_classes_collapse_regardless_of_shares() {
        let panel = toy_panel();
        let a = two_class_model(vec![0.8, 0.8], vec![0.25, 0.75]);
        let b = two_class_model(vec![0.8, 0.8], vec![0.9, 0.1]);
        let single = two_class_model(vec![0.8], vec![1.0]);
        let lla = mixture_log_likelihood(&a, &panel).unwrap();
        assert_relative_eq!(
            lla,
            mixture_log_likelihood(&b, &panel).unwrap(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            lla,
            mixture_log_likelihood(&single, &panel).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mixture_ll_matches_per_person_brute_force() {
        let panel = toy_panel();
        let model = two_class_model(vec![0.8, -1.2], vec![0.3, 0.7]);
        let mut expected = 0.0;
        for person in &panel.persons {
            let f1 = panel_log_likelihood(&[0.8], person).exp();
            let f2 = panel_log_likelihood(&[-1.2], person).exp();
            expected += (0.3 * f1 + 0.7 * f2).ln();
        }
        assert_relative_eq!(
            mixture_log_likelihood(&model, &panel).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn off_simplex_shares_error() {
        let panel = toy_panel();
        let model = two_class_model(vec![0.8, -1.2], vec![0.3, 0.6]);
        assert!(mixture_log_likelihood(&model, &panel).is_err());
    }

    #[test]
    fn zero_weights_zero_objective() {
        let panel = toy_panel();
        let (v, g) = weighted_logit_objective(&[0.7], &panel, &[0.0; 3]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_weights_reduce_to_plain_log_likelihood() {
        let panel = toy_panel();
        let beta = [0.7];
        let (v, _) = weighted_logit_objective(&beta, &panel, &[1.0; 3]).unwrap();
        let direct: f64 = panel
            .persons
            .iter()
            .map(|p| panel_log_likelihood(&beta, p))
            .sum();
        assert_relative_eq!(v, direct, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // Random 20-person panel with 3 alternatives and 2 attributes.
        let persons: Vec<PersonRecord> = (0..20)
            .map(|i| PersonRecord {
                person_id: format!("p{i}"),
                observations: (0..3)
                    .map(|t| {
                        let chosen = rng.random_range(0..3usize);
                        Observation {
                            obs_id: format!("{t}"),
                            rows: (0..3)
                                .map(|j| AlternativeRow {
                                    alternative_id: format!("a{j}"),
                                    available: true,
                                    chosen: j == chosen,
                                    attributes: vec![
                                        rng.random_range(-1.0..1.0),
                                        rng.random_range(-1.0..1.0),
                                    ],
                                })
                                .collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let panel = ChoicePanel::new(
            persons,
            vec!["x1".into(), "x2".into()],
            vec!["a0".into(), "a1".into(), "a2".into()],
        )
        .unwrap();
        let weights: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..2.0)).collect();
        let beta = [0.4, -0.9];
        let (_, grad) = weighted_logit_objective(&beta, &panel, &weights).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut plus = beta.to_vec();
            let mut minus = beta.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let (vp, _) = weighted_logit_objective(&plus, &panel, &weights).unwrap();
            let (vm, _) = weighted_logit_objective(&minus, &panel, &weights).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel <= 1e-5, "dim {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }
}
