//! Standard errors from the inverse of the negative numerical Hessian of
//! the observed-data log-likelihood at the estimate.
//!
//! Class shares enter through an unconstrained log-ratio transform
//! (reference class = largest share) so the Hessian is taken over a free
//! parameter vector; share standard errors are mapped back with the delta
//! method. Parameters sitting on an active bound get a boundary flag
//! instead of a standard error, since the likelihood is one-sided there.

use nalgebra::DMatrix;

use crate::data::ChoicePanel;
use crate::error::{Error, Result};
use crate::kernel::{class_loglik_matrix_from_betas, logsumexp};
use crate::model::Role;

use super::mstep::ParamLayout;
use super::FitResult;

/// How one parameter's uncertainty is reported.
#[derive(Debug, Clone, PartialEq)]
pub enum SeValue {
    Se(f64),
    /// The estimate sits on an active bound; no two-sided SE exists.
    AtBound,
    /// The Hessian was not usable for this parameter.
    Unavailable,
}

#[derive(Debug, Clone)]
pub struct StandardErrors {
    /// (name, estimate, SE) per structural parameter, in the stacked
    /// layout order (fixed coefficients, then support locations).
    pub parameters: Vec<(String, f64, SeValue)>,
    /// Delta-method SEs of the class shares.
    pub share_se: Vec<SeValue>,
}

impl StandardErrors {
    pub fn get(&self, name: &str) -> Option<&(String, f64, SeValue)> {
        self.parameters.iter().find(|(n, _, _)| n == name)
    }
}

const BOUND_EPS: f64 = 1e-9;

/// Computes standard errors for a converged fit.
pub fn standard_errors(fit: &FitResult, panel: &ChoicePanel) -> Result<StandardErrors> {
    let model = &fit.model;
    let s = model.n_classes();
    let layout = ParamLayout::build(model, &vec![false; s])?;
    let theta_struct = layout.extract(model);

    // Log-ratio transform of the shares with the largest share as reference.
    let reference = model
        .class_shares
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let eta: Vec<f64> = (0..s)
        .filter(|&j| j != reference)
        .map(|j| (model.class_shares[j].max(1e-300) / model.class_shares[reference]).ln())
        .collect();

    let positions = model.bind(panel)?;
    let k_panel = panel.n_attributes();
    let roles: Vec<Role> = model.coefficients.iter().map(|c| c.role).collect();
    let fixed_params = layout.fixed_params.clone();

    let shares_from_eta = |eta: &[f64]| -> Vec<f64> {
        let mut z = Vec::with_capacity(s);
        let mut it = eta.iter();
        for j in 0..s {
            if j == reference {
                z.push(0.0);
            } else {
                z.push(*it.next().unwrap());
            }
        }
        let lse = logsumexp(&z);
        z.iter().map(|v| (v - lse).exp()).collect()
    };

    let p_struct = theta_struct.len();
    let p_total = p_struct + eta.len();
    let mut theta_full = theta_struct.clone();
    theta_full.extend(eta.iter());

    let loglik = |theta: &[f64]| -> f64 {
        let coords = layout.coords(&theta[..p_struct], s);
        let mut betas = vec![vec![0.0; k_panel]; s];
        for (class, beta) in betas.iter_mut().enumerate() {
            let mut fixed_i = 0;
            let mut random_i = 0;
            for (role, &pos) in roles.iter().zip(&positions) {
                match role {
                    Role::Fixed => {
                        beta[pos] = theta[fixed_params[fixed_i]];
                        fixed_i += 1;
                    }
                    Role::Random => {
                        beta[pos] = coords[(random_i, class)];
                        random_i += 1;
                    }
                }
            }
        }
        let shares = shares_from_eta(&theta[p_struct..]);
        let log_shares: Vec<f64> = shares.iter().map(|g| g.max(1e-300).ln()).collect();
        let ll_matrix = class_loglik_matrix_from_betas(&betas, panel);
        let mut total = 0.0;
        let mut buf = vec![0.0; s];
        for n in 0..panel.n_persons() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = log_shares[j] + ll_matrix[(n, j)];
            }
            total += logsumexp(&buf);
        }
        total
    };

    // Structural parameters pinned on a bound are excluded from the Hessian.
    let at_bound: Vec<bool> = layout
        .entries
        .iter()
        .zip(&theta_struct)
        .map(|(e, &v)| {
            (e.lower.is_finite() && (v - e.lower).abs() <= BOUND_EPS)
                || (e.upper.is_finite() && (v - e.upper).abs() <= BOUND_EPS)
        })
        .collect();
    let free: Vec<usize> = (0..p_total)
        .filter(|&i| i >= p_struct || !at_bound[i])
        .collect();
    let n_free = free.len();

    let steps: Vec<f64> = free
        .iter()
        .map(|&i| 1e-3 * theta_full[i].abs().max(1.0))
        .collect();

    let f0 = loglik(&theta_full);
    if !f0.is_finite() {
        return Err(Error::Estimation(
            "log-likelihood not finite at the estimate".into(),
        ));
    }

    // Central-difference Hessian over the free parameters.
    let mut hessian = DMatrix::zeros(n_free, n_free);
    for a in 0..n_free {
        let (i, hi) = (free[a], steps[a]);
        // Diagonal: (f(+h) - 2 f(0) + f(-h)) / h^2.
        let mut plus = theta_full.clone();
        plus[i] += hi;
        let mut minus = theta_full.clone();
        minus[i] -= hi;
        hessian[(a, a)] = (loglik(&plus) - 2.0 * f0 + loglik(&minus)) / (hi * hi);
        for b in (a + 1)..n_free {
            let (j, hj) = (free[b], steps[b]);
            let mut pp = theta_full.clone();
            pp[i] += hi;
            pp[j] += hj;
            let mut pm = theta_full.clone();
            pm[i] += hi;
            pm[j] -= hj;
            let mut mp = theta_full.clone();
            mp[i] -= hi;
            mp[j] += hj;
            let mut mm = theta_full.clone();
            mm[i] -= hi;
            mm[j] -= hj;
            let v = (loglik(&pp) - loglik(&pm) - loglik(&mp) + loglik(&mm)) / (4.0 * hi * hj);
            hessian[(a, b)] = v;
            hessian[(b, a)] = v;
        }
    }

    let covariance = (-hessian).try_inverse().ok_or_else(|| {
        Error::Estimation("negative Hessian is not invertible; standard errors omitted".into())
    })?;

    let se_of_free = |i: usize| -> SeValue {
        match free.iter().position(|&f| f == i) {
            Some(a) => {
                let v = covariance[(a, a)];
                if v.is_finite() && v > 0.0 {
                    SeValue::Se(v.sqrt())
                } else {
                    SeValue::Unavailable
                }
            }
            None => SeValue::AtBound,
        }
    };

    let parameters: Vec<(String, f64, SeValue)> = layout
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name.clone(), theta_struct[i], se_of_free(i)))
        .collect();

    // Delta method for the shares: Var(g) = J V_eta J' with
    // J[s][t] = g_s (1{s=t'} - g_t') over the non-reference classes.
    let eta_free: Vec<usize> = (0..eta.len())
        .filter_map(|t| {
            let i = p_struct + t;
            free.iter().position(|&f| f == i)
        })
        .collect();
    let share_se = if eta_free.len() == eta.len() && s > 1 {
        let v_eta = DMatrix::from_fn(eta.len(), eta.len(), |r, c| {
            covariance[(eta_free[r], eta_free[c])]
        });
        let shares = &model.class_shares;
        let non_ref: Vec<usize> = (0..s).filter(|&j| j != reference).collect();
        (0..s)
            .map(|j| {
                let row = DMatrix::from_fn(1, eta.len(), |_, t| {
                    let jt = non_ref[t];
                    let indicator = if j == jt { 1.0 } else { 0.0 };
                    shares[j] * (indicator - shares[jt])
                });
                let var = (&row * &v_eta * row.transpose())[(0, 0)];
                if var.is_finite() && var >= 0.0 {
                    SeValue::Se(var.sqrt())
                } else {
                    SeValue::Unavailable
                }
            })
            .collect()
    } else {
        vec![SeValue::Unavailable; s]
    };

    Ok(StandardErrors {
        parameters,
        share_se,
    })
}
