//! Protocol starting values: class shares drawn uniformly from the
//! simplex, fixed coefficients set to multinomial-logit estimates, and
//! support locations drawn from (-10^d, 10^d) where 10^d is the smallest
//! power of ten exceeding the magnitude of the matching MNL estimate
//! (truncated at zero for sign-constrained dimensions).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ChoicePanel;
use crate::error::Result;
use crate::model::{
    CoefficientMeta, MixtureModel, ModelSpec, Role, SignConstraint, SupportVariant,
};
use crate::support::MixtureSupport;

use super::fit_mnl;

/// Smallest power of ten strictly greater than `|a|` (1.0 for zero).
pub(crate) fn power_of_ten_above(a: f64) -> f64 {
    let a = a.abs();
    if a == 0.0 || !a.is_finite() {
        return 1.0;
    }
    let mut p = 10f64.powi(a.log10().floor() as i32);
    while p <= a {
        p *= 10.0;
    }
    while p / 10.0 > a {
        p /= 10.0;
    }
    p
}

/// Uniform draw from the simplex (normalized unit exponentials).
pub(crate) fn sample_simplex(rng: &mut impl Rng, s: usize) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..s)
        .map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|v| *v /= total);
    draws
}

fn draw_location(rng: &mut impl Rng, radius: f64, sign: SignConstraint) -> f64 {
    match sign {
        SignConstraint::Free => rng.random_range(-radius..radius),
        SignConstraint::NonPositive => rng.random_range(-radius..=0.0),
        SignConstraint::NonNegative => rng.random_range(0.0..radius),
    }
}

/// Builds the starting model for an EM run. Deterministic for a given
/// (panel, spec, seed).
pub fn initial_values(panel: &ChoicePanel, spec: &ModelSpec, seed: u64) -> Result<MixtureModel> {
    spec.validate_against(panel)?;
    let (mnl, _) = fit_mnl(panel, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let s = spec.n_classes();
    let class_shares = sample_simplex(&mut rng, s);

    let coefficients: Vec<CoefficientMeta> = spec
        .coefficients
        .iter()
        .map(|c| CoefficientMeta {
            name: c.attribute.clone(),
            role: c.role,
            sign: c.sign,
        })
        .collect();
    let fixed_values: Vec<f64> = spec
        .coefficients
        .iter()
        .filter(|c| c.role == Role::Fixed)
        .map(|c| mnl.get(&c.attribute).unwrap())
        .collect();

    let random: Vec<_> = spec.random_attributes();
    let radii: Vec<f64> = random
        .iter()
        .map(|c| power_of_ten_above(mnl.get(&c.attribute).unwrap()))
        .collect();

    let support = match spec.variant {
        SupportVariant::Unstructured => {
            let mut points = vec![vec![0.0; s]; random.len()];
            for class in 0..s {
                for (k, c) in random.iter().enumerate() {
                    points[k][class] = draw_location(&mut rng, radii[k], c.sign);
                }
            }
            MixtureSupport::Unstructured { points }
        }
        SupportVariant::EqualGrid => {
            let mut corner = Vec::with_capacity(random.len());
            let mut edge = Vec::with_capacity(random.len());
            for (k, c) in random.iter().enumerate() {
                let a = draw_location(&mut rng, radii[k], c.sign);
                let b = draw_location(&mut rng, radii[k], c.sign);
                corner.push(a.min(b));
                edge.push((a - b).abs());
            }
            MixtureSupport::EqualGrid {
                corner,
                edge,
                counts: spec.counts(),
            }
        }
        SupportVariant::UnequalGrid => {
            let levels = random
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let mut draws: Vec<f64> = (0..c.points)
                        .map(|_| draw_location(&mut rng, radii[k], c.sign))
                        .collect();
                    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    draws
                })
                .collect();
            MixtureSupport::UnequalGrid { levels }
        }
    };

    let model = MixtureModel {
        coefficients,
        fixed_values,
        support,
        class_shares,
    };
    model.validate()?;
    Ok(model)
}
