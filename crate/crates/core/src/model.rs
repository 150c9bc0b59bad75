//! Model specification and the fitted mixture model.
//!
//! A [`ModelSpec`] partitions the panel attributes into fixed coefficients
//! (shared by everyone) and random coefficients (distributed over the
//! mixture support), selects the support variant, and carries per-attribute
//! sign constraints. A [`MixtureModel`] is the concrete object produced by
//! estimation: fixed values, support geometry and class shares.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ChoicePanel;
use crate::error::{Error, Result};
use crate::support::{class_coordinates, MixtureSupport};

/// Box constraint applied to a coefficient or grid location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SignConstraint {
    #[default]
    Free,
    NonPositive,
    NonNegative,
}

impl SignConstraint {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SignConstraint::Free => (f64::NEG_INFINITY, f64::INFINITY),
            SignConstraint::NonPositive => (f64::NEG_INFINITY, 0.0),
            SignConstraint::NonNegative => (0.0, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Fixed,
    Random,
}

/// One coefficient in the utility specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub attribute: String,
    pub role: Role,
    /// Number of grid points along this dimension (random + grid variants).
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub sign: SignConstraint,
}

fn default_points() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportVariant {
    Unstructured,
    #[serde(rename = "equal")]
    EqualGrid,
    #[serde(rename = "unequal")]
    UnequalGrid,
}

/// Full model specification: support variant plus ordered coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: SupportVariant,
    /// Number of classes for the unstructured variant (grids derive theirs
    /// from the per-dimension point counts).
    #[serde(default)]
    pub classes: usize,
    pub coefficients: Vec<CoefficientSpec>,
}

impl ModelSpec {
    pub fn fixed_attributes(&self) -> Vec<&CoefficientSpec> {
        self.coefficients
            .iter()
            .filter(|c| c.role == Role::Fixed)
            .collect()
    }

    pub fn random_attributes(&self) -> Vec<&CoefficientSpec> {
        self.coefficients
            .iter()
            .filter(|c| c.role == Role::Random)
            .collect()
    }

    /// Per-random-dimension point counts, in specification order.
    pub fn counts(&self) -> Vec<usize> {
        self.random_attributes().iter().map(|c| c.points).collect()
    }

    pub fn n_classes(&self) -> usize {
        match self.variant {
            SupportVariant::Unstructured => self.classes.max(1),
            _ => self.counts().iter().product::<usize>().max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() {
            return Err(Error::Config("model has no coefficients".into()));
        }
        let mut names: Vec<&str> = self
            .coefficients
            .iter()
            .map(|c| c.attribute.as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.coefficients.len() {
            return Err(Error::Config("duplicate coefficient attribute".into()));
        }
        match self.variant {
            SupportVariant::Unstructured => {
                if self.classes == 0 {
                    return Err(Error::Config(
                        "unstructured support requires a positive class count".into(),
                    ));
                }
            }
            _ => {
                if self.random_attributes().iter().any(|c| c.points == 0) {
                    return Err(Error::Config(
                        "grid dimensions need at least one point".into(),
                    ));
                }
            }
        }
        if self.random_attributes().is_empty() && self.n_classes() > 1 {
            return Err(Error::Config(
                "a multi-class model needs at least one random coefficient".into(),
            ));
        }
        Ok(())
    }

    /// Checks that every named attribute exists in the panel.
    pub fn validate_against(&self, panel: &ChoicePanel) -> Result<()> {
        self.validate()?;
        for c in &self.coefficients {
            if panel.attribute_index(&c.attribute).is_none() {
                return Err(Error::Config(format!(
                    "attribute '{}' not found in panel columns {:?}",
                    c.attribute, panel.attribute_names
                )));
            }
        }
        Ok(())
    }
}

/// A labelled coefficient vector, e.g. a multinomial-logit estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl CoefficientVector {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.values[i])
    }
}

/// Metadata for one model coefficient carried inside a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMeta {
    pub name: String,
    pub role: Role,
    pub sign: SignConstraint,
}

/// A finite-mixture logit model: fixed coefficients, support geometry over
/// the random dimensions, and class shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    /// Coefficients in specification order (fixed and random interleaved).
    pub coefficients: Vec<CoefficientMeta>,
    /// Values of the fixed coefficients, in coefficient order.
    pub fixed_values: Vec<f64>,
    pub support: MixtureSupport,
    /// Probability mass per class; nonnegative, sums to one.
    pub class_shares: Vec<f64>,
}

const SHARE_SUM_TOLERANCE: f64 = 1e-8;

impl MixtureModel {
    pub fn n_classes(&self) -> usize {
        self.class_shares.len()
    }

    pub fn fixed_names(&self) -> Vec<&str> {
        self.coefficients
            .iter()
            .filter(|c| c.role == Role::Fixed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn random_names(&self) -> Vec<&str> {
        self.coefficients
            .iter()
            .filter(|c| c.role == Role::Random)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn random_index(&self, name: &str) -> Option<usize> {
        self.random_names().iter().position(|n| *n == name)
    }

    pub fn fixed_value(&self, name: &str) -> Option<f64> {
        self.fixed_names()
            .iter()
            .position(|n| *n == name)
            .map(|i| self.fixed_values[i])
    }

    pub fn validate(&self) -> Result<()> {
        self.support.validate()?;
        let s = self.support.n_classes();
        if self.class_shares.len() != s {
            return Err(Error::Validation(format!(
                "share vector has {} entries for {} classes",
                self.class_shares.len(),
                s
            )));
        }
        if self.class_shares.iter().any(|&g| g < 0.0 || !g.is_finite()) {
            return Err(Error::Validation("negative or non-finite class share".into()));
        }
        let total: f64 = self.class_shares.iter().sum();
        if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "class shares sum to {total}, expected 1"
            )));
        }
        let n_fixed = self.fixed_names().len();
        if self.fixed_values.len() != n_fixed {
            return Err(Error::Validation(
                "fixed coefficient values do not match the layout".into(),
            ));
        }
        if self.support.n_random_dims() != self.random_names().len() {
            return Err(Error::Validation(
                "support dimensionality does not match the random coefficients".into(),
            ));
        }
        Ok(())
    }

    /// Column positions of every model coefficient in `panel`, in
    /// coefficient order. Fails if any attribute is missing.
    pub fn bind(&self, panel: &ChoicePanel) -> Result<Vec<usize>> {
        self.coefficients
            .iter()
            .map(|c| {
                panel.attribute_index(&c.name).ok_or_else(|| {
                    Error::Analytics(format!(
                        "panel is missing model attribute '{}'",
                        c.name
                    ))
                })
            })
            .collect()
    }

    /// Full coefficient vector of class `s`, expanded over all panel
    /// attribute columns (zero for attributes outside the model).
    pub fn class_beta(&self, positions: &[usize], k_panel: usize, s: usize) -> Result<Vec<f64>> {
        let coords = class_coordinates(&self.support, s)?;
        let mut beta = vec![0.0; k_panel];
        let mut fixed_iter = self.fixed_values.iter();
        let mut coord_iter = coords.iter();
        for (meta, &pos) in self.coefficients.iter().zip(positions) {
            beta[pos] = match meta.role {
                Role::Fixed => *fixed_iter.next().expect("fixed values match layout"),
                Role::Random => *coord_iter.next().expect("coords match layout"),
            };
        }
        Ok(beta)
    }

    /// Expanded coefficient vectors for every class, bound to `panel`.
    pub fn class_betas(&self, panel: &ChoicePanel) -> Result<Vec<Vec<f64>>> {
        let positions = self.bind(panel)?;
        let k = panel.n_attributes();
        (0..self.n_classes())
            .map(|s| self.class_beta(&positions, k, s))
            .collect()
    }
}

/// On-disk form of a fitted model plus estimation metadata.
///
/// The file is deterministic for a given (config, seed) pair: it carries no
/// timestamps, so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub meta: ModelMeta,
    pub model: MixtureModel,
    /// Willingness-to-pay reporting settings copied from the estimation
    /// config, if any, so reports need only the model file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wtp: Option<crate::config::WtpConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config_hash: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_ll: f64,
    pub bic: f64,
    pub aic: f64,
    pub n_parameters: usize,
    pub ll_trajectory: Vec<f64>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::Config(format!("cannot serialize model: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse model file: {e}")))?;
        file.model.validate()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_model() -> MixtureModel {
        MixtureModel {
            coefficients: vec![
                CoefficientMeta {
                    name: "cost".into(),
                    role: Role::Fixed,
                    sign: SignConstraint::Free,
                },
                CoefficientMeta {
                    name: "time".into(),
                    role: Role::Random,
                    sign: SignConstraint::Free,
                },
            ],
            fixed_values: vec![-1.8],
            support: MixtureSupport::Unstructured {
                points: vec![vec![-0.5, -1.5]],
            },
            class_shares: vec![0.6, 0.4],
        }
    }

    #[test]
    fn share_sum_is_checked() {
        let mut model = toy_model();
        model.validate().unwrap();
        model.class_shares = vec![0.6, 0.5];
        assert!(model.validate().is_err());
    }

    #[test]
    fn class_beta_expands_over_panel_columns() {
        let model = toy_model();
        // Panel with an extra column the model does not use.
        let positions = vec![2, 0]; // cost at column 2, time at column 0
        let beta = model.class_beta(&positions, 3, 1).unwrap();
        assert_eq!(beta, vec![-1.5, 0.0, -1.8]);
    }

    #[test]
    fn model_file_round_trips() {
        let file = ModelFile {
            version: "0.1.0".into(),
            meta: ModelMeta {
                seed: 9,
                config_hash: "deadbeef".into(),
                iterations: 12,
                converged: true,
                final_ll: -123.456,
                bic: 260.0,
                aic: 250.9,
                n_parameters: 3,
                ll_trajectory: vec![-130.0, -124.0, -123.456],
            },
            model: toy_model(),
            wtp: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        file.save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        assert_eq!(loaded.model, file.model);
        assert_eq!(loaded.meta.final_ll, file.meta.final_ll);
        assert_eq!(loaded.meta.ll_trajectory, file.meta.ll_trajectory);

        let first = std::fs::read(&path).unwrap();
        file.save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
