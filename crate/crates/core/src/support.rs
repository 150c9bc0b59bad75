//! Mixture supports: unstructured point sets and coefficient-space grids
//! with equal or unequal intervals, plus class indexing and parameter
//! accounting.
//!
//! Grid classes are enumerated in row-major multi-index order with the
//! last random dimension varying fastest; the flat class index is the
//! canonical label used by class-share vectors everywhere in this crate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, SupportVariant};

/// Geometry of the taste-coefficient support over the random dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MixtureSupport {
    /// Every class coordinate is a free parameter. `points[k][s]` is the
    /// value of random dimension `k` at class `s`.
    Unstructured { points: Vec<Vec<f64>> },
    /// Lattice described by a minimal corner and per-dimension edge
    /// lengths; points are equally spaced along each dimension.
    EqualGrid {
        corner: Vec<f64>,
        edge: Vec<f64>,
        counts: Vec<usize>,
    },
    /// Cartesian product of free per-dimension point sets. `levels[k]`
    /// holds the support of the marginal along dimension `k`, ascending
    /// once canonicalized.
    UnequalGrid { levels: Vec<Vec<f64>> },
}

impl MixtureSupport {
    pub fn n_random_dims(&self) -> usize {
        match self {
            MixtureSupport::Unstructured { points } => points.len(),
            MixtureSupport::EqualGrid { corner, .. } => corner.len(),
            MixtureSupport::UnequalGrid { levels } => levels.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            MixtureSupport::Unstructured { points } => {
                points.first().map(|p| p.len()).unwrap_or(1)
            }
            MixtureSupport::EqualGrid { counts, .. } => counts.iter().product(),
            MixtureSupport::UnequalGrid { levels } => {
                levels.iter().map(|l| l.len()).product()
            }
        }
    }

    /// Per-dimension point counts for grid variants.
    pub fn counts(&self) -> Option<Vec<usize>> {
        match self {
            MixtureSupport::Unstructured { .. } => None,
            MixtureSupport::EqualGrid { counts, .. } => Some(counts.clone()),
            MixtureSupport::UnequalGrid { levels } => {
                Some(levels.iter().map(|l| l.len()).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixtureSupport::Unstructured { points } => {
                let s = self.n_classes();
                if points.is_empty() || s == 0 {
                    return Err(Error::Validation("unstructured support is empty".into()));
                }
                if points.iter().any(|p| p.len() != s) {
                    return Err(Error::Validation(
                        "unstructured support rows have unequal class counts".into(),
                    ));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite support point".into()));
                }
            }
            MixtureSupport::EqualGrid {
                corner,
                edge,
                counts,
            } => {
                if corner.len() != edge.len() || corner.len() != counts.len() {
                    return Err(Error::Validation(
                        "equal grid corner/edge/counts lengths differ".into(),
                    ));
                }
                if counts.iter().any(|&m| m == 0) {
                    return Err(Error::Validation("grid dimension with zero points".into()));
                }
                if edge.iter().any(|&d| d < 0.0 || !d.is_finite()) {
                    return Err(Error::Validation(
                        "equal grid edge lengths must be nonnegative (canonical orientation)"
                            .into(),
                    ));
                }
                if corner.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite grid corner".into()));
                }
            }
            MixtureSupport::UnequalGrid { levels } => {
                if levels.iter().any(|l| l.is_empty()) {
                    return Err(Error::Validation("grid dimension with zero points".into()));
                }
                if levels.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite grid level".into()));
                }
            }
        }
        Ok(())
    }

    /// Exact unequal-interval representation of this support. Equal grids
    /// map to equally spaced levels; unequal grids are returned as-is.
    pub fn to_unequal(&self) -> Result<MixtureSupport> {
        match self {
            MixtureSupport::EqualGrid {
                corner,
                edge,
                counts,
            } => {
                let levels = corner
                    .iter()
                    .zip(edge)
                    .zip(counts)
                    .map(|((&a, &d), &m)| {
                        (0..m).map(|i| a + loading(i, m) * d).collect::<Vec<f64>>()
                    })
                    .collect();
                Ok(MixtureSupport::UnequalGrid { levels })
            }
            MixtureSupport::UnequalGrid { .. } => Ok(self.clone()),
            MixtureSupport::Unstructured { .. } => Err(Error::Validation(
                "an unstructured support has no grid representation".into(),
            )),
        }
    }
}

/// A class label: the flat index and its grid multi-index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    pub flat: usize,
    pub multi: Vec<usize>,
}

/// Decodes a flat class index into its multi-index (last dimension fastest).
pub fn class_index(counts: &[usize], flat: usize) -> ClassIndex {
    let mut multi = vec![0usize; counts.len()];
    let mut rem = flat;
    for k in (0..counts.len()).rev() {
        multi[k] = rem % counts[k];
        rem /= counts[k];
    }
    ClassIndex { flat, multi }
}

/// Encodes a multi-index into the flat class index.
pub fn flat_index(counts: &[usize], multi: &[usize]) -> usize {
    let mut flat = 0usize;
    for (k, &m) in multi.iter().enumerate() {
        flat = flat * counts[k] + m;
    }
    flat
}

/// Fraction of the edge length covered at grid position `i` of `m` points.
/// A single-point dimension loads zero, pinning the class at the corner.
#[inline]
pub fn loading(i: usize, m: usize) -> f64 {
    if m <= 1 {
        0.0
    } else {
        i as f64 / (m - 1) as f64
    }
}

/// Coordinates of class `s` over the random dimensions only.
pub fn class_coordinates(support: &MixtureSupport, s: usize) -> Result<Vec<f64>> {
    let n = support.n_classes();
    if s >= n {
        return Err(Error::Validation(format!(
            "class index {s} out of range for {n} classes"
        )));
    }
    Ok(match support {
        MixtureSupport::Unstructured { points } => points.iter().map(|row| row[s]).collect(),
        MixtureSupport::EqualGrid {
            corner,
            edge,
            counts,
        } => {
            let idx = class_index(counts, s);
            corner
                .iter()
                .zip(edge)
                .zip(&idx.multi)
                .zip(counts)
                .map(|(((&a, &d), &m), &cnt)| a + loading(m, cnt) * d)
                .collect()
        }
        MixtureSupport::UnequalGrid { levels } => {
            let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
            let idx = class_index(&counts, s);
            levels
                .iter()
                .zip(&idx.multi)
                .map(|(level, &m)| level[m])
                .collect()
        }
    })
}

/// All class coordinates as a (K_r x S) matrix, classes in row-major
/// multi-index order.
pub fn enumerate_support(support: &MixtureSupport) -> Result<DMatrix<f64>> {
    let kr = support.n_random_dims();
    let s = support.n_classes();
    let mut out = DMatrix::zeros(kr, s);
    for j in 0..s {
        let coords = class_coordinates(support, j)?;
        for (k, v) in coords.into_iter().enumerate() {
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

/// Number of estimable parameters implied by a model specification:
/// the fixed coefficients, the support location parameters, and the
/// S - 1 free class shares.
pub fn parameter_count(spec: &ModelSpec) -> usize {
    let f = spec.fixed_attributes().len();
    let kr = spec.random_attributes().len();
    let s = spec.n_classes();
    let support_params = match spec.variant {
        SupportVariant::Unstructured => kr * s,
        SupportVariant::EqualGrid => 2 * kr,
        SupportVariant::UnequalGrid => spec.counts().iter().sum(),
    };
    f + support_params + (s - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSpec, Role, SignConstraint};
    use approx::assert_relative_eq;

    #[test]
    fn multi_index_round_trip_is_row_major() {
        let counts = [5, 3];
        // Flat index 7 = column 3 / row 2 in a 5x3 grid laid out with the
        // second dimension fastest: multi (2, 1).
        let idx = class_index(&counts, 7);
        assert_eq!(idx.multi, vec![2, 1]);
        assert_eq!(flat_index(&counts, &idx.multi), 7);
        for flat in 0..15 {
            let ci = class_index(&counts, flat);
            assert_eq!(flat_index(&counts, &ci.multi), flat);
        }
    }

    #[test]
    fn equal_grid_center_class_loads_half() {
        // 5x3 grid, class in the third column from the left and the second
        // row from the bottom: both loadings are 0.5.
        let support = MixtureSupport::EqualGrid {
            corner: vec![-2.0, 1.0],
            edge: vec![4.0, 3.0],
            counts: vec![5, 3],
        };
        let s = flat_index(&[5, 3], &[2, 1]);
        let beta = class_coordinates(&support, s).unwrap();
        assert_relative_eq!(beta[0], -2.0 + 0.5 * 4.0, epsilon = 1e-15);
        assert_relative_eq!(beta[1], 1.0 + 0.5 * 3.0, epsilon = 1e-15);
        assert_eq!(loading(2, 5), 0.5);
        assert_eq!(loading(1, 3), 0.5);
    }

    #[test]
    fn unequal_grid_class_picks_one_level_per_dim() {
        // 4x3 grid, class in the third column / second row selects the
        // third level of the first dimension and the second of the second.
        let support = MixtureSupport::UnequalGrid {
            levels: vec![vec![-3.0, -1.0, 0.5, 2.0], vec![0.0, 1.0, 4.0]],
        };
        let s = flat_index(&[4, 3], &[2, 1]);
        let beta = class_coordinates(&support, s).unwrap();
        assert_eq!(beta, vec![0.5, 1.0]);
    }

    #[test]
    fn degenerate_equal_grid_maps_every_class_to_corner() {
        let support = MixtureSupport::EqualGrid {
            corner: vec![1.5, -0.5],
            edge: vec![0.0, 0.0],
            counts: vec![3, 2],
        };
        for s in 0..6 {
            assert_eq!(class_coordinates(&support, s).unwrap(), vec![1.5, -0.5]);
        }
    }

    #[test]
    fn single_dim_unequal_enumeration_is_direct_lookup() {
        let support = MixtureSupport::UnequalGrid {
            levels: vec![vec![-1.0, 0.0, 2.0]],
        };
        let m = enumerate_support(&support).unwrap();
        assert_eq!(m.shape(), (1, 3));
        assert_eq!(m[(0, 0)], -1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 2)], 2.0);
    }

    #[test]
    fn unit_cube_corners() {
        let support = MixtureSupport::EqualGrid {
            corner: vec![0.0; 3],
            edge: vec![1.0; 3],
            counts: vec![2, 2, 2],
        };
        let m = enumerate_support(&support).unwrap();
        assert_eq!(m.shape(), (3, 8));
        // Last dimension fastest: class 1 = (0, 0, 1), class 4 = (1, 0, 0).
        assert_eq!(m.column(1).as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(m.column(4).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(m.column(7).as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn equal_grid_nests_in_unequal_grid() {
        let equal = MixtureSupport::EqualGrid {
            corner: vec![-1.0, 2.0],
            edge: vec![2.0, 0.5],
            counts: vec![4, 3],
        };
        let unequal = equal.to_unequal().unwrap();
        let a = enumerate_support(&equal).unwrap();
        let b = enumerate_support(&unequal).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extreme_multi_indices_hit_corner_and_far_corner() {
        let support = MixtureSupport::EqualGrid {
            corner: vec![-1.0, 2.0],
            edge: vec![2.0, 0.5],
            counts: vec![4, 3],
        };
        let first = class_coordinates(&support, 0).unwrap();
        assert_eq!(first, vec![-1.0, 2.0]);
        let last = class_coordinates(&support, 11).unwrap();
        assert_eq!(last, vec![1.0, 2.5]);
    }

    fn spec_with(variant: SupportVariant, f: usize, counts: &[usize], classes: usize) -> ModelSpec {
        let mut coefficients = Vec::new();
        for i in 0..f {
            coefficients.push(CoefficientSpec {
                attribute: format!("f{i}"),
                role: Role::Fixed,
                points: 1,
                sign: SignConstraint::Free,
            });
        }
        for (i, &m) in counts.iter().enumerate() {
            coefficients.push(CoefficientSpec {
                attribute: format!("r{i}"),
                role: Role::Random,
                points: m,
                sign: SignConstraint::Free,
            });
        }
        ModelSpec {
            variant,
            classes,
            coefficients,
        }
    }

    #[test]
    fn parameter_accounting_matches_published_totals() {
        // 2048-class specifications: 2 points on each of 3 constants and 4
        // points on each of 4 time coefficients, with 21 fixed coefficients.
        let counts = [2, 2, 2, 4, 4, 4, 4];
        let unequal = spec_with(SupportVariant::UnequalGrid, 21, &counts, 0);
        assert_eq!(unequal.n_classes(), 2048);
        assert_eq!(parameter_count(&unequal), 2090);

        let equal = spec_with(SupportVariant::EqualGrid, 21, &counts, 0);
        assert_eq!(parameter_count(&equal), 2082);

        // The unequal-interval surcharge over equal intervals is
        // sum(M_k) - 2 K_r for the same counts.
        assert_eq!(
            parameter_count(&unequal) - parameter_count(&equal),
            counts.iter().sum::<usize>() - 2 * counts.len()
        );
    }

    #[test]
    fn single_class_unstructured_has_no_share_parameters() {
        let spec = spec_with(SupportVariant::Unstructured, 2, &[1, 1, 1], 1);
        // F + K_r * S + (S - 1) = 2 + 3 + 0.
        assert_eq!(parameter_count(&spec), 5);
    }
}
