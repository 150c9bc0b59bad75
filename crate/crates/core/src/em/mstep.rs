//! Weighted-logit M-steps for the three support variants.
//!
//! Every M-step solves one bound-constrained weighted logit problem whose
//! parameter vector stacks the shared fixed coefficients with the support
//! location parameters. Equal-interval grids are optimized over their two
//! extreme corners per dimension (low, high), which turns sign constraints
//! on every grid point into plain box bounds; the canonical corner/edge
//! form is re-established afterwards, flipping dimensions (and re-indexing
//! class shares) if an edge came out reversed. Unequal-interval grids have
//! their levels sorted ascending after every step, with class shares
//! re-indexed so the joint distribution is unchanged.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::ChoicePanel;
use crate::error::{Error, Result};
use crate::kernel::{person_ll_and_score, ObservationWeights};
use crate::model::{CoefficientMeta, MixtureModel, Role};
use crate::optim::{maximize, BoundedProblem, Bounds, SolveReport};
use crate::support::{class_index, flat_index, loading, MixtureSupport};

const PERSON_CHUNK: usize = 32;

/// Inner-solver settings for one M-step.
#[derive(Debug, Clone)]
pub struct MStepOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Classes whose posterior mass falls below `threshold * N` are frozen
    /// (unstructured supports only).
    pub empty_class_threshold: f64,
}

impl Default for MStepOptions {
    fn default() -> Self {
        MStepOptions {
            gradient_tolerance: 1e-6,
            max_iterations: 500,
            empty_class_threshold: 1e-8,
        }
    }
}

/// Result of one M-step: the updated model (shares re-indexed if the
/// support was relabelled), the inner solve report, and any frozen classes.
#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub model: MixtureModel,
    pub solve: SolveReport,
    pub frozen_classes: Vec<usize>,
}

/// Mapping between the optimizer's parameter vector and the support
/// location parameters, shared by the M-steps and the standard-error code.
#[derive(Debug, Clone)]
pub(crate) enum SupportParams {
    Unstructured {
        dims: usize,
        /// Parameter base offset per class; `None` for frozen classes.
        class_offset: Vec<Option<usize>>,
        /// Current coordinates, used verbatim for frozen classes.
        current: DMatrix<f64>,
    },
    EqualGrid {
        counts: Vec<usize>,
        /// (low, high) parameter indices per dimension; `high` is `None`
        /// for single-point dimensions.
        corner_params: Vec<(usize, Option<usize>)>,
    },
    UnequalGrid {
        counts: Vec<usize>,
        /// Parameter offset of each dimension's level block.
        level_offset: Vec<usize>,
    },
}

/// One entry of the stacked parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

pub(crate) struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    /// Index of each fixed coefficient's parameter, in fixed-value order.
    pub fixed_params: Vec<usize>,
    pub support: SupportParams,
}

impl ParamLayout {
    /// Builds the stacked layout for `model`. Fixed coefficients come
    /// first, support parameters after. `frozen` marks unstructured
    /// classes excluded from this solve.
    pub fn build(model: &MixtureModel, frozen: &[bool]) -> Result<Self> {
        let mut entries = Vec::new();
        let mut fixed_params = Vec::new();

        let random_meta: Vec<&CoefficientMeta> = model
            .coefficients
            .iter()
            .filter(|c| c.role == Role::Random)
            .collect();

        for meta in model.coefficients.iter().filter(|c| c.role == Role::Fixed) {
            let (lower, upper) = meta.sign.bounds();
            fixed_params.push(entries.len());
            entries.push(ParamEntry {
                name: meta.name.clone(),
                lower,
                upper,
            });
        }

        let support = match &model.support {
            MixtureSupport::Unstructured { points } => {
                let dims = points.len();
                let s = model.n_classes();
                let mut class_offset = Vec::with_capacity(s);
                for class in 0..s {
                    if frozen.get(class).copied().unwrap_or(false) {
                        class_offset.push(None);
                        continue;
                    }
                    class_offset.push(Some(entries.len()));
                    for (k, meta) in random_meta.iter().enumerate() {
                        let (lower, upper) = meta.sign.bounds();
                        entries.push(ParamEntry {
                            name: format!("{}[class {}]", meta.name, class),
                            lower,
                            upper,
                        });
                        debug_assert!(k < dims);
                    }
                }
                let mut current = DMatrix::zeros(dims, s);
                for (k, row) in points.iter().enumerate() {
                    for (s_i, &v) in row.iter().enumerate() {
                        current[(k, s_i)] = v;
                    }
                }
                SupportParams::Unstructured {
                    dims,
                    class_offset,
                    current,
                }
            }
            MixtureSupport::EqualGrid { counts, .. } => {
                let mut corner_params = Vec::with_capacity(counts.len());
                for (k, meta) in random_meta.iter().enumerate() {
                    let (lower, upper) = meta.sign.bounds();
                    let low = entries.len();
                    entries.push(ParamEntry {
                        name: format!("{}[min]", meta.name),
                        lower,
                        upper,
                    });
                    let high = if counts[k] > 1 {
                        entries.push(ParamEntry {
                            name: format!("{}[max]", meta.name),
                            lower,
                            upper,
                        });
                        Some(low + 1)
                    } else {
                        None
                    };
                    corner_params.push((low, high));
                }
                SupportParams::EqualGrid {
                    counts: counts.clone(),
                    corner_params,
                }
            }
            MixtureSupport::UnequalGrid { levels } => {
                let counts: Vec<usize> = levels.iter().map(|l| l.len()).collect();
                let mut level_offset = Vec::with_capacity(levels.len());
                for (k, meta) in random_meta.iter().enumerate() {
                    let (lower, upper) = meta.sign.bounds();
                    level_offset.push(entries.len());
                    for m in 0..counts[k] {
                        entries.push(ParamEntry {
                            name: format!("{}[{}]", meta.name, m + 1),
                            lower,
                            upper,
                        });
                    }
                }
                SupportParams::UnequalGrid {
                    counts,
                    level_offset,
                }
            }
        };

        Ok(ParamLayout {
            entries,
            fixed_params,
            support,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lower: self.entries.iter().map(|e| e.lower).collect(),
            upper: self.entries.iter().map(|e| e.upper).collect(),
        }
    }

    /// Current parameter vector of `model` under this layout.
    pub fn extract(&self, model: &MixtureModel) -> Vec<f64> {
        let mut theta = vec![0.0; self.len()];
        for (i, &p) in self.fixed_params.iter().enumerate() {
            theta[p] = model.fixed_values[i];
        }
        match (&self.support, &model.support) {
            (
                SupportParams::Unstructured { class_offset, .. },
                MixtureSupport::Unstructured { points },
            ) => {
                for (class, offset) in class_offset.iter().enumerate() {
                    if let Some(base) = offset {
                        for (k, row) in points.iter().enumerate() {
                            theta[base + k] = row[class];
                        }
                    }
                }
            }
            (
                SupportParams::EqualGrid { corner_params, .. },
                MixtureSupport::EqualGrid { corner, edge, .. },
            ) => {
                for (k, &(low, high)) in corner_params.iter().enumerate() {
                    theta[low] = corner[k];
                    if let Some(h) = high {
                        theta[h] = corner[k] + edge[k];
                    }
                }
            }
            (
                SupportParams::UnequalGrid { level_offset, .. },
                MixtureSupport::UnequalGrid { levels },
            ) => {
                for (k, &offset) in level_offset.iter().enumerate() {
                    for (m, &v) in levels[k].iter().enumerate() {
                        theta[offset + m] = v;
                    }
                }
            }
            _ => unreachable!("layout built from the same model"),
        }
        theta
    }

    /// Class coordinates over the random dimensions implied by `theta`.
    pub fn coords(&self, theta: &[f64], n_classes: usize) -> DMatrix<f64> {
        match &self.support {
            SupportParams::Unstructured {
                dims,
                class_offset,
                current,
            } => {
                let mut coords = current.clone();
                for (class, offset) in class_offset.iter().enumerate() {
                    if let Some(base) = offset {
                        for k in 0..*dims {
                            coords[(k, class)] = theta[base + k];
                        }
                    }
                }
                coords
            }
            SupportParams::EqualGrid {
                counts,
                corner_params,
            } => {
                let kr = counts.len();
                let mut coords = DMatrix::zeros(kr, n_classes);
                for s in 0..n_classes {
                    let idx = class_index(counts, s);
                    for k in 0..kr {
                        let (low_i, high_i) = corner_params[k];
                        let low = theta[low_i];
                        let v = match high_i {
                            Some(h) => {
                                let t = loading(idx.multi[k], counts[k]);
                                low + t * (theta[h] - low)
                            }
                            None => low,
                        };
                        coords[(k, s)] = v;
                    }
                }
                coords
            }
            SupportParams::UnequalGrid {
                counts,
                level_offset,
            } => {
                let kr = counts.len();
                let mut coords = DMatrix::zeros(kr, n_classes);
                for s in 0..n_classes {
                    let idx = class_index(counts, s);
                    for k in 0..kr {
                        coords[(k, s)] = theta[level_offset[k] + idx.multi[k]];
                    }
                }
                coords
            }
        }
    }

    /// Writes `theta` back into a copy of `model`, restoring the canonical
    /// support orientation and re-indexing class shares when the relabeling
    /// requires it.
    pub fn inject(&self, theta: &[f64], model: &MixtureModel) -> MixtureModel {
        let mut out = model.clone();
        for (i, &p) in self.fixed_params.iter().enumerate() {
            out.fixed_values[i] = theta[p];
        }
        match &self.support {
            SupportParams::Unstructured { class_offset, .. } => {
                if let MixtureSupport::Unstructured { points } = &mut out.support {
                    for (class, offset) in class_offset.iter().enumerate() {
                        if let Some(base) = offset {
                            for (k, row) in points.iter_mut().enumerate() {
                                row[class] = theta[base + k];
                            }
                        }
                    }
                }
            }
            SupportParams::EqualGrid {
                counts,
                corner_params,
            } => {
                let kr = counts.len();
                let mut corner = vec![0.0; kr];
                let mut edge = vec![0.0; kr];
                let mut orders: Vec<Vec<usize>> = Vec::with_capacity(kr);
                for k in 0..kr {
                    let (low_i, high_i) = corner_params[k];
                    let low = theta[low_i];
                    match high_i {
                        Some(h) => {
                            let high = theta[h];
                            if high >= low {
                                corner[k] = low;
                                edge[k] = high - low;
                                orders.push((0..counts[k]).collect());
                            } else {
                                corner[k] = high;
                                edge[k] = low - high;
                                orders.push((0..counts[k]).rev().collect());
                            }
                        }
                        None => {
                            corner[k] = low;
                            edge[k] = 0.0;
                            orders.push(vec![0]);
                        }
                    }
                }
                out.support = MixtureSupport::EqualGrid {
                    corner,
                    edge,
                    counts: counts.clone(),
                };
                out.class_shares = permute_shares(counts, &orders, &out.class_shares);
            }
            SupportParams::UnequalGrid {
                counts,
                level_offset,
            } => {
                let kr = counts.len();
                let mut levels: Vec<Vec<f64>> = Vec::with_capacity(kr);
                let mut orders: Vec<Vec<usize>> = Vec::with_capacity(kr);
                for k in 0..kr {
                    let raw: Vec<f64> =
                        theta[level_offset[k]..level_offset[k] + counts[k]].to_vec();
                    let mut order: Vec<usize> = (0..counts[k]).collect();
                    order.sort_by(|&a, &b| raw[a].partial_cmp(&raw[b]).unwrap());
                    levels.push(order.iter().map(|&i| raw[i]).collect());
                    orders.push(order);
                }
                out.support = MixtureSupport::UnequalGrid { levels };
                out.class_shares = permute_shares(counts, &orders, &out.class_shares);
            }
        }
        out
    }
}

/// Re-indexes class shares after a per-dimension relabeling: the class at
/// new multi-index m' takes the share of the old class whose index along
/// dimension k was `orders[k][m'_k]`.
pub(crate) fn permute_shares(
    counts: &[usize],
    orders: &[Vec<usize>],
    shares: &[f64],
) -> Vec<f64> {
    if orders
        .iter()
        .all(|o| o.iter().enumerate().all(|(i, &v)| i == v))
    {
        return shares.to_vec();
    }
    let s = shares.len();
    let mut out = vec![0.0; s];
    for (new_flat, slot) in out.iter_mut().enumerate() {
        let idx = class_index(counts, new_flat);
        let old_multi: Vec<usize> = idx
            .multi
            .iter()
            .enumerate()
            .map(|(k, &m)| orders[k][m])
            .collect();
        *slot = shares[flat_index(counts, &old_multi)];
    }
    out
}

/// Gradient routing: one entry routes a class's score at a panel column
/// into a stacked parameter, with a loading weight.
#[derive(Debug, Clone, Copy)]
struct Route {
    param: u32,
    column: u32,
    weight: f64,
}

pub(crate) struct MStepProblem<'a> {
    panel: &'a ChoicePanel,
    q: &'a DMatrix<f64>,
    layout: ParamLayout,
    n_classes: usize,
    k_panel: usize,
    /// Panel column of each model coefficient.
    positions: Vec<usize>,
    coefficient_roles: Vec<Role>,
    routes: Vec<Vec<Route>>,
}

impl<'a> MStepProblem<'a> {
    pub fn new(
        panel: &'a ChoicePanel,
        q: &'a DMatrix<f64>,
        model: &MixtureModel,
        frozen: &[bool],
    ) -> Result<Self> {
        if q.nrows() != panel.n_persons() || q.ncols() != model.n_classes() {
            return Err(Error::Estimation(format!(
                "weight matrix is {}x{}, expected {}x{}",
                q.nrows(),
                q.ncols(),
                panel.n_persons(),
                model.n_classes()
            )));
        }
        let layout = ParamLayout::build(model, frozen)?;
        let positions = model.bind(panel)?;
        let n_classes = model.n_classes();
        let roles: Vec<Role> = model.coefficients.iter().map(|c| c.role).collect();

        let fixed_columns: Vec<(usize, usize)> = roles
            .iter()
            .zip(&positions)
            .filter(|(r, _)| **r == Role::Fixed)
            .enumerate()
            .map(|(i, (_, &col))| (layout.fixed_params[i], col))
            .collect();
        let random_columns: Vec<usize> = roles
            .iter()
            .zip(&positions)
            .filter(|(r, _)| **r == Role::Random)
            .map(|(_, &col)| col)
            .collect();

        let mut routes: Vec<Vec<Route>> = Vec::with_capacity(n_classes);
        for s in 0..n_classes {
            let mut class_routes: Vec<Route> = fixed_columns
                .iter()
                .map(|&(param, column)| Route {
                    param: param as u32,
                    column: column as u32,
                    weight: 1.0,
                })
                .collect();
            match &layout.support {
                SupportParams::Unstructured { class_offset, .. } => {
                    if let Some(base) = class_offset[s] {
                        for (k, &col) in random_columns.iter().enumerate() {
                            class_routes.push(Route {
                                param: (base + k) as u32,
                                column: col as u32,
                                weight: 1.0,
                            });
                        }
                    }
                }
                SupportParams::EqualGrid {
                    counts,
                    corner_params,
                } => {
                    let idx = class_index(counts, s);
                    for (k, &col) in random_columns.iter().enumerate() {
                        let (low, high) = corner_params[k];
                        match high {
                            Some(h) => {
                                let t = loading(idx.multi[k], counts[k]);
                                if t < 1.0 {
                                    class_routes.push(Route {
                                        param: low as u32,
                                        column: col as u32,
                                        weight: 1.0 - t,
                                    });
                                }
                                if t > 0.0 {
                                    class_routes.push(Route {
                                        param: h as u32,
                                        column: col as u32,
                                        weight: t,
                                    });
                                }
                            }
                            None => class_routes.push(Route {
                                param: low as u32,
                                column: col as u32,
                                weight: 1.0,
                            }),
                        }
                    }
                }
                SupportParams::UnequalGrid {
                    counts,
                    level_offset,
                } => {
                    let idx = class_index(counts, s);
                    for (k, &col) in random_columns.iter().enumerate() {
                        class_routes.push(Route {
                            param: (level_offset[k] + idx.multi[k]) as u32,
                            column: col as u32,
                            weight: 1.0,
                        });
                    }
                }
            }
            routes.push(class_routes);
        }

        Ok(MStepProblem {
            panel,
            q,
            layout,
            n_classes,
            k_panel: panel.n_attributes(),
            positions,
            coefficient_roles: roles,
            routes,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn class_betas(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let coords = self.layout.coords(theta, self.n_classes);
        let mut betas = vec![vec![0.0; self.k_panel]; self.n_classes];
        for (s, beta) in betas.iter_mut().enumerate() {
            let mut fixed_i = 0;
            let mut random_i = 0;
            for (role, &pos) in self.coefficient_roles.iter().zip(&self.positions) {
                match role {
                    Role::Fixed => {
                        beta[pos] = theta[self.layout.fixed_params[fixed_i]];
                        fixed_i += 1;
                    }
                    Role::Random => {
                        beta[pos] = coords[(random_i, s)];
                        random_i += 1;
                    }
                }
            }
        }
        betas
    }

    /// Expected complete-data log-likelihood (choice part) and its gradient
    /// with respect to the stacked parameter vector.
    pub fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let betas = self.class_betas(theta);
        let p = self.layout.len();
        let partials: Vec<(f64, Vec<f64>)> = self
            .panel
            .persons
            .par_chunks(PERSON_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut value = 0.0;
                let mut grad = vec![0.0; p];
                let mut score = vec![0.0; self.k_panel];
                let mut probs = Vec::with_capacity(8);
                for (i, person) in chunk.iter().enumerate() {
                    let n = c * PERSON_CHUNK + i;
                    for (s, beta) in betas.iter().enumerate() {
                        let w = self.q[(n, s)];
                        if w == 0.0 {
                            continue;
                        }
                        score.iter_mut().for_each(|g| *g = 0.0);
                        let ll = person_ll_and_score(beta, person, &mut score, &mut probs);
                        value += w * ll;
                        for route in &self.routes[s] {
                            grad[route.param as usize] +=
                                w * route.weight * score[route.column as usize];
                        }
                    }
                }
                (value, grad)
            })
            .collect();

        let mut value = 0.0;
        let mut grad = vec![0.0; p];
        for (v, g) in partials {
            value += v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        (value, grad)
    }
}

fn run_m_step(
    q: &ObservationWeights,
    panel: &ChoicePanel,
    model: &MixtureModel,
    options: &MStepOptions,
    frozen: Vec<bool>,
) -> Result<MStepOutcome> {
    let problem = MStepProblem::new(panel, &q.w, model, &frozen)?;
    let theta0 = problem.layout().extract(model);
    let bounds = problem.layout().bounds();
    let solve = maximize(
        &BoundedProblem::new(|theta: &[f64]| problem.eval(theta), theta0)
            .with_bounds(bounds)
            .with_tolerances(options.gradient_tolerance, options.max_iterations),
    )?;
    if solve.status == crate::optim::SolveStatus::MaxIterations {
        log::warn!(
            "M-step hit the inner iteration cap ({}); accepting the improved point (generalized EM)",
            options.max_iterations
        );
    }
    let model = problem.layout().inject(&solve.solution, model);
    Ok(MStepOutcome {
        model,
        solve,
        frozen_classes: frozen
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(s, _)| s)
            .collect(),
    })
}

fn expect_variant(model: &MixtureModel, want: &str) -> Result<()> {
    let got = match model.support {
        MixtureSupport::Unstructured { .. } => "unstructured",
        MixtureSupport::EqualGrid { .. } => "equal",
        MixtureSupport::UnequalGrid { .. } => "unequal",
    };
    if got != want {
        return Err(Error::Estimation(format!(
            "M-step for {want} support called on a {got} support"
        )));
    }
    Ok(())
}

/// M-step for unstructured supports. Classes whose posterior mass is below
/// the empty-class threshold are frozen at their previous coordinates.
pub fn m_step_unstructured(
    q: &ObservationWeights,
    panel: &ChoicePanel,
    model: &MixtureModel,
    options: &MStepOptions,
) -> Result<MStepOutcome> {
    expect_variant(model, "unstructured")?;
    let n = panel.n_persons() as f64;
    let threshold = options.empty_class_threshold * n;
    let frozen: Vec<bool> = (0..model.n_classes())
        .map(|s| q.w.column(s).iter().sum::<f64>() < threshold)
        .collect();
    run_m_step(q, panel, model, options, frozen)
}

/// M-step for equal-interval grids: joint maximization over the grid
/// corners and the fixed coefficients.
pub fn m_step_equal_grid(
    q: &ObservationWeights,
    panel: &ChoicePanel,
    model: &MixtureModel,
    options: &MStepOptions,
) -> Result<MStepOutcome> {
    expect_variant(model, "equal")?;
    let frozen = vec![false; model.n_classes()];
    run_m_step(q, panel, model, options, frozen)
}

/// M-step for unequal-interval grids: joint maximization over all level
/// locations and the fixed coefficients.
pub fn m_step_unequal_grid(
    q: &ObservationWeights,
    panel: &ChoicePanel,
    model: &MixtureModel,
    options: &MStepOptions,
) -> Result<MStepOutcome> {
    expect_variant(model, "unequal")?;
    let frozen = vec![false; model.n_classes()];
    run_m_step(q, panel, model, options, frozen)
}

/// Dispatches to the variant-matched M-step.
pub fn m_step(
    q: &ObservationWeights,
    panel: &ChoicePanel,
    model: &MixtureModel,
    options: &MStepOptions,
) -> Result<MStepOutcome> {
    match model.support {
        MixtureSupport::Unstructured { .. } => m_step_unstructured(q, panel, model, options),
        MixtureSupport::EqualGrid { .. } => m_step_equal_grid(q, panel, model, options),
        MixtureSupport::UnequalGrid { .. } => m_step_unequal_grid(q, panel, model, options),
    }
}
