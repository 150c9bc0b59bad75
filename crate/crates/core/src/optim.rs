//! Box-constrained maximization of smooth concave-ish objectives with a
//! limited-memory quasi-Newton method and gradient projection.
//!
//! This is the shared engine behind every weighted-logit subproblem. The
//! search direction comes from an L-BFGS two-loop recursion restricted to
//! the free variables; trial points are projected onto the box and accepted
//! under an Armijo sufficient-increase test along the projected arc.
//! Convergence is declared on the infinity norm of the projected gradient.
//! The solver is deterministic: no randomized restarts, no time-dependent
//! state.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Per-coordinate box bounds; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn free(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Optimization(
                "bounds length does not match the parameter count".into(),
            ));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(Error::Optimization("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }
}

/// A box-constrained maximization problem.
///
/// The callback returns the objective value and gradient at a point; it is
/// expected to be finite everywhere inside the box.
pub struct BoundedProblem<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    pub objective: F,
    pub initial: Vec<f64>,
    pub bounds: Option<Bounds>,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Stall guard: stop after two consecutive accepted steps that improve
    /// the objective by less than this (absolute). Degenerate directions
    /// with vanishing curvature would otherwise grind against the
    /// gradient tolerance forever.
    pub objective_tolerance: f64,
    pub max_iterations: usize,
}

impl<F> BoundedProblem<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    pub fn new(objective: F, initial: Vec<f64>) -> Self {
        BoundedProblem {
            objective,
            initial,
            bounds: None,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-12,
            objective_tolerance: 1e-9,
            max_iterations: 500,
        }
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_tolerances(mut self, gradient: f64, max_iterations: usize) -> Self {
        self.gradient_tolerance = gradient;
        self.max_iterations = max_iterations;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

/// Outcome of a solve. The solution always lies inside the bounds and its
/// objective is never below the starting objective (up to 1e-12).
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Indices of coordinates sitting exactly on a bound at the solution.
    pub active_bounds: Vec<usize>,
}

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Minimum curvature s'y (relative) for a correction pair to be stored.
const CURVATURE_EPS: f64 = 1e-10;

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>, // (s, y, 1/s'y)
}

impl Memory {
    fn new() -> Self {
        Memory {
            pairs: VecDeque::with_capacity(MEMORY),
        }
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sn: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > CURVATURE_EPS * sn * yn && sy.is_finite() {
            if self.pairs.len() == MEMORY {
                self.pairs.pop_front();
            }
            self.pairs.push_back((s, y, 1.0 / sy));
        }
    }

    /// Two-loop recursion: returns an approximation of H * g where H is the
    /// inverse Hessian estimate of the minimized objective.
    fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let alpha = rho * s.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push(alpha);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|v| v * v).sum();
            let scale = sy / yy;
            for qi in q.iter_mut() {
                *qi *= scale;
            }
        }
        for ((s, y, rho), alpha) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let beta = rho * y.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        q
    }
}

/// Maximizes a box-constrained problem. See the module docs for the method.
pub fn maximize<F>(problem: &BoundedProblem<F>) -> Result<SolveReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = problem.initial.len();
    let bounds = match &problem.bounds {
        Some(b) => {
            b.validate(n)?;
            b.clone()
        }
        None => Bounds::free(n),
    };

    // Internally minimize the negated objective.
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let (v, mut g) = (problem.objective)(x);
        for gi in g.iter_mut() {
            *gi = -*gi;
        }
        (-v, g)
    };

    let mut x = problem.initial.clone();
    bounds.project(&mut x);
    let (mut f, mut g) = eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimization(
            "objective is not finite at the initial point".into(),
        ));
    }

    let mut best_x = x.clone();
    let mut best_f = f;
    let mut memory = Memory::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    let projected_gradient_norm = |x: &[f64], g: &[f64]| -> f64 {
        let mut norm: f64 = 0.0;
        for i in 0..x.len() {
            let mut t = x[i] - g[i];
            t = t.clamp(bounds.lower[i], bounds.upper[i]);
            norm = norm.max((t - x[i]).abs());
        }
        norm
    };

    let active_mask = |x: &[f64], g: &[f64]| -> Vec<bool> {
        (0..x.len())
            .map(|i| (x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0))
            .collect()
    };

    for iter in 0..problem.max_iterations {
        iterations = iter + 1;
        if projected_gradient_norm(&x, &g) <= problem.gradient_tolerance {
            status = SolveStatus::Converged;
            iterations = iter;
            break;
        }

        let mask = active_mask(&x, &g);
        let mut masked_g = g.clone();
        for (gi, &m) in masked_g.iter_mut().zip(&mask) {
            if m {
                *gi = 0.0;
            }
        }

        let mut tried_steepest = false;
        let mut accepted = false;
        'direction: loop {
            let fresh = memory.is_empty();
            let mut d: Vec<f64> = memory
                .apply(&masked_g)
                .into_iter()
                .map(|v| -v)
                .collect();
            for (di, &m) in d.iter_mut().zip(&mask) {
                if m {
                    *di = 0.0;
                }
            }
            let descent: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(descent < 0.0) || d.iter().any(|v| !v.is_finite()) {
                if tried_steepest {
                    break 'direction;
                }
                memory.clear();
                tried_steepest = true;
                continue 'direction;
            }

            // Backtracking Armijo search along the projected arc. Without
            // curvature information the raw gradient can be enormous, so a
            // fresh-memory step is capped at unit infinity norm.
            let mut alpha = if fresh {
                let d_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (1.0 / d_norm.max(1.0)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                bounds.project(&mut xt);
                let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
                let step_norm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if step_norm < problem.step_tolerance {
                    break;
                }
                let gdx: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
                let (ft, gt) = eval(&xt);
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + ARMIJO_C1 * gdx {
                    let s = step;
                    let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
                    memory.push(s, y);
                    x = xt;
                    f = ft;
                    g = gt;
                    if f < best_f {
                        best_f = f;
                        best_x = x.clone();
                    }
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted || tried_steepest {
                break 'direction;
            }
            // The quasi-Newton step failed its line search; retry once from
            // a steepest-descent direction with fresh memory.
            memory.clear();
            tried_steepest = true;
        }

        if !accepted {
            status = if projected_gradient_norm(&x, &g) <= problem.gradient_tolerance {
                SolveStatus::Converged
            } else {
                SolveStatus::LineSearchFailure
            };
            break;
        }
    }

    if status == SolveStatus::MaxIterations
        && projected_gradient_norm(&x, &g) <= problem.gradient_tolerance
    {
        status = SolveStatus::Converged;
    }

    // Return the best point seen.
    if best_f < f {
        x = best_x;
        let (fb, gb) = eval(&x);
        f = fb;
        g = gb;
    }

    let pg = projected_gradient_norm(&x, &g);
    let active_bounds = (0..n)
        .filter(|&i| x[i] <= bounds.lower[i] || x[i] >= bounds.upper[i])
        .filter(|&i| bounds.lower[i].is_finite() || bounds.upper[i].is_finite())
        .collect();

    Ok(SolveReport {
        solution: x,
        objective: -f,
        projected_gradient_norm: pg,
        iterations,
        status,
        active_bounds,
    })
}
