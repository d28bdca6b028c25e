//! Dense Levenberg–Marquardt on the normal equations.
//!
//! Damping schedule: `lambda = 1e-3 * mean(diag(J^T J))` initially, divided by
//! 10 after an accepted step and multiplied by 10 after a rejected one. The
//! damped system `(J^T J + lambda I) delta = -J^T r` is solved by Cholesky.
//! Iteration stops when the relative cost change drops below `rel_cost_tol`,
//! the gradient infinity-norm drops below `grad_tol`, or after
//! `max_iterations`. Ten rejected steps in a row are reported as divergence,
//! unless the iterate already sits at the rounding floor: the rejected step is
//! negligible against the parameters, or the cost has fallen by
//! `cost_floor_ratio` from its starting value.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub rel_cost_tol: f64,
    pub grad_tol: f64,
    pub max_consecutive_rejects: usize,
    pub initial_damping: f64,
    pub cost_floor_ratio: f64,
    pub step_tol: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iterations: 100,
            rel_cost_tol: 1e-12,
            grad_tol: 1e-10,
            max_consecutive_rejects: 10,
            initial_damping: 1e-3,
            cost_floor_ratio: 1e-20,
            step_tol: 1e-14,
        }
    }
}

/// Gauss–Newton pieces at a parameter vector. `cost` is `0.5 * sum(r^2)`.
pub struct NormalEquations {
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
    pub cost: f64,
}

pub trait LeastSquaresProblem {
    fn cost(&self, x: &DVector<f64>) -> f64;

    fn normal_equations(&self, x: &DVector<f64>) -> NormalEquations;

    /// Applies an update step. Problems with a non-Euclidean chart override this.
    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        x + delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostChange,
    Gradient,
    /// Rejected step at the rounding floor.
    Stalled,
    ZeroCost,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after the initial evaluation and after every accepted step.
    pub accepted_costs: Vec<f64>,
    /// `J^T J` at the returned parameters.
    pub jtj: DMatrix<f64>,
}

pub fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    x0: DVector<f64>,
    settings: &LmSettings,
) -> Result<LmReport> {
    let mut x = x0;
    let mut ne = problem.normal_equations(&x);
    if !ne.cost.is_finite() || ne.jtr.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalFailure);
    }
    let n = x.len();
    let mean_diag = ne.jtj.diagonal().mean();
    let mut lambda = settings.initial_damping * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let initial_cost = ne.cost;
    let mut accepted_costs = vec![ne.cost];
    let mut rejects = 0;
    let mut iterations = 0;

    let termination = loop {
        if ne.cost == 0.0 {
            break Termination::ZeroCost;
        }
        if ne.jtr.amax() < settings.grad_tol {
            break Termination::Gradient;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut damped = ne.jtj.clone();
        for i in 0..n {
            damped[(i, i)] += lambda;
        }
        let step = damped.cholesky().map(|c| -c.solve(&ne.jtr));
        let step_norm = step.as_ref().map_or(f64::INFINITY, |d| d.amax());
        let trial = step.map(|delta| {
            let xn = problem.retract(&x, &delta);
            let c = problem.cost(&xn);
            (xn, c)
        });

        match trial {
            Some((xn, c)) if c.is_finite() && c < ne.cost => {
                let rel = (ne.cost - c) / ne.cost;
                x = xn;
                ne = problem.normal_equations(&x);
                if !ne.cost.is_finite() {
                    return Err(Error::NumericalFailure);
                }
                accepted_costs.push(ne.cost);
                lambda /= 10.0;
                rejects = 0;
                if rel < settings.rel_cost_tol {
                    break Termination::CostChange;
                }
            }
            other => {
                // a rejected step that changes the cost by less than the
                // tolerance means we are sitting at the noise floor
                if let Some((_, c)) = other {
                    if c.is_finite() && (c - ne.cost).abs() <= settings.rel_cost_tol * ne.cost {
                        break Termination::CostChange;
                    }
                }
                if ne.cost <= settings.cost_floor_ratio * initial_cost
                    || step_norm <= settings.step_tol * x.amax().max(1.0)
                {
                    break Termination::Stalled;
                }
                rejects += 1;
                lambda *= 10.0;
                if rejects >= settings.max_consecutive_rejects {
                    return Err(Error::NoConvergence(format!(
                        "{rejects} consecutive rejected steps at cost {:e}",
                        ne.cost
                    )));
                }
            }
        }
    };

    Ok(LmReport {
        params: x,
        cost: ne.cost,
        iterations,
        termination,
        accepted_costs,
        jtj: ne.jtj,
    })
}

/// Ratio of extreme eigenvalues of a symmetric positive semi-definite matrix.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
