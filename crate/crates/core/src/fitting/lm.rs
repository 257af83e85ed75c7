//! Levenberg-Marquardt for small dense least-squares problems.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub step_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Keep a per-trial log in the outcome.
    pub record_trace: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-3,
            step_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            record_trace: false,
        }
    }
}

/// One trial step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmStep {
    pub iteration: usize,
    pub lambda: f64,
    pub objective: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    /// `0.5 * |r|^2` at `x`.
    pub objective: f64,
    pub converged: bool,
    /// Accepted steps.
    pub iterations: usize,
    pub trace: Vec<LmStep>,
}

const MAX_LAMBDA: f64 = 1e16;

/// Minimises `0.5 * |r(x)|^2`.
///
/// Damping uses Marquardt's diagonal scaling. A trial point where `residual`
/// fails or is non-finite counts as a rejected step. Only a failure at `x0`
/// is reported as an error.
pub fn lm_minimize<R, J>(
    residual: R,
    jacobian: J,
    x0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmOutcome>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = x0;
    let mut r = residual(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    let mut f = 0.5 * r.norm_squared();
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = Vec::new();

    'outer: while iterations < opts.max_iterations {
        let jac = jacobian(&x)?;
        let g = jac.tr_mul(&r);
        if g.amax() < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let a = jac.tr_mul(&jac);
        let diag = a.diagonal().map(|d| d.clamp(1e-6, 1e32));
        loop {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * diag[i];
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let step = -chol.solve(&g);
            if step.norm() < opts.step_tolerance {
                converged = true;
                break 'outer;
            }
            let trial = &x + &step;
            let candidate = residual(&trial)
                .ok()
                .filter(|r| r.iter().all(|v| v.is_finite()))
                .map(|r| {
                    let f = 0.5 * r.norm_squared();
                    (r, f)
                });
            let accepted = matches!(&candidate, Some((_, f_new)) if *f_new < f);
            if opts.record_trace {
                trace.push(LmStep {
                    iteration: iterations,
                    lambda,
                    objective: candidate.as_ref().map_or(f64::INFINITY, |c| c.1),
                    accepted,
                });
            }
            if accepted {
                let (r_new, f_new) = candidate.unwrap();
                x = trial;
                r = r_new;
                f = f_new;
                lambda = (lambda / 10.0).max(1e-12);
                iterations += 1;
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }
    Ok(LmOutcome {
        x,
        objective: f,
        converged,
        iterations,
        trace,
    })
}
