//! Pointwise p-update of the first fractional step.
//!
//! At each pixel the solver minimizes
//!
//! ```text
//! E1(q) = |q - p|^2 / (2 tau) + s1 sqrt(m(q)) + beta s2 / sqrt(m(q)),   m(q) = det M(q)
//! ```
//!
//! over the `d x 2` matrix `q`, with `s1 = 1` and `s2 = sum_k (div- lambda_k)^2`
//! frozen from the previous iterate. The update is the coordinatewise
//! (diagonal) Newton iteration: every entry moves by minus its first
//! derivative over its own second derivative, all entries evaluated at the
//! same iterate.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{div_minus, ScalarField};
use crate::metric::{JacobianField, Metric2};
use crate::splitting::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("Newton iteration did not converge at pixel ({i}, {j}) after {iters} iterations (last step {last_step:e})")]
    NotConverged {
        i: usize,
        j: usize,
        iters: usize,
        last_step: f64,
    },
    #[error("non-finite value in Newton iteration at pixel ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("m(q) = {0} is not positive")]
    DegenerateMetric(f64),
    #[error("invalid Newton settings: {0}")]
    InvalidSettings(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Stop when the largest coordinate update falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Second derivatives below this are replaced by `1 / tau`.
    pub hessian_floor: f64,
    /// Keep the last iterate instead of failing when `max_iters` is hit.
    pub accept_unconverged: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
            hessian_floor: 1e-8,
            accept_unconverged: false,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), NewtonError> {
        if !(self.tol > 0.0) {
            return Err(NewtonError::InvalidSettings("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(NewtonError::InvalidSettings("max_iters must be at least 1"));
        }
        if !(self.hessian_floor > 0.0) {
            return Err(NewtonError::InvalidSettings("hessian_floor must be positive"));
        }
        Ok(())
    }
}

/// The data of `E1` at one pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelObjective<'a> {
    /// Proximal center, `p^n` at this pixel.
    pub center: &'a [[f64; 2]],
    pub s1: f64,
    pub s2: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl PixelObjective<'_> {
    pub fn value(&self, q: &[[f64; 2]]) -> Result<f64, NewtonError> {
        let m = Metric2::from_jacobian(q, self.alpha).det;
        if !(m > 0.0) {
            return Err(NewtonError::DegenerateMetric(m));
        }
        let prox: f64 = q
            .iter()
            .zip(self.center)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum();
        let root = m.sqrt();
        Ok(prox / (2.0 * self.tau) + self.s1 * root + self.beta * self.s2 / root)
    }

    /// First derivatives and diagonal second derivatives of `E1` with respect
    /// to every `q_kr`, written into `grad` and `hess`.
    pub fn derivatives(&self, q: &[[f64; 2]], grad: &mut [[f64; 2]], hess: &mut [[f64; 2]]) {
        let g = Metric2::from_jacobian(q, self.alpha);
        let m = g.det;
        let inv_sqrt = 1.0 / m.sqrt();
        let inv_m = 1.0 / m;
        // coefficient of dm and of dm^2
        let c1 = 0.5 * (self.s1 * inv_sqrt - self.beta * self.s2 * inv_sqrt * inv_m);
        let c2 = 0.5 * (-0.5 * self.s1 * inv_sqrt * inv_m + 1.5 * self.beta * self.s2 * inv_sqrt * inv_m * inv_m);
        let inv_tau = 1.0 / self.tau;
        for (k, row) in q.iter().enumerate() {
            let (a, b) = (row[0], row[1]);
            let dm = [2.0 * g.g22 * a - 2.0 * g.g12 * b, 2.0 * g.g11 * b - 2.0 * g.g12 * a];
            let d2m = [2.0 * g.g22 - 2.0 * b * b, 2.0 * g.g11 - 2.0 * a * a];
            for r in 0..2 {
                grad[k][r] = inv_tau * (row[r] - self.center[k][r]) + c1 * dm[r];
                hess[k][r] = inv_tau + c1 * d2m[r] + c2 * dm[r] * dm[r];
            }
        }
    }
}

/// `E1` at one pixel.
pub fn e1_value(
    q: &[[f64; 2]],
    p: &[[f64; 2]],
    s1: f64,
    s2: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64, NewtonError> {
    PixelObjective {
        center: p,
        s1,
        s2,
        tau,
        alpha,
        beta,
    }
    .value(q)
}

/// Gradient and diagonal Hessian of `E1` at one pixel.
#[allow(clippy::too_many_arguments)]
pub fn e1_derivatives(
    q: &[[f64; 2]],
    p: &[[f64; 2]],
    s1: f64,
    s2: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut grad = vec![[0.0; 2]; q.len()];
    let mut hess = vec![[0.0; 2]; q.len()];
    PixelObjective {
        center: p,
        s1,
        s2,
        tau,
        alpha,
        beta,
    }
    .derivatives(q, &mut grad, &mut hess);
    (grad, hess)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelFailure {
    NotConverged { iters: usize, last_step: f64 },
    NonFinite,
}

/// Runs the coordinatewise Newton iteration in place from the current `q`.
/// Returns the number of iterations taken.
pub fn minimize_pixel(
    objective: &PixelObjective<'_>,
    q: &mut [[f64; 2]],
    settings: &NewtonSettings,
) -> Result<usize, PixelFailure> {
    let d = q.len();
    let mut grad = vec![[0.0; 2]; d];
    let mut hess = vec![[0.0; 2]; d];
    let fallback = 1.0 / objective.tau;
    let mut last_step = f64::INFINITY;
    for iter in 1..=settings.max_iters {
        objective.derivatives(q, &mut grad, &mut hess);
        let mut step_max = 0.0f64;
        for k in 0..d {
            for r in 0..2 {
                let mut h = hess[k][r];
                if h < settings.hessian_floor {
                    h = fallback;
                }
                let step = grad[k][r] / h;
                q[k][r] -= step;
                step_max = step_max.max(step.abs());
            }
        }
        if !step_max.is_finite() || q.iter().any(|e| !(e[0].is_finite() && e[1].is_finite())) {
            return Err(PixelFailure::NonFinite);
        }
        last_step = step_max;
        if step_max < settings.tol {
            return Ok(iter);
        }
    }
    Err(PixelFailure::NotConverged {
        iters: settings.max_iters,
        last_step,
    })
}

/// `s2 = sum_k (div- lambda_k)^2` per pixel.
pub fn bending_weight(lambda: &JacobianField) -> ScalarField {
    let mut s2 = ScalarField::zeros(lambda.width(), lambda.height());
    for k in 0..lambda.channels() {
        let div = div_minus(&lambda.row(k));
        for (acc, v) in s2.values_mut().iter_mut().zip(div.values()) {
            *acc += v * v;
        }
    }
    s2
}

/// Summary of a field-wide Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub p: JacobianField,
    /// Largest iteration count over all pixels.
    pub max_iterations: usize,
    /// Pixels that hit `max_iters` (only non-empty with `accept_unconverged`).
    pub unconverged: usize,
}

/// Solves the p-subproblem at every pixel, starting from `p_prev`.
pub fn solve_p_step1(
    p_prev: &JacobianField,
    lambda_prev: &JacobianField,
    cfg: &SolverConfig,
    settings: &NewtonSettings,
) -> Result<JacobianField, NewtonError> {
    solve_p_step1_detailed(p_prev, lambda_prev, cfg, settings).map(|o| o.p)
}

pub fn solve_p_step1_detailed(
    p_prev: &JacobianField,
    lambda_prev: &JacobianField,
    cfg: &SolverConfig,
    settings: &NewtonSettings,
) -> Result<NewtonOutcome, NewtonError> {
    settings.validate()?;
    assert!(p_prev.same_shape(lambda_prev), "p and lambda shapes differ");
    let s2 = bending_weight(lambda_prev);
    let d = p_prev.channels();
    let width = p_prev.width();
    let mut p = p_prev.clone();

    let results: Vec<Result<usize, PixelFailure>> = p
        .as_mut_slice()
        .par_chunks_mut(d)
        .zip(p_prev.as_slice().par_chunks(d))
        .zip(s2.values().par_iter())
        .map(|((q, center), &s2)| {
            let objective = PixelObjective {
                center,
                s1: 1.0,
                s2,
                tau: cfg.tau,
                alpha: cfg.alpha,
                beta: cfg.beta,
            };
            minimize_pixel(&objective, q, settings)
        })
        .collect();

    let mut max_iterations = 0;
    let mut unconverged = 0;
    for (pix, r) in results.into_iter().enumerate() {
        let (i, j) = (pix % width, pix / width);
        match r {
            Ok(n) => max_iterations = max_iterations.max(n),
            Err(PixelFailure::NonFinite) => return Err(NewtonError::NonFinite { i, j }),
            Err(PixelFailure::NotConverged { iters, last_step }) => {
                if settings.accept_unconverged {
                    unconverged += 1;
                    max_iterations = max_iterations.max(iters);
                } else {
                    return Err(NewtonError::NotConverged { i, j, iters, last_step });
                }
            }
        }
    }
    Ok(NewtonOutcome {
        p,
        max_iterations,
        unconverged,
    })
}
