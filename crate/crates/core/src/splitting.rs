//! The three-step operator-splitting solver.
//!
//! One outer iteration maps `(p, lambda, G)` through
//!
//! 1. a pointwise Newton solve for `p`, a metric relaxation, and an FFT solve
//!    for `lambda` with the frozen coefficient `c1`;
//! 2. a pointwise projection of `(p, lambda)` onto the constraint
//!    `lambda_k = sqrt(g) p_k G^-1`, and a metric relaxation;
//! 3. a Helmholtz solve for `u`, `p = grad+ u`, and a metric relaxation.
//!
//! Each relaxation is `G <- e^{-gamma2 tau / 3} G + (1 - e^{-gamma2 tau / 3}) M(p)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{div_minus, grad_plus, ScalarField};
use crate::image::MultiChannelImage;
use crate::metric::{self, build_metric, JacobianField, Metric2, MetricError, MetricField};
use crate::newton::{solve_p_step1_detailed, NewtonError, NewtonSettings};
use crate::spectral::{
    convolve_periodic, solve_helmholtz, solve_helmholtz_deblur, solve_lambda_frozen, BlurKernel, SpectralError,
    SpectralPlan,
};

/// Norm used for the outer stopping test on `u^{n+1} - u^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopNorm {
    /// Root of the sum of squares over all pixels and channels (unnormalized).
    L2,
    /// Largest absolute sample.
    Linf,
}

impl StopNorm {
    pub fn measure(&self, diff: &MultiChannelImage) -> f64 {
        match self {
            StopNorm::L2 => diff.l2_norm(),
            StopNorm::Linf => diff.max_abs(),
        }
    }
}

impl fmt::Display for StopNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopNorm::L2 => "l2",
            StopNorm::Linf => "linf",
        })
    }
}

impl FromStr for StopNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(StopNorm::L2),
            "linf" => Ok(StopNorm::Linf),
            other => Err(format!("unknown norm {other:?}, expected l2 or linf")),
        }
    }
}

/// Starting image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    FromInput,
    Zeros,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::FromInput => "input",
            InitMode::Zeros => "zeros",
        })
    }
}

impl FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "input" => Ok(InitMode::FromInput),
            "zeros" => Ok(InitMode::Zeros),
            other => Err(format!("unknown init mode {other:?}, expected input or zeros")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Ratio between the spatial and color axes of the embedding.
    pub alpha: f64,
    /// Weight of the squared Laplace-Beltrami term.
    pub beta: f64,
    /// Fidelity weight; the data term is `|u - f|^2 / (2 eta)`.
    pub eta: f64,
    /// Artificial time step.
    pub tau: f64,
    /// Relaxation speed of `lambda`.
    pub gamma1: f64,
    /// Relaxation speed of the metric.
    pub gamma2: f64,
    pub stop_tol: f64,
    pub stop_norm: StopNorm,
    pub max_outer_iters: usize,
    pub newton: NewtonSettings,
    pub init_mode: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.005,
            eta: 0.5,
            tau: 0.05,
            gamma1: 1.0,
            gamma2: 3.0,
            stop_tol: 1e-2,
            stop_norm: StopNorm::L2,
            max_outer_iters: 500,
            newton: NewtonSettings::default(),
            init_mode: InitMode::FromInput,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("tau", self.tau),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("stop_tol", self.stop_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SolverError::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(SolverError::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        self.newton
            .validate()
            .map_err(|e| SolverError::Config(e.to_string()))?;
        Ok(())
    }

    /// Weight `e^{-gamma2 tau / 3}` kept on the old metric at each relaxation.
    pub fn blend_weight(&self) -> f64 {
        (-self.gamma2 * self.tau / 3.0).exp()
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("iteration {iter}: {source}")]
    Metric {
        iter: usize,
        #[source]
        source: MetricError,
    },
    #[error("iteration {iter}: {source}")]
    Newton {
        iter: usize,
        #[source]
        source: NewtonError,
    },
    #[error("iteration {iter}: {source}")]
    Spectral {
        iter: usize,
        #[source]
        source: SpectralError,
    },
    #[error("iteration {iter}: projection system is singular at pixel ({i}, {j})")]
    SingularProjection { iter: usize, i: usize, j: usize },
    #[error("iteration {iter}: non-finite state after {step}")]
    NonFinite { iter: usize, step: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub energy: f64,
    pub update_norm: f64,
}

/// Per-iteration energy and update size.
///
/// Energies are the color elastica energy of the current `u`
/// ([`metric::energy`], or its blurred-fidelity variant when deblurring).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Energy of `u^0`.
    pub initial_energy: f64,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "iter,energy,update_norm";

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn final_energy(&self) -> f64 {
        self.last().map_or(self.initial_energy, |e| e.energy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{:.15e},{:.15e}\n", e.iter, e.energy, e.update_norm));
        }
        out
    }
}

/// Everything the outer loop carries between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: MultiChannelImage,
    pub p: JacobianField,
    pub lambda: JacobianField,
    pub metric: MetricField,
    pub iter: usize,
    pub trace: Trace,
}

impl SolverState {
    pub fn is_valid(&self) -> bool {
        self.u.is_finite()
            && self.p.is_finite()
            && self.lambda.is_finite()
            && self.metric.check_positive().is_ok()
    }
}

/// `u^0 = f` (or zero), `p^0 = grad+ u^0`, `G^0 = M(p^0)`, `lambda^0 = sqrt(g^0) p^0 (G^0)^-1`.
pub fn initialize(f: &MultiChannelImage, cfg: &SolverConfig) -> Result<SolverState, SolverError> {
    cfg.validate()?;
    let u = match cfg.init_mode {
        InitMode::FromInput => f.clone(),
        InitMode::Zeros => MultiChannelImage::zeros(f.width(), f.height(), f.channels()),
    };
    let p = JacobianField::gradient_of(&u);
    let metric = build_metric(&p, cfg.alpha).map_err(|source| SolverError::Metric { iter: 0, source })?;
    let mut lambda = p.clone();
    for pix in 0..p.pixel_count() {
        let g = metric.at(pix);
        let s = g.det.sqrt();
        for row in lambda.pixel_mut(pix) {
            let [a, b] = *row;
            *row = [(g.g22 * a - g.g12 * b) / s, (-g.g12 * a + g.g11 * b) / s];
        }
    }
    Ok(SolverState {
        u,
        p,
        lambda,
        metric,
        iter: 0,
        trace: Trace::default(),
    })
}

/// `e^{-gamma2 tau / 3} G_old + (1 - e^{-gamma2 tau / 3}) M(q)`.
pub fn metric_blend(old: &MetricField, q: &JacobianField, cfg: &SolverConfig) -> MetricField {
    let weight = cfg.blend_weight();
    let entries = old
        .entries()
        .iter()
        .enumerate()
        .map(|(pix, g)| g.blend(&Metric2::from_jacobian(q.pixel(pix), cfg.alpha), weight))
        .collect();
    MetricField::from_entries(old.width(), old.height(), entries)
}

fn check_finite(state: &SolverState, step: &'static str) -> Result<(), SolverError> {
    let iter = state.iter;
    if !(state.u.is_finite() && state.p.is_finite() && state.lambda.is_finite()) {
        return Err(SolverError::NonFinite { iter, step });
    }
    state
        .metric
        .check_positive()
        .map_err(|source| SolverError::Metric { iter, source })
}

/// Newton update of `p`, metric relaxation, then the frozen-coefficient `lambda` solve.
pub fn step1(state: &mut SolverState, cfg: &SolverConfig, plan: &mut SpectralPlan) -> Result<(), SolverError> {
    let iter = state.iter;
    let outcome = solve_p_step1_detailed(&state.p, &state.lambda, cfg, &cfg.newton)
        .map_err(|source| SolverError::Newton { iter, source })?;
    state.p = outcome.p;
    state.metric = metric_blend(&state.metric, &state.p, cfg);
    let g = state.metric.determinant();
    state.lambda = solve_lambda_frozen(plan, &state.lambda, &g, cfg.gamma1, cfg.beta, cfg.tau)
        .map_err(|source| SolverError::Spectral { iter, source })?;
    check_finite(state, "step 1")
}

/// Pointwise minimizer of `|mu G / sqrt(g) - p|^2 + gamma1 |mu - lambda|^2`
/// for one channel row, by the explicit 2x2 inverse.
#[inline]
pub fn project_row(g: &Metric2, p: [f64; 2], lambda: [f64; 2], gamma1: f64) -> Option<[f64; 2]> {
    let det_g = g.det;
    let root = det_g.sqrt();
    let a11 = (2.0 * g.g11 * g.g11 + 2.0 * g.g12 * g.g12) / det_g + 2.0 * gamma1;
    let a12 = (2.0 * g.g11 * g.g12 + 2.0 * g.g12 * g.g22) / det_g;
    let a22 = (2.0 * g.g12 * g.g12 + 2.0 * g.g22 * g.g22) / det_g + 2.0 * gamma1;
    let b1 = (2.0 * g.g11 * p[0] + 2.0 * g.g12 * p[1]) / root + 2.0 * gamma1 * lambda[0];
    let b2 = (2.0 * g.g12 * p[0] + 2.0 * g.g22 * p[1]) / root + 2.0 * gamma1 * lambda[1];
    let det = a11 * a22 - a12 * a12;
    if !(det > 0.0) {
        return None;
    }
    Some([(a22 * b1 - a12 * b2) / det, (-a12 * b1 + a11 * b2) / det])
}

/// Projection onto `lambda_k = sqrt(g) p_k G^-1` under the current metric,
/// then metric relaxation.
pub fn step2(state: &mut SolverState, cfg: &SolverConfig) -> Result<(), SolverError> {
    let width = state.metric.width();
    for pix in 0..state.p.pixel_count() {
        let g = *state.metric.at(pix);
        let lambda = state.lambda.pixel_mut(pix);
        let p = state.p.pixel_mut(pix);
        for (pk, lk) in p.iter_mut().zip(lambda.iter_mut()) {
            let projected = project_row(&g, *pk, *lk, cfg.gamma1).ok_or(SolverError::SingularProjection {
                iter: state.iter,
                i: pix % width,
                j: pix / width,
            })?;
            *lk = projected;
            *pk = g.lower(projected);
        }
    }
    state.metric = metric_blend(&state.metric, &state.p, cfg);
    check_finite(state, "step 2")
}

/// What the data term compares `u` against.
#[derive(Debug, Clone)]
pub enum Fidelity {
    /// `|u - f|^2 / (2 eta)`.
    Denoise,
    /// `|K u - f|^2 / (2 eta)`, with `K* f` cached.
    Deblur { kernel: BlurKernel, adjoint_data: MultiChannelImage },
}

/// Helmholtz solve for `u`, `p = grad+ u`, metric relaxation. `lambda` is untouched.
pub fn step3(
    state: &mut SolverState,
    f: &MultiChannelImage,
    cfg: &SolverConfig,
    plan: &mut SpectralPlan,
    fidelity: &Fidelity,
) -> Result<(), SolverError> {
    let iter = state.iter;
    let mut planes = Vec::with_capacity(f.channels());
    for k in 0..f.channels() {
        let mut b = div_minus(&state.p.row(k)).map(|v| -cfg.eta * v);
        let solved = match fidelity {
            Fidelity::Denoise => {
                b.axpy(cfg.tau, f.channel(k));
                solve_helmholtz(plan, &b, cfg.eta, cfg.tau)
            }
            Fidelity::Deblur { kernel, adjoint_data } => {
                b.axpy(cfg.tau, adjoint_data.channel(k));
                solve_helmholtz_deblur(plan, &b, kernel, cfg.eta, cfg.tau)
            }
        };
        planes.push(solved.map_err(|source| SolverError::Spectral { iter, source })?);
    }
    state.u = MultiChannelImage::from_planes(planes);
    let rows: Vec<_> = state.u.planes().iter().map(grad_plus).collect();
    state.p = JacobianField::from_rows(&rows);
    state.metric = metric_blend(&state.metric, &state.p, cfg);
    check_finite(state, "step 3")
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged { iterations: usize },
    /// `max_outer_iters` reached before the stopping test passed.
    MaxIterations { iterations: usize },
}

impl RunStatus {
    pub fn iterations(&self) -> usize {
        match *self {
            RunStatus::Converged { iterations } | RunStatus::MaxIterations { iterations } => iterations,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, RunStatus::Converged { .. })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub u: MultiChannelImage,
    pub trace: Trace,
    pub status: RunStatus,
}

/// Stepwise driver around [`SolverState`].
#[derive(Debug)]
pub struct Solver {
    cfg: SolverConfig,
    f: MultiChannelImage,
    plan: SpectralPlan,
    fidelity: Fidelity,
    state: SolverState,
}

impl Solver {
    pub fn new(f: &MultiChannelImage, cfg: &SolverConfig) -> Result<Self, SolverError> {
        Self::build(f, cfg, None)
    }

    /// Deblurring variant; `kernel` must live on the grid of `f`.
    pub fn with_kernel(f: &MultiChannelImage, kernel: &BlurKernel, cfg: &SolverConfig) -> Result<Self, SolverError> {
        Self::build(f, cfg, Some(kernel))
    }

    fn build(f: &MultiChannelImage, cfg: &SolverConfig, kernel: Option<&BlurKernel>) -> Result<Self, SolverError> {
        if !f.is_finite() {
            return Err(SolverError::Shape("input image has non-finite samples".into()));
        }
        let mut plan = SpectralPlan::new(f.width(), f.height());
        let fidelity = match kernel {
            None => Fidelity::Denoise,
            Some(kernel) => {
                let taps = kernel.embedded_taps();
                if taps.width() != f.width() || taps.height() != f.height() {
                    return Err(SolverError::Shape(format!(
                        "kernel grid {}x{} does not match image {}x{}",
                        taps.width(),
                        taps.height(),
                        f.width(),
                        f.height()
                    )));
                }
                let adjoint_data = convolve_periodic(&mut plan, f, kernel, true)
                    .map_err(|source| SolverError::Spectral { iter: 0, source })?;
                Fidelity::Deblur {
                    kernel: kernel.clone(),
                    adjoint_data,
                }
            }
        };
        let mut state = initialize(f, cfg)?;
        let mut solver = Self {
            cfg: *cfg,
            f: f.clone(),
            plan,
            fidelity,
            state: state.clone(),
        };
        state.trace.initial_energy = solver.energy_of(&state.u)?;
        solver.state = state;
        Ok(solver)
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn fidelity(&self) -> &Fidelity {
        &self.fidelity
    }

    pub fn plan_mut(&mut self) -> &mut SpectralPlan {
        &mut self.plan
    }

    /// Energy of `u` under this solver's data term.
    pub fn energy_of(&mut self, u: &MultiChannelImage) -> Result<f64, SolverError> {
        let iter = self.state.iter;
        match &self.fidelity {
            Fidelity::Denoise => metric::energy(u, &self.f, &self.cfg).map_err(|source| SolverError::Metric { iter, source }),
            Fidelity::Deblur { kernel, .. } => {
                let blurred = convolve_periodic(&mut self.plan, u, kernel, false)
                    .map_err(|source| SolverError::Spectral { iter, source })?;
                let reg = metric::regularization_energy(u, self.cfg.alpha, self.cfg.beta)
                    .map_err(|source| SolverError::Metric { iter, source })?;
                Ok(reg + metric::fidelity_energy(&blurred.difference(&self.f), self.cfg.eta))
            }
        }
    }

    /// One full outer iteration. Returns the new trace row.
    pub fn iterate(&mut self) -> Result<TraceEntry, SolverError> {
        let previous = self.state.u.clone();
        self.state.iter += 1;
        step1(&mut self.state, &self.cfg, &mut self.plan)?;
        step2(&mut self.state, &self.cfg)?;
        step3(&mut self.state, &self.f, &self.cfg, &mut self.plan, &self.fidelity)?;
        let u = self.state.u.clone();
        let entry = TraceEntry {
            iter: self.state.iter,
            energy: self.energy_of(&u)?,
            update_norm: self.cfg.stop_norm.measure(&u.difference(&previous)),
        };
        self.state.trace.entries.push(entry);
        Ok(entry)
    }

    /// Iterates until the update norm is at most `stop_tol` or the
    /// iteration budget runs out. `observe` sees every new row.
    pub fn run_with(mut self, mut observe: impl FnMut(&TraceEntry)) -> Result<RunResult, SolverError> {
        let status = loop {
            if self.state.iter >= self.cfg.max_outer_iters {
                break RunStatus::MaxIterations {
                    iterations: self.state.iter,
                };
            }
            let entry = self.iterate()?;
            observe(&entry);
            if entry.update_norm <= self.cfg.stop_tol {
                break RunStatus::Converged { iterations: entry.iter };
            }
        };
        Ok(RunResult {
            u: self.state.u,
            trace: self.state.trace,
            status,
        })
    }

    pub fn run(self) -> Result<RunResult, SolverError> {
        self.run_with(|_| {})
    }
}

/// Denoises `f`.
pub fn run(f: &MultiChannelImage, cfg: &SolverConfig) -> Result<RunResult, SolverError> {
    Solver::new(f, cfg)?.run()
}

/// Restores `f = K u + noise`.
pub fn run_deblur(f: &MultiChannelImage, kernel: &BlurKernel, cfg: &SolverConfig) -> Result<RunResult, SolverError> {
    Solver::with_kernel(f, kernel, cfg)?.run()
}

/// `sum_k sum_pixels (div- grad+ u_k)^2`, per channel.
pub fn squared_laplacian(u: &MultiChannelImage) -> Vec<f64> {
    u.planes()
        .iter()
        .map(|c| div_minus(&grad_plus(c)).sum_of_squares())
        .collect()
}

/// Channel means.
pub fn channel_means(u: &MultiChannelImage) -> Vec<f64> {
    u.planes().iter().map(ScalarField::mean).collect()
}
