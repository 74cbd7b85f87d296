//! FFT solvers for the constant-coefficient periodic problems of the scheme.
//!
//! Under the 2D DFT a forward shift `f(i+1, j)` becomes multiplication by
//! `e^{i z_i}` with `z_i = 2 pi i / M` (0-based), so the stencils of
//! [`crate::grid`] have the symbols
//!
//! ```text
//! d1+  ->  (e^{i z_i} - 1) / h        d1-  ->  (1 - e^{-i z_i}) / h
//! ```
//!
//! and every solver divides by the symbol of its operator, built from these
//! two factors. All symbols come from real stencils, so they are
//! conjugate-symmetric and the inverse transforms are real up to rounding.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::grid::{div_minus, forward_diff, Axis, ScalarField, VectorField2, GRID_SPACING};
use crate::image::MultiChannelImage;
use crate::metric::JacobianField;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("metric determinant {det} is not positive at pixel ({i}, {j})")]
    NonPositiveDeterminant { i: usize, j: usize, det: f64 },
    #[error("operator symbol vanishes at frequency ({fi}, {fj})")]
    SingularSymbol { fi: usize, fj: usize },
    #[error("non-finite input to spectral solve")]
    NonFinite,
    #[error("grid mismatch: plan is {plan_w}x{plan_h}, data is {w}x{h}")]
    ShapeMismatch { plan_w: usize, plan_h: usize, w: usize, h: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
}

fn positive(name: &'static str, value: f64) -> Result<(), SpectralError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SpectralError::NonPositiveParameter { name, value })
    }
}

/// FFT plans, shift symbols and scratch for one grid size.
///
/// Not shareable between concurrent solves; build one per thread.
pub struct SpectralPlan {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    transpose: Vec<Complex64>,
    /// `e^{i z_i}`, `i = 0..M`.
    shift1: Vec<Complex64>,
    /// `e^{i z_j}`, `j = 0..N`.
    shift2: Vec<Complex64>,
    last_imag_ratio: f64,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl SpectralPlan {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        let mut planner = FftPlanner::new();
        let angle = |k: usize, len: usize| 2.0 * std::f64::consts::PI * k as f64 / len as f64;
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            transpose: vec![Complex64::default(); width * height],
            shift1: (0..width).map(|i| Complex64::from_polar(1.0, angle(i, width))).collect(),
            shift2: (0..height).map(|j| Complex64::from_polar(1.0, angle(j, height))).collect(),
            last_imag_ratio: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Frequency angle `z_i = 2 pi i / M` along axis 1 (0-based `i`).
    pub fn angle1(&self, i: usize) -> f64 {
        self.shift1[i].arg().rem_euclid(2.0 * std::f64::consts::PI)
    }

    /// Frequency angle `z_j = 2 pi j / N` along axis 2.
    pub fn angle2(&self, j: usize) -> f64 {
        self.shift2[j].arg().rem_euclid(2.0 * std::f64::consts::PI)
    }

    /// Largest `|Im| / max|Re|` seen by the most recent inverse transform.
    pub fn last_imaginary_ratio(&self) -> f64 {
        self.last_imag_ratio
    }

    fn check(&self, f: &ScalarField) -> Result<(), SpectralError> {
        if f.width() != self.width || f.height() != self.height {
            return Err(SpectralError::ShapeMismatch {
                plan_w: self.width,
                plan_h: self.height,
                w: f.width(),
                h: f.height(),
            });
        }
        if !f.is_finite() {
            return Err(SpectralError::NonFinite);
        }
        Ok(())
    }

    fn check_kernel(&self, kernel: &BlurKernel) -> Result<(), SpectralError> {
        if kernel.taps.width() != self.width || kernel.taps.height() != self.height {
            return Err(SpectralError::ShapeMismatch {
                plan_w: self.width,
                plan_h: self.height,
                w: kernel.taps.width(),
                h: kernel.taps.height(),
            });
        }
        Ok(())
    }

    /// Symbol of the forward difference along axis 1 at column frequency `i`.
    #[inline]
    fn fwd1(&self, i: usize) -> Complex64 {
        (self.shift1[i] - 1.0) / GRID_SPACING
    }

    #[inline]
    fn fwd2(&self, j: usize) -> Complex64 {
        (self.shift2[j] - 1.0) / GRID_SPACING
    }

    #[inline]
    fn bwd1(&self, i: usize) -> Complex64 {
        (1.0 - self.shift1[i].conj()) / GRID_SPACING
    }

    #[inline]
    fn bwd2(&self, j: usize) -> Complex64 {
        (1.0 - self.shift2[j].conj()) / GRID_SPACING
    }

    /// `-(symbol of div- grad+)`, i.e. `(2 - 2 cos z_i + 2 - 2 cos z_j) / h^2 >= 0`.
    #[inline]
    fn neg_laplacian(&self, i: usize, j: usize) -> f64 {
        -(self.fwd1(i) * self.bwd1(i)).re - (self.fwd2(j) * self.bwd2(j)).re
    }

    fn transform(&mut self, buf: &mut [Complex64], inverse: bool) {
        let (m, n) = (self.width, self.height);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        for j in 0..n {
            for i in 0..m {
                self.transpose[i * n + j] = buf[j * m + i];
            }
        }
        col.process(&mut self.transpose);
        for i in 0..m {
            for j in 0..n {
                buf[j * m + i] = self.transpose[i * n + j];
            }
        }
    }

    /// Forward 2D DFT of a real field.
    pub fn forward(&mut self, f: &ScalarField) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Normalized inverse 2D DFT, keeping the real part.
    pub fn inverse_real(&mut self, mut spectrum: Vec<Complex64>) -> ScalarField {
        self.transform(&mut spectrum, true);
        let scale = 1.0 / (self.width * self.height) as f64;
        let (mut max_re, mut max_im) = (0.0f64, 0.0f64);
        let values = spectrum
            .iter()
            .map(|c| {
                max_re = max_re.max(c.re.abs());
                max_im = max_im.max(c.im.abs());
                c.re * scale
            })
            .collect();
        self.last_imag_ratio = if max_re > 0.0 { max_im / max_re } else { max_im };
        ScalarField::from_vec(self.width, self.height, values)
    }
}

/// Blur taps on a small dense support with a marked origin.
///
/// Rows run along axis 2 and columns along axis 1, so tap `(r, c)` acts at
/// offset `(c - origin_col, r - origin_row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTaps {
    rows: usize,
    cols: usize,
    origin: (usize, usize),
    values: Vec<f64>,
}

impl KernelTaps {
    /// Row-major taps with origin at `(rows / 2, cols / 2)`.
    pub fn centered(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, SpectralError> {
        Self::with_origin(rows, cols, (rows / 2, cols / 2), values)
    }

    pub fn with_origin(
        rows: usize,
        cols: usize,
        origin: (usize, usize),
        values: Vec<f64>,
    ) -> Result<Self, SpectralError> {
        if rows == 0 || cols == 0 {
            return Err(SpectralError::InvalidKernel("empty support".into()));
        }
        if values.len() != rows * cols {
            return Err(SpectralError::InvalidKernel(format!(
                "expected {} taps, found {}",
                rows * cols,
                values.len()
            )));
        }
        if origin.0 >= rows || origin.1 >= cols {
            return Err(SpectralError::InvalidKernel("origin outside support".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::InvalidKernel("non-finite tap".into()));
        }
        Ok(Self {
            rows,
            cols,
            origin,
            values,
        })
    }

    /// Builds taps from `(di, dj, weight)` offsets; repeated offsets add up.
    pub fn from_offsets(offsets: &[(isize, isize, f64)]) -> Result<Self, SpectralError> {
        if offsets.is_empty() {
            return Err(SpectralError::InvalidKernel("no taps".into()));
        }
        let min_i = offsets.iter().map(|o| o.0).min().unwrap();
        let max_i = offsets.iter().map(|o| o.0).max().unwrap();
        let min_j = offsets.iter().map(|o| o.1).min().unwrap();
        let max_j = offsets.iter().map(|o| o.1).max().unwrap();
        let cols = (max_i - min_i + 1) as usize;
        let rows = (max_j - min_j + 1) as usize;
        let mut values = vec![0.0; rows * cols];
        for &(di, dj, w) in offsets {
            values[(dj - min_j) as usize * cols + (di - min_i) as usize] += w;
        }
        Self::with_origin(rows, cols, ((-min_j) as usize, (-min_i) as usize), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `(di, dj, weight)` for every tap.
    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        self.values.iter().enumerate().map(move |(idx, &w)| {
            let (r, c) = (idx / self.cols, idx % self.cols);
            (
                c as isize - self.origin.1 as isize,
                r as isize - self.origin.0 as isize,
                w,
            )
        })
    }

    /// Parses the text format: a `rows cols` line, then `rows * cols`
    /// whitespace-separated taps in row-major order. The origin is the
    /// center tap `(rows / 2, cols / 2)`.
    pub fn parse(text: &str) -> Result<Self, SpectralError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| SpectralError::InvalidKernel("missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| SpectralError::InvalidKernel(format!("bad header: {e}")))?;
        let [rows, cols] = dims[..] else {
            return Err(SpectralError::InvalidKernel("header must be `rows cols`".into()));
        };
        let values: Vec<f64> = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SpectralError::InvalidKernel(format!("bad tap: {e}")))?;
        Self::centered(rows, cols, values)
    }

    /// Writes the text format, zero-padding so the origin is the center tap.
    pub fn to_text(&self) -> String {
        let (r0, c0) = self.origin;
        let half_r = r0.max(self.rows - 1 - r0);
        let half_c = c0.max(self.cols - 1 - c0);
        let (rows, cols) = (2 * half_r + 1, 2 * half_c + 1);
        let mut grid = vec![0.0; rows * cols];
        for (di, dj, w) in self.offsets() {
            let r = (dj + half_r as isize) as usize;
            let c = (di + half_c as isize) as usize;
            grid[r * cols + c] = w;
        }
        let mut out = format!("{rows} {cols}\n");
        for r in 0..rows {
            let line: Vec<String> = grid[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// A blur operator on a specific periodic grid, with its cached frequency response.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: ScalarField,
    response: Vec<Complex64>,
}

impl BlurKernel {
    /// Embeds `taps` into the `M x N` grid with the origin at pixel `(0, 0)`.
    pub fn new(taps: &KernelTaps, plan: &mut SpectralPlan) -> Self {
        let (m, n) = (plan.width() as isize, plan.height() as isize);
        let mut grid = ScalarField::zeros(plan.width(), plan.height());
        for (di, dj, w) in taps.offsets() {
            let (i, j) = (di.rem_euclid(m) as usize, dj.rem_euclid(n) as usize);
            grid[(i, j)] += w;
        }
        let response = plan.forward(&grid);
        Self { taps: grid, response }
    }

    /// Same as [`BlurKernel::new`] with a throwaway plan.
    pub fn for_grid(taps: &KernelTaps, width: usize, height: usize) -> Self {
        Self::new(taps, &mut SpectralPlan::new(width, height))
    }

    /// The identity operator.
    pub fn delta(plan: &mut SpectralPlan) -> Self {
        let taps = KernelTaps::centered(1, 1, vec![1.0]).expect("valid delta");
        Self::new(&taps, plan)
    }

    /// True when the embedded taps are the unit impulse at the origin.
    pub fn is_identity(&self) -> bool {
        let v = self.taps.values();
        v[0] == 1.0 && v[1..].iter().all(|&t| t == 0.0)
    }

    pub fn embedded_taps(&self) -> &ScalarField {
        &self.taps
    }

    pub fn response(&self) -> &[Complex64] {
        &self.response
    }
}

/// `c1 = max 2 beta tau / sqrt(g)`, the frozen coefficient of the lambda solve.
pub fn frozen_coefficient(g: &ScalarField, beta: f64, tau: f64) -> Result<f64, SpectralError> {
    let mut c1 = 0.0f64;
    for (pix, &det) in g.values().iter().enumerate() {
        if !(det > 0.0) {
            return Err(SpectralError::NonPositiveDeterminant {
                i: pix % g.width(),
                j: pix / g.width(),
                det,
            });
        }
        c1 = c1.max(2.0 * beta * tau / det.sqrt());
    }
    Ok(c1)
}

/// Solves, for every channel `k`,
///
/// ```text
/// gamma1 L - c1 grad+(div- L) = gamma1 L^n - grad+[(c1 - 2 beta tau / sqrt(g)) div- L^n]
/// ```
///
/// for `L = lambda_k`, with `c1 = max 2 beta tau / sqrt(g)`. The left side has
/// constant coefficients and is inverted per frequency as a 2x2 system.
pub fn solve_lambda_frozen(
    plan: &mut SpectralPlan,
    lambda_n: &JacobianField,
    g: &ScalarField,
    gamma1: f64,
    beta: f64,
    tau: f64,
) -> Result<JacobianField, SpectralError> {
    positive("gamma1", gamma1)?;
    positive("tau", tau)?;
    if !(beta >= 0.0) {
        return Err(SpectralError::NegativeParameter { name: "beta", value: beta });
    }
    plan.check(g)?;
    if !lambda_n.is_finite() {
        return Err(SpectralError::NonFinite);
    }
    let c1 = frozen_coefficient(g, beta, tau)?;
    let correction = g.map(|det| c1 - 2.0 * beta * tau / det.sqrt());

    let (m, n) = (plan.width(), plan.height());
    let mut out = JacobianField::zeros(m, n, lambda_n.channels());
    for k in 0..lambda_n.channels() {
        let row = lambda_n.row(k);
        let mut r = div_minus(&row);
        for (v, c) in r.values_mut().iter_mut().zip(correction.values()) {
            *v *= c;
        }
        let mut w1 = row.x1.map(|v| gamma1 * v);
        w1.axpy(-1.0, &forward_diff(&r, Axis::X1));
        let mut w2 = row.x2.map(|v| gamma1 * v);
        w2.axpy(-1.0, &forward_diff(&r, Axis::X2));

        let hat1 = plan.forward(&w1);
        let hat2 = plan.forward(&w2);
        let mut sol1 = vec![Complex64::default(); m * n];
        let mut sol2 = vec![Complex64::default(); m * n];
        for j in 0..n {
            for i in 0..m {
                let idx = j * m + i;
                let a11 = gamma1 - c1 * plan.fwd1(i) * plan.bwd1(i);
                let a22 = gamma1 - c1 * plan.fwd2(j) * plan.bwd2(j);
                let a12 = -c1 * plan.fwd1(i) * plan.bwd2(j);
                let a21 = -c1 * plan.fwd2(j) * plan.bwd1(i);
                let det = a11 * a22 - a12 * a21;
                if !(det.norm() > 0.0) {
                    return Err(SpectralError::SingularSymbol { fi: i, fj: j });
                }
                sol1[idx] = (a22 * hat1[idx] - a12 * hat2[idx]) / det;
                sol2[idx] = (-a21 * hat1[idx] + a11 * hat2[idx]) / det;
            }
        }
        let l1 = plan.inverse_real(sol1);
        let l2 = plan.inverse_real(sol2);
        out.set_row(k, &VectorField2::new(l1, l2));
    }
    Ok(out)
}

/// Solves `-eta div-(grad+ u) + tau u = b`.
pub fn solve_helmholtz(plan: &mut SpectralPlan, b: &ScalarField, eta: f64, tau: f64) -> Result<ScalarField, SpectralError> {
    positive("eta", eta)?;
    positive("tau", tau)?;
    plan.check(b)?;
    let (m, n) = (plan.width(), plan.height());
    let mut hat = plan.forward(b);
    for j in 0..n {
        for i in 0..m {
            hat[j * m + i] /= tau + eta * plan.neg_laplacian(i, j);
        }
    }
    Ok(plan.inverse_real(hat))
}

/// Solves `-eta div-(grad+ u) + tau K*K u = b`.
pub fn solve_helmholtz_deblur(
    plan: &mut SpectralPlan,
    b: &ScalarField,
    kernel: &BlurKernel,
    eta: f64,
    tau: f64,
) -> Result<ScalarField, SpectralError> {
    positive("eta", eta)?;
    positive("tau", tau)?;
    plan.check(b)?;
    plan.check_kernel(kernel)?;
    let (m, n) = (plan.width(), plan.height());
    let mut hat = plan.forward(b);
    for j in 0..n {
        for i in 0..m {
            let idx = j * m + i;
            let symbol = tau * kernel.response[idx].norm_sqr() + eta * plan.neg_laplacian(i, j);
            if !(symbol > 0.0) {
                return Err(SpectralError::SingularSymbol { fi: i, fj: j });
            }
            hat[idx] /= symbol;
        }
    }
    Ok(plan.inverse_real(hat))
}

/// Circular convolution of one field with the kernel (or its adjoint).
pub fn convolve_field(plan: &mut SpectralPlan, f: &ScalarField, kernel: &BlurKernel, adjoint: bool) -> Result<ScalarField, SpectralError> {
    plan.check(f)?;
    plan.check_kernel(kernel)?;
    if kernel.is_identity() {
        return Ok(f.clone());
    }
    let mut hat = plan.forward(f);
    for (h, k) in hat.iter_mut().zip(&kernel.response) {
        *h *= if adjoint { k.conj() } else { *k };
    }
    Ok(plan.inverse_real(hat))
}

/// Per-channel circular convolution; `adjoint` applies `K*` instead of `K`.
pub fn convolve_periodic(
    plan: &mut SpectralPlan,
    img: &MultiChannelImage,
    kernel: &BlurKernel,
    adjoint: bool,
) -> Result<MultiChannelImage, SpectralError> {
    let planes = img
        .planes()
        .iter()
        .map(|p| convolve_field(plan, p, kernel, adjoint))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiChannelImage::from_planes(planes))
}

/// Per channel, the periodic solution of `div-(grad+ v) = div- q_k` whose
/// mean equals the mean of `f_k`.
pub fn reconstruct_from_gradient(
    plan: &mut SpectralPlan,
    q: &JacobianField,
    f: &MultiChannelImage,
) -> Result<MultiChannelImage, SpectralError> {
    if q.channels() != f.channels() {
        return Err(SpectralError::InvalidKernel(format!(
            "gradient has {} channels, image has {}",
            q.channels(),
            f.channels()
        )));
    }
    let (m, n) = (plan.width(), plan.height());
    let mut planes = Vec::with_capacity(f.channels());
    for k in 0..f.channels() {
        plan.check(f.channel(k))?;
        let rhs = div_minus(&q.row(k));
        plan.check(&rhs)?;
        let mut hat = plan.forward(&rhs);
        for j in 0..n {
            for i in 0..m {
                let idx = j * m + i;
                hat[idx] = if idx == 0 {
                    Complex64::new(f.channel(k).mean() * (m * n) as f64, 0.0)
                } else {
                    -hat[idx] / plan.neg_laplacian(i, j)
                };
            }
        }
        planes.push(plan.inverse_real(hat));
    }
    Ok(MultiChannelImage::from_planes(planes))
}

/// `tau` times the identity minus `eta` times the 5-point Laplacian, by stencil.
pub fn apply_helmholtz(u: &ScalarField, eta: f64, tau: f64) -> ScalarField {
    let mut out = div_minus(&crate::grid::grad_plus(u)).map(|v| -eta * v);
    out.axpy(tau, u);
    out
}

/// Left side of the frozen lambda equation, `gamma1 L - c1 grad+(div- L)`, by stencil.
pub fn apply_frozen_lambda_operator(l: &VectorField2, gamma1: f64, c1: f64) -> VectorField2 {
    let d = div_minus(l);
    let mut x1 = l.x1.map(|v| gamma1 * v);
    x1.axpy(-c1, &forward_diff(&d, Axis::X1));
    let mut x2 = l.x2.map(|v| gamma1 * v);
    x2.axpy(-c1, &forward_diff(&d, Axis::X2));
    VectorField2::new(x1, x2)
}
