//! Induced metric of the image manifold and the quantities built from it.
//!
//! For a `d x 2` Jacobian `q` at a pixel the metric is
//!
//! ```text
//! g11 = alpha + sum_k q_k1^2
//! g12 = sum_k q_k1 q_k2
//! g22 = alpha + sum_k q_k2^2
//! g   = g11 g22 - g12^2
//! ```
//!
//! and the auxiliary variable `mu_k = sqrt(g) q_k G^-1` turns the
//! Laplace-Beltrami operator into a plain divergence:
//! `Delta_g v_k = div(mu_k) / sqrt(g)`.

use thiserror::Error;

use crate::grid::{div_minus, grad_plus, ScalarField, VectorField2};
use crate::image::MultiChannelImage;
use crate::splitting::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("metric determinant {det} is not positive at pixel ({i}, {j})")]
    NonPositiveDeterminant { i: usize, j: usize, det: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Per-pixel `d x 2` matrices. Holds `q`, `p`, `mu` and `lambda` alike.
///
/// Storage is pixel-major: the `d` rows of one pixel are contiguous, which
/// keeps the pointwise solvers cache friendly.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<[f64; 2]>,
}

impl JacobianField {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty field");
        Self {
            width,
            height,
            channels,
            data: vec![[0.0; 2]; width * height * channels],
        }
    }

    /// Stacks one vector field per channel.
    pub fn from_rows(rows: &[VectorField2]) -> Self {
        assert!(!rows.is_empty(), "need at least one channel");
        let (w, h) = (rows[0].width(), rows[0].height());
        let mut out = Self::zeros(w, h, rows.len());
        for (k, row) in rows.iter().enumerate() {
            out.set_row(k, row);
        }
        out
    }

    /// Forward-difference Jacobian of every channel of `u`.
    pub fn gradient_of(u: &MultiChannelImage) -> Self {
        let rows: Vec<VectorField2> = u.planes().iter().map(grad_plus).collect();
        Self::from_rows(&rows)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &JacobianField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// The `d` rows at flat pixel index `pix = j * M + i`.
    #[inline]
    pub fn pixel(&self, pix: usize) -> &[[f64; 2]] {
        &self.data[pix * self.channels..(pix + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, pix: usize) -> &mut [[f64; 2]] {
        &mut self.data[pix * self.channels..(pix + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [[f64; 2]] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, pix: usize, k: usize) -> [f64; 2] {
        self.data[pix * self.channels + k]
    }

    /// Row `k` as a vector field.
    pub fn row(&self, k: usize) -> VectorField2 {
        let n = self.pixel_count();
        let x1 = (0..n).map(|p| self.get(p, k)[0]).collect();
        let x2 = (0..n).map(|p| self.get(p, k)[1]).collect();
        VectorField2::new(
            ScalarField::from_vec(self.width, self.height, x1),
            ScalarField::from_vec(self.width, self.height, x2),
        )
    }

    pub fn set_row(&mut self, k: usize, row: &VectorField2) {
        assert!(
            row.width() == self.width && row.height() == self.height,
            "row shape mismatch"
        );
        for p in 0..self.pixel_count() {
            self.data[p * self.channels + k] = [row.x1.values()[p], row.x2.values()[p]];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|e| e[0].is_finite() && e[1].is_finite())
    }

    pub fn max_abs_diff(&self, other: &JacobianField) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, e| m.max(e[0].abs()).max(e[1].abs()))
    }
}

/// One symmetric 2x2 metric at a pixel, with its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric2 {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
    pub det: f64,
}

impl Metric2 {
    pub fn new(g11: f64, g12: f64, g22: f64) -> Self {
        Self {
            g11,
            g12,
            g22,
            det: g11 * g22 - g12 * g12,
        }
    }

    /// `M(q)` for the rows of a single pixel.
    #[inline]
    pub fn from_jacobian(rows: &[[f64; 2]], alpha: f64) -> Self {
        let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
        for q in rows {
            s11 += q[0] * q[0];
            s12 += q[0] * q[1];
            s22 += q[1] * q[1];
        }
        Self::new(alpha + s11, s12, alpha + s22)
    }

    /// `sqrt(g) x G^-1 = adj(G) x / sqrt(g)` for a row vector `x`.
    #[inline]
    pub fn raise(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.det.sqrt();
        [
            (self.g22 * x[0] - self.g12 * x[1]) / s,
            (-self.g12 * x[0] + self.g11 * x[1]) / s,
        ]
    }

    /// `x G / sqrt(g)`, the inverse of [`Metric2::raise`].
    #[inline]
    pub fn lower(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.det.sqrt();
        [
            (x[0] * self.g11 + x[1] * self.g12) / s,
            (x[0] * self.g12 + x[1] * self.g22) / s,
        ]
    }

    /// `w G_old + (1 - w) G_new`, determinant recomputed.
    #[inline]
    pub fn blend(&self, other: &Metric2, weight: f64) -> Metric2 {
        let r = 1.0 - weight;
        Metric2::new(
            weight * self.g11 + r * other.g11,
            weight * self.g12 + r * other.g12,
            weight * self.g22 + r * other.g22,
        )
    }
}

/// A metric per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    width: usize,
    height: usize,
    entries: Vec<Metric2>,
}

impl MetricField {
    pub fn from_entries(width: usize, height: usize, entries: Vec<Metric2>) -> Self {
        assert_eq!(entries.len(), width * height, "entry count mismatch");
        Self {
            width,
            height,
            entries,
        }
    }

    pub fn isotropic(width: usize, height: usize, scale: f64) -> Self {
        Self::from_entries(width, height, vec![Metric2::new(scale, 0.0, scale); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, pix: usize) -> &Metric2 {
        &self.entries[pix]
    }

    pub fn entries(&self) -> &[Metric2] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Metric2] {
        &mut self.entries
    }

    /// Determinant `g` as a scalar field.
    pub fn determinant(&self) -> ScalarField {
        ScalarField::from_vec(self.width, self.height, self.entries.iter().map(|e| e.det).collect())
    }

    /// Fails on the first pixel whose determinant is not a positive finite number.
    pub fn check_positive(&self) -> Result<(), MetricError> {
        match self.entries.iter().position(|e| !(e.det > 0.0 && e.det.is_finite())) {
            None => Ok(()),
            Some(pix) => Err(MetricError::NonPositiveDeterminant {
                i: pix % self.width,
                j: pix / self.width,
                det: self.entries[pix].det,
            }),
        }
    }

    pub fn max_abs_diff(&self, other: &MetricField) -> f64 {
        self.entries.iter().zip(&other.entries).fold(0.0f64, |m, (a, b)| {
            m.max((a.g11 - b.g11).abs())
                .max((a.g12 - b.g12).abs())
                .max((a.g22 - b.g22).abs())
        })
    }
}

fn check_same_grid(q: &JacobianField, metric: &MetricField) -> Result<(), MetricError> {
    if q.width() != metric.width() || q.height() != metric.height() {
        return Err(MetricError::ShapeMismatch(format!(
            "jacobian is {}x{}, metric is {}x{}",
            q.width(),
            q.height(),
            metric.width(),
            metric.height()
        )));
    }
    Ok(())
}

/// `G = M(q)` at every pixel.
pub fn build_metric(q: &JacobianField, alpha: f64) -> Result<MetricField, MetricError> {
    if !(alpha > 0.0) {
        return Err(MetricError::NonPositiveAlpha(alpha));
    }
    let entries = (0..q.pixel_count())
        .map(|p| Metric2::from_jacobian(q.pixel(p), alpha))
        .collect();
    Ok(MetricField::from_entries(q.width(), q.height(), entries))
}

/// `mu_k = sqrt(g) q_k G^-1`, row by row.
pub fn mu_from_q(q: &JacobianField, metric: &MetricField) -> Result<JacobianField, MetricError> {
    check_same_grid(q, metric)?;
    metric.check_positive()?;
    let mut out = q.clone();
    for p in 0..q.pixel_count() {
        let m = metric.at(p);
        for row in out.pixel_mut(p) {
            *row = m.raise(*row);
        }
    }
    Ok(out)
}

/// `q_k = mu_k G / sqrt(g)`, row by row.
pub fn q_from_mu(mu: &JacobianField, metric: &MetricField) -> Result<JacobianField, MetricError> {
    check_same_grid(mu, metric)?;
    metric.check_positive()?;
    let mut out = mu.clone();
    for p in 0..mu.pixel_count() {
        let m = metric.at(p);
        for row in out.pixel_mut(p) {
            *row = m.lower(*row);
        }
    }
    Ok(out)
}

/// Discrete `Delta_g v = div-(sqrt(g) G^-1 grad+ v) / sqrt(g)`.
pub fn laplace_beltrami(v: &ScalarField, metric: &MetricField) -> Result<ScalarField, MetricError> {
    if !(v.width() == metric.width() && v.height() == metric.height()) {
        return Err(MetricError::ShapeMismatch("field and metric grids differ".into()));
    }
    metric.check_positive()?;
    let grad = grad_plus(v);
    let mut flux = grad.clone();
    for p in 0..v.len() {
        let r = metric.at(p).raise([grad.x1.values()[p], grad.x2.values()[p]]);
        flux.x1.values_mut()[p] = r[0];
        flux.x2.values_mut()[p] = r[1];
    }
    let mut out = div_minus(&flux);
    for (o, e) in out.values_mut().iter_mut().zip(metric.entries()) {
        *o /= e.det.sqrt();
    }
    Ok(out)
}

/// `sum_pixels [sqrt(g) + beta / sqrt(g) sum_k (div- mu_k)^2] h^2` with
/// `q = grad+ u`, `G = M(q)` and `mu = mu_from_q(q, G)`.
pub fn regularization_energy(u: &MultiChannelImage, alpha: f64, beta: f64) -> Result<f64, MetricError> {
    let q = JacobianField::gradient_of(u);
    let metric = build_metric(&q, alpha)?;
    let mu = mu_from_q(&q, &metric)?;
    let curvature: Vec<ScalarField> = (0..u.channels()).map(|k| div_minus(&mu.row(k))).collect();
    let h2 = crate::grid::GRID_SPACING * crate::grid::GRID_SPACING;
    let mut total = 0.0;
    for (pix, m) in metric.entries().iter().enumerate() {
        let s = m.det.sqrt();
        let bend: f64 = curvature.iter().map(|c| c.values()[pix].powi(2)).sum();
        total += (s + beta * bend / s) * h2;
    }
    Ok(total)
}

/// `(1 / 2 eta) sum_k |r_k|^2 h^2` for a residual image `r`.
pub fn fidelity_energy(residual: &MultiChannelImage, eta: f64) -> f64 {
    let h2 = crate::grid::GRID_SPACING * crate::grid::GRID_SPACING;
    residual.l2_norm().powi(2) * h2 / (2.0 * eta)
}

/// Color elastica energy of `u` against data `f`, evaluated from `u` alone.
pub fn energy(u: &MultiChannelImage, f: &MultiChannelImage, cfg: &SolverConfig) -> Result<f64, MetricError> {
    if !u.same_shape(f) {
        return Err(MetricError::ShapeMismatch(format!(
            "u is {}x{}x{}, f is {}x{}x{}",
            u.width(),
            u.height(),
            u.channels(),
            f.width(),
            f.height(),
            f.channels()
        )));
    }
    Ok(regularization_energy(u, cfg.alpha, cfg.beta)? + fidelity_energy(&u.difference(f), cfg.eta))
}
