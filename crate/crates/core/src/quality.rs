//! PSNR and SSIM with peak value 1.
//!
//! SSIM uses the usual 11x11 Gaussian window (sigma 1.5, K1 = 0.01,
//! K2 = 0.03) but wraps the window periodically instead of cropping the
//! border, so scores differ slightly from cropping implementations.

use std::fmt;

use thiserror::Error;

use crate::grid::ScalarField;
use crate::image::MultiChannelImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QualityError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall { width: usize, height: usize, window: usize },
}

fn check_shapes(a: &MultiChannelImage, b: &MultiChannelImage) -> Result<(), QualityError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(QualityError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// Mean squared difference over all samples.
pub fn mse(a: &MultiChannelImage, b: &MultiChannelImage) -> Result<f64, QualityError> {
    check_shapes(a, b)?;
    let d = a.difference(b);
    let n = (d.pixel_count() * d.channels()) as f64;
    Ok(d.l2_norm().powi(2) / n)
}

/// `10 log10(1 / MSE)`; `+inf` for identical images.
pub fn psnr(a: &MultiChannelImage, b: &MultiChannelImage) -> Result<f64, QualityError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|t| (-(t as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Periodic separable filtering with a centered 1D window.
fn filter(f: &ScalarField, w: &[f64]) -> ScalarField {
    let (m, n) = (f.width(), f.height());
    let half = (w.len() / 2) as isize;
    let along_x1 = ScalarField::from_fn(m, n, |i, j| {
        w.iter()
            .enumerate()
            .map(|(t, wt)| wt * f.get((i as isize + t as isize - half).rem_euclid(m as isize) as usize, j))
            .sum()
    });
    ScalarField::from_fn(m, n, |i, j| {
        w.iter()
            .enumerate()
            .map(|(t, wt)| wt * along_x1.get(i, (j as isize + t as isize - half).rem_euclid(n as isize) as usize))
            .sum()
    })
}

fn product(a: &ScalarField, b: &ScalarField) -> ScalarField {
    ScalarField::from_vec(
        a.width(),
        a.height(),
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect(),
    )
}

/// Mean SSIM of one channel.
pub fn ssim_channel(a: &ScalarField, b: &ScalarField) -> f64 {
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter(a, &w);
    let mu_b = filter(b, &w);
    let aa = filter(&product(a, a), &w);
    let bb = filter(&product(b, b), &w);
    let ab = filter(&product(a, b), &w);
    let total: f64 = (0..a.len())
        .map(|idx| {
            let (ma, mb) = (mu_a.values()[idx], mu_b.values()[idx]);
            let va = aa.values()[idx] - ma * ma;
            let vb = bb.values()[idx] - mb * mb;
            let cov = ab.values()[idx] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / a.len() as f64
}

/// Channel-averaged mean SSIM.
pub fn ssim(a: &MultiChannelImage, b: &MultiChannelImage) -> Result<f64, QualityError> {
    check_shapes(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(QualityError::TooSmall {
            width: a.width(),
            height: a.height(),
            window: SSIM_WINDOW,
        });
    }
    let total: f64 = a
        .planes()
        .iter()
        .zip(b.planes())
        .map(|(x, y)| ssim_channel(x, y))
        .sum();
    Ok(total / a.channels() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    /// Decibels, `+inf` when the images agree.
    pub psnr: f64,
    pub ssim: f64,
}

impl QualityReport {
    pub fn compare(reference: &MultiChannelImage, test: &MultiChannelImage) -> Result<Self, QualityError> {
        Ok(Self {
            psnr: psnr(reference, test)?,
            ssim: ssim(reference, test)?,
        })
    }
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "psnr_db={} ssim={}", self.psnr, self.ssim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(m: usize, n: usize, d: usize) -> MultiChannelImage {
        MultiChannelImage::from_fn(m, n, d, |i, j, k| ((i * 3 + j * 5 + k * 7) % 13) as f64 / 12.0)
    }

    #[test]
    fn identical_images() {
        let a = ramp(16, 12, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(QualityReport::compare(&a, &a).unwrap().to_string(), "psnr_db=inf ssim=1");
    }

    #[test]
    fn uniform_offset_gives_20_db() {
        let a = ramp(12, 12, 3);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn tenfold_difference_costs_20_db() {
        let a = ramp(12, 12, 1);
        let b = a.map(|v| v + 0.003 * v * v);
        let c = MultiChannelImage::from_fn(12, 12, 1, |i, j, k| a.get(i, j, k) + 10.0 * (b.get(i, j, k) - a.get(i, j, k)));
        assert!((psnr(&a, &b).unwrap() - psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn constant_images_reduce_to_luminance_term() {
        let a = MultiChannelImage::constant(16, 16, 3, 0.5);
        let b = MultiChannelImage::constant(16, 16, 3, 0.6);
        let c1 = 0.01f64 * 0.01;
        let expect = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for t in 0..SSIM_WINDOW {
            assert_eq!(w[t], w[SSIM_WINDOW - 1 - t]);
        }
    }

    #[test]
    fn errors() {
        let a = ramp(12, 12, 3);
        assert!(matches!(psnr(&a, &ramp(12, 12, 1)), Err(QualityError::ShapeMismatch(_))));
        let small = ramp(10, 12, 1);
        assert!(matches!(ssim(&small, &small), Err(QualityError::TooSmall { .. })));
    }
}
