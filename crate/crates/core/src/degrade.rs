//! Seeded synthesis of noisy and blurred inputs.
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`,
//! consumed channel by channel, row by row (`j`), then column (`i`). Noise is
//! never clamped; only saving to disk clamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::image::MultiChannelImage;
use crate::spectral::{KernelTaps, SpectralError};

/// Rates below this use exact CDF inversion; above, a rounded normal.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DegradeError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("standard deviation must be non-negative, got {0}")]
    NegativeDeviation(f64),
    #[error(transparent)]
    Kernel(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian { sd: f64 },
    Poisson { photons: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sd: f64, seed: u64) -> Result<Self, DegradeError> {
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err(DegradeError::NegativeDeviation(sd));
        }
        Ok(Self {
            kind: NoiseKind::Gaussian { sd },
            seed,
        })
    }

    pub fn poisson(photons: f64, seed: u64) -> Result<Self, DegradeError> {
        if !(photons > 0.0 && photons.is_finite()) {
            return Err(DegradeError::NonPositive {
                name: "photons",
                value: photons,
            });
        }
        Ok(Self {
            kind: NoiseKind::Poisson { photons },
            seed,
        })
    }

    pub fn apply(&self, img: &MultiChannelImage) -> MultiChannelImage {
        match self.kind {
            NoiseKind::Gaussian { sd } => add_gaussian(img, sd, self.seed),
            NoiseKind::Poisson { photons } => add_poisson(img, photons, self.seed),
        }
    }
}

fn map_seeded(img: &MultiChannelImage, seed: u64, mut f: impl FnMut(f64, &mut ChaCha8Rng) -> f64) -> MultiChannelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for k in 0..out.channels() {
        for v in out.channel_mut(k).values_mut() {
            *v = f(*v, &mut rng);
        }
    }
    out
}

/// Adds i.i.d. `N(0, sd^2)` samples.
pub fn add_gaussian(img: &MultiChannelImage, sd: f64, seed: u64) -> MultiChannelImage {
    if sd == 0.0 {
        return img.clone();
    }
    map_seeded(img, seed, |v, rng| {
        let z: f64 = rng.sample(StandardNormal);
        v + sd * z
    })
}

/// One Poisson draw of the given rate.
pub fn sample_poisson(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut prob = (-rate).exp();
        let mut cdf = prob;
        let mut k = 0u32;
        while u > cdf && prob > 0.0 {
            k += 1;
            prob *= rate / k as f64;
            cdf += prob;
        }
        return k as f64;
    }
    let z: f64 = rng.sample(StandardNormal);
    (rate + rate.sqrt() * z + 0.5).floor().max(0.0)
}

/// `Poisson(max(v, 0) P) / P` per sample.
pub fn add_poisson(img: &MultiChannelImage, photons: f64, seed: u64) -> MultiChannelImage {
    map_seeded(img, seed, |v, rng| sample_poisson(v.max(0.0) * photons, rng) / photons)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Uniform `width x height` support.
    Box { width: usize, height: usize },
    /// Sampled Gaussian on `[-radius, radius]^2`.
    Gaussian { sigma: f64, radius: usize },
    /// `length` unit-spaced taps from the origin along `angle_deg`
    /// (degrees, counterclockwise from axis 1), each rounded to the nearest pixel.
    Motion { length: usize, angle_deg: f64 },
}

/// Builds normalized taps.
pub fn make_kernel(spec: KernelSpec) -> Result<KernelTaps, DegradeError> {
    let positive = |name, value: f64| {
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(DegradeError::NonPositive { name, value })
        }
    };
    let taps = match spec {
        KernelSpec::Box { width, height } => {
            positive("box width", width as f64)?;
            positive("box height", height as f64)?;
            KernelTaps::centered(height, width, vec![1.0; width * height])?
        }
        KernelSpec::Gaussian { sigma, radius } => {
            positive("sigma", sigma)?;
            let r = radius as isize;
            let mut offsets = Vec::new();
            for dj in -r..=r {
                for di in -r..=r {
                    let d2 = (di * di + dj * dj) as f64;
                    offsets.push((di, dj, (-d2 / (2.0 * sigma * sigma)).exp()));
                }
            }
            KernelTaps::from_offsets(&offsets)?
        }
        KernelSpec::Motion { length, angle_deg } => {
            positive("motion length", length as f64)?;
            if !angle_deg.is_finite() {
                return Err(DegradeError::NonPositive {
                    name: "motion angle",
                    value: angle_deg,
                });
            }
            let (s, c) = angle_deg.to_radians().sin_cos();
            let offsets: Vec<_> = (0..length)
                .map(|t| {
                    let t = t as f64;
                    ((t * c).round() as isize, (t * s).round() as isize, 1.0)
                })
                .collect();
            KernelTaps::from_offsets(&offsets)?
        }
    };
    let sum = taps.sum();
    let values = taps.values().iter().map(|v| v / sum).collect();
    Ok(KernelTaps::with_origin(taps.rows(), taps.cols(), taps.origin(), values)?)
}
