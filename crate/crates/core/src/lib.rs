//! Color elastica image restoration.
//!
//! A color image `u: Omega -> R^d` is treated as the surface
//! `(x1, x2, u1, ..., ud)` with induced metric `G = alpha I + J^T J`, where
//! `J` is the channel Jacobian. The restoration minimizes
//!
//! ```text
//! E(u) = sum sqrt(g) + beta sum_k (Delta_g u_k)^2 sqrt(g) + |u - f|^2 / (2 eta)
//! ```
//!
//! with `g = det G` and `Delta_g` the Laplace-Beltrami operator, using a
//! three-step operator splitting ([`splitting`]).
//!
//! ```
//! use elastica::{run, MultiChannelImage, SolverConfig};
//!
//! let f = MultiChannelImage::from_fn(16, 16, 3, |i, j, k| ((i / 8 + j / 8 + k) % 2) as f64);
//! let cfg = SolverConfig { max_outer_iters: 5, ..Default::default() };
//! let out = run(&f, &cfg).unwrap();
//! assert_eq!(out.u.width(), 16);
//! assert!(out.trace.final_energy() <= out.trace.initial_energy);
//! ```

pub mod degrade;
pub mod grid;
pub mod image;
pub mod metric;
pub mod newton;
pub mod quality;
pub mod spectral;
pub mod splitting;

pub use crate::degrade::{add_gaussian, add_poisson, make_kernel, KernelSpec, NoiseKind, NoiseSpec};
pub use crate::grid::{div_minus, grad_plus, ScalarField, VectorField2};
pub use crate::image::{load_image, save_image, ImageIoError, MultiChannelImage};
pub use crate::metric::{build_metric, energy, JacobianField, MetricField};
pub use crate::newton::NewtonSettings;
pub use crate::quality::{psnr, ssim, QualityReport};
pub use crate::spectral::{BlurKernel, KernelTaps, SpectralPlan};
pub use crate::splitting::{
    run, run_deblur, InitMode, RunResult, RunStatus, Solver, SolverConfig, SolverError, StopNorm, Trace,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/splitting.md")]
    mod splitting {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    mod degradation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
