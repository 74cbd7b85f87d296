//! Multi-channel real-valued images and raster file I/O.
//!
//! Samples are `f64` with a nominal range of `[0, 1]`. Nothing is clamped
//! while an image is in memory; clamping and 8-bit quantization happen only
//! in [`save_image`].

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader};
use thiserror::Error;

use crate::grid::ScalarField;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("{path} has an alpha channel; only gray and RGB images are accepted")]
    AlphaChannel { path: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: String, reason: String },
}

impl ImageIoError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            ImageIoError::Unreadable { .. } => 1,
            ImageIoError::UnsupportedFormat { .. } => 2,
            ImageIoError::AlphaChannel { .. } => 3,
            ImageIoError::Write { .. } => 4,
        }
    }
}

/// An `M x N` image with `d` channels, one [`ScalarField`] plane per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    planes: Vec<ScalarField>,
}

impl MultiChannelImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::constant(width, height, channels, 0.0)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels > 0, "image needs at least one channel");
        Self {
            planes: vec![ScalarField::constant(width, height, value); channels],
        }
    }

    /// Builds an image from per-channel planes of identical shape.
    pub fn from_planes(planes: Vec<ScalarField>) -> Self {
        assert!(!planes.is_empty(), "image needs at least one channel");
        assert!(
            planes.iter().all(|p| p.same_shape(&planes[0])),
            "channel planes differ in shape"
        );
        Self { planes }
    }

    /// `f(i, j, k)` for pixel `(i, j)` and channel `k`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut planes = Vec::with_capacity(channels);
        for k in 0..channels {
            planes.push(ScalarField::from_fn(width, height, |i, j| f(i, j, k)));
        }
        Self::from_planes(planes)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn channel(&self, k: usize) -> &ScalarField {
        &self.planes[k]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut ScalarField {
        &mut self.planes[k]
    }

    pub fn planes(&self) -> &[ScalarField] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<ScalarField> {
        self.planes
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.planes[k].get(i, j)
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.planes[k].set(i, j, value)
    }

    pub fn same_shape(&self, other: &MultiChannelImage) -> bool {
        self.channels() == other.channels() && self.planes[0].same_shape(&other.planes[0])
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(ScalarField::is_finite)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> MultiChannelImage {
        Self {
            planes: self.planes.iter().map(|p| p.map(&f)).collect(),
        }
    }

    /// Values clamped to `[0, 1]`.
    pub fn clamped(&self) -> MultiChannelImage {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Sample-wise `self - other`.
    pub fn difference(&self, other: &MultiChannelImage) -> MultiChannelImage {
        assert!(self.same_shape(other), "shape mismatch");
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| {
                let mut d = a.clone();
                d.axpy(-1.0, b);
                d
            })
            .collect();
        Self { planes }
    }

    /// Root of the sum of squares over every pixel and channel.
    pub fn l2_norm(&self) -> f64 {
        self.planes.iter().map(ScalarField::sum_of_squares).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.planes
            .iter()
            .flat_map(|p| p.values().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Rounds `[0, 1]` to an 8-bit level; out-of-range values clamp.
#[inline]
pub fn quantize_u8(value: f64) -> u8 {
    // f64::round rounds half away from zero
    (value.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Loads a PNG (8/16-bit gray or RGB) or a binary PGM/PPM.
///
/// Integer samples map to `value / (2^bits - 1)`.
pub fn load_image(path: impl AsRef<Path>) -> Result<MultiChannelImage, ImageIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageIoError::Unreadable {
        path: display(path),
        source,
    })?;
    let format = image::guess_format(&bytes).map_err(|e| ImageIoError::UnsupportedFormat {
        path: display(path),
        reason: e.to_string(),
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ImageIoError::UnsupportedFormat {
            path: display(path),
            reason: format!("{format:?} is not PNG or PNM"),
        });
    }
    let decoded = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| ImageIoError::UnsupportedFormat {
            path: display(path),
            reason: e.to_string(),
        })?;
    from_dynamic(decoded, path)
}

fn from_dynamic(img: DynamicImage, path: &Path) -> Result<MultiChannelImage, ImageIoError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes_from = |channels: usize, samples: Vec<f64>| {
        MultiChannelImage::from_fn(w, h, channels, |i, j, k| samples[(j * w + i) * channels + k])
    };
    match img.color() {
        ColorType::L8 => {
            let buf = img.into_luma8().into_raw();
            Ok(planes_from(1, buf.into_iter().map(|v| v as f64 / 255.0).collect()))
        }
        ColorType::Rgb8 => {
            let buf = img.into_rgb8().into_raw();
            Ok(planes_from(3, buf.into_iter().map(|v| v as f64 / 255.0).collect()))
        }
        ColorType::L16 => {
            let buf = img.into_luma16().into_raw();
            Ok(planes_from(1, buf.into_iter().map(|v| v as f64 / 65535.0).collect()))
        }
        ColorType::Rgb16 => {
            let buf = img.into_rgb16().into_raw();
            Ok(planes_from(3, buf.into_iter().map(|v| v as f64 / 65535.0).collect()))
        }
        c if c.has_alpha() => Err(ImageIoError::AlphaChannel { path: display(path) }),
        other => Err(ImageIoError::UnsupportedFormat {
            path: display(path),
            reason: format!("color type {other:?}"),
        }),
    }
}

/// Writes an 8-bit image. The format follows the extension: `.png`, or
/// `.pgm`/`.ppm`/`.pnm` for binary PNM. Gray images are written with one
/// channel, three-channel images as RGB.
pub fn save_image(img: &MultiChannelImage, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let write_err = |reason: String| ImageIoError::Write {
        path: display(path),
        reason,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "pgm" | "ppm" | "pnm" => ImageFormat::Pnm,
        other => return Err(write_err(format!("unsupported output extension {other:?}"))),
    };
    let (w, h, d) = (img.width(), img.height(), img.channels());
    let mut raw = Vec::with_capacity(w * h * d);
    for j in 0..h {
        for i in 0..w {
            for k in 0..d {
                raw.push(quantize_u8(img.get(i, j, k)));
            }
        }
    }
    let dynamic = match d {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size")),
        other => return Err(write_err(format!("cannot store {other} channels"))),
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| write_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_bytes(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn pgm_dimensions_and_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 128, 1, 2, 3]);
        let img = load_image(write_bytes(&dir, "a.pgm", &bytes)).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 2, 1));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 0.0);
        assert_eq!(img.get(2, 1, 0), 3.0 / 255.0);
    }

    #[test]
    fn ppm_black_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0]);
        let img = load_image(write_bytes(&dir, "b.ppm", &bytes)).unwrap();
        assert_eq!(img.channels(), 3);
        assert!((0..3).all(|k| img.get(0, 0, k) == 0.0));
    }

    #[test]
    fn sixteen_bit_png_scales_by_65535() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g16.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![65535u16, 32768]).unwrap();
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 32768.0 / 65535.0);
    }

    #[test]
    fn alpha_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        image::RgbaImage::from_raw(1, 1, vec![1, 2, 3, 4]).unwrap().save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, ImageIoError::AlphaChannel { .. }));
        assert_eq!(err.code(), 3);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_image(dir.path().join("nope.png")).unwrap_err();
        assert!(matches!(missing, ImageIoError::Unreadable { .. }));
        let junk = load_image(write_bytes(&dir, "junk.png", b"not an image at all")).unwrap_err();
        assert!(matches!(junk, ImageIoError::UnsupportedFormat { .. }));
        assert_ne!(missing.code(), junk.code());
    }

    #[test]
    fn quantization_clamps_and_rounds() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-0.2), 0);
        assert_eq!(quantize_u8(7.0), 255);
        assert_eq!(quantize_u8(0.5), 128);
    }

    #[test]
    fn save_load_error_is_within_half_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let img = MultiChannelImage::from_fn(5, 4, 3, |i, j, k| ((i * 37 + j * 11 + k * 5) % 23) as f64 / 19.0 - 0.1);
        let path = dir.path().join("x.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert!(back.same_shape(&img));
        let err = back.difference(&img.clamped()).max_abs();
        assert!(err <= 1.0 / 510.0 + 1e-15, "err {err}");

        // a second save of the loaded image is bit-identical
        let path2 = dir.path().join("y.png");
        save_image(&back, &path2).unwrap();
        assert_eq!(load_image(&path2).unwrap(), back);
    }

    #[test]
    fn lattice_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for (name, d) in [("g.pgm", 1), ("c.ppm", 3), ("c.png", 3)] {
            let img = MultiChannelImage::from_fn(7, 3, d, |i, j, k| ((i * 31 + j * 7 + k * 101) % 256) as f64 / 255.0);
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
    }
}
