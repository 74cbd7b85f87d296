//! Periodic finite differences on an `M x N` pixel grid.
//!
//! Axis 1 runs along the image width (`i`, `0..M`) and axis 2 along the
//! height (`j`, `0..N`). Values are stored row-major, so pixel `(i, j)` lives
//! at `j * M + i`. Every operator wraps around both edges.
//!
//! Only the forward gradient and the backward divergence are needed by the
//! solver; they are negative adjoints of one another and their composition is
//! the centered 5-point Laplacian.

use std::ops::{Index, IndexMut};

/// Grid spacing. All stencils divide by this.
pub const GRID_SPACING: f64 = 1.0;

/// Differencing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along the width (`x1`, index `i`).
    X1,
    /// Along the height (`x2`, index `j`).
    X2,
}

/// One real value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        assert_eq!(values.len(), width * height, "buffer length mismatch");
        Self {
            width,
            height,
            values,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Self::from_vec(width, height, values)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[j * self.width + i] = value;
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Pointwise inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &ScalarField) {
        assert!(self.same_shape(other), "shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// Periodic translation: output `(i, j)` takes input `(i - di, j - dj)`.
    pub fn shifted(&self, di: isize, dj: isize) -> ScalarField {
        let (m, n) = (self.width as isize, self.height as isize);
        ScalarField::from_fn(self.width, self.height, |i, j| {
            let si = (i as isize - di).rem_euclid(m) as usize;
            let sj = (j as isize - dj).rem_euclid(n) as usize;
            self.get(si, sj)
        })
    }
}

impl Index<(usize, usize)> for ScalarField {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[j * self.width + i]
    }
}

impl IndexMut<(usize, usize)> for ScalarField {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[j * self.width + i]
    }
}

/// A two-component vector per pixel, such as a discrete gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    pub x1: ScalarField,
    pub x2: ScalarField,
}

impl VectorField2 {
    pub fn new(x1: ScalarField, x2: ScalarField) -> Self {
        assert!(x1.same_shape(&x2), "component shape mismatch");
        Self { x1, x2 }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(
            ScalarField::zeros(width, height),
            ScalarField::zeros(width, height),
        )
    }

    pub fn width(&self) -> usize {
        self.x1.width()
    }

    pub fn height(&self) -> usize {
        self.x1.height()
    }

    pub fn component(&self, axis: Axis) -> &ScalarField {
        match axis {
            Axis::X1 => &self.x1,
            Axis::X2 => &self.x2,
        }
    }

    /// Sum of pointwise dot products.
    pub fn dot(&self, other: &VectorField2) -> f64 {
        self.x1.dot(&other.x1) + self.x2.dot(&other.x2)
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

#[inline]
fn next(index: usize, len: usize) -> usize {
    if index + 1 == len {
        0
    } else {
        index + 1
    }
}

#[inline]
fn prev(index: usize, len: usize) -> usize {
    if index == 0 {
        len - 1
    } else {
        index - 1
    }
}

/// `(f(i+1, j) - f(i, j)) / h` on axis 1, with `f(M, .) = f(0, .)`; likewise on axis 2.
pub fn forward_diff(f: &ScalarField, axis: Axis) -> ScalarField {
    let (m, n) = (f.width(), f.height());
    match axis {
        Axis::X1 => ScalarField::from_fn(m, n, |i, j| (f.get(next(i, m), j) - f.get(i, j)) / GRID_SPACING),
        Axis::X2 => ScalarField::from_fn(m, n, |i, j| (f.get(i, next(j, n)) - f.get(i, j)) / GRID_SPACING),
    }
}

/// `(f(i, j) - f(i-1, j)) / h` on axis 1, with `f(-1, .) = f(M-1, .)`; likewise on axis 2.
pub fn backward_diff(f: &ScalarField, axis: Axis) -> ScalarField {
    let (m, n) = (f.width(), f.height());
    match axis {
        Axis::X1 => ScalarField::from_fn(m, n, |i, j| (f.get(i, j) - f.get(prev(i, m), j)) / GRID_SPACING),
        Axis::X2 => ScalarField::from_fn(m, n, |i, j| (f.get(i, j) - f.get(i, prev(j, n))) / GRID_SPACING),
    }
}

pub fn grad_plus(f: &ScalarField) -> VectorField2 {
    VectorField2::new(forward_diff(f, Axis::X1), forward_diff(f, Axis::X2))
}

/// Backward divergence, the negative adjoint of [`grad_plus`].
pub fn div_minus(p: &VectorField2) -> ScalarField {
    let mut out = backward_diff(&p.x1, Axis::X1);
    out.axpy(1.0, &backward_diff(&p.x2, Axis::X2));
    out
}

/// Centered periodic 5-point Laplacian, written out directly.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let (m, n) = (f.width(), f.height());
    let h2 = GRID_SPACING * GRID_SPACING;
    ScalarField::from_fn(m, n, |i, j| {
        (f.get(next(i, m), j) + f.get(prev(i, m), j) + f.get(i, next(j, n)) + f.get(i, prev(j, n))
            - 4.0 * f.get(i, j))
            / h2
    })
}
