//! Image and spectrum rasters in channel-plane, row-major order.

use std::fmt;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a `C x H x W` raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued `C x H x W` image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    /// Wraps `data`, checking its length and that every sample is finite.
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::validation(format!("empty image shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds an image from `f(c, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Channel-mean grayscale plane.
    pub fn to_grayscale(&self) -> Vec<T> {
        let n = self.shape.plane_len();
        let scale = T::one() / T::from_count(self.shape.channels);
        (0..n)
            .map(|p| {
                (0..self.shape.channels)
                    .map(|c| self.data[c * n + p])
                    .sum::<T>()
                    * scale
            })
            .collect()
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, self.shape));
        }
        Ok(())
    }
}

/// Complex per-channel spectrum with zero frequency at `(H/2, W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTensor<T> {
    shape: Shape,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> SpectrumTensor<T> {
    pub fn new(shape: Shape, data: Vec<Complex<T>>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::validation(format!("empty spectrum shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectrum data".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![Complex::new(T::zero(), T::zero()); shape.len()],
        }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<Complex<T>>) -> Self {
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, u: usize, v: usize) -> Complex<T> {
        self.data[(c * self.shape.height + u) * self.shape.width + v]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Fixed-length real latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector<T>(Vec<T>);

impl<T: Scalar> LatentVector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector".into()));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub(crate) fn from_raw(data: Vec<T>) -> Self {
        Self(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn squared_norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum()
    }
}

impl<T> std::ops::Deref for LatentVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}
