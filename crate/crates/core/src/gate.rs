//! Learnable per-band pass-through rates and weighted-average fusion.
//!
//! The fused image is `sum_i a_i f_i / (sum_i a_i + eps)` with `a_i = sigmoid(w_i)`.
//! One weight per band, shared across channels and samples.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::spectral::BandDecomposition;
use crate::tensor::ImageTensor;

pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GateParameters<T> {
    w: Vec<T>,
    epsilon: T,
}

impl<T: Scalar> GateParameters<T> {
    pub fn new(w: Vec<T>, epsilon: T) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::validation("gate needs at least one band"));
        }
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::validation(format!("epsilon must be positive, got {epsilon}")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gate weights".into()));
        }
        Ok(Self { w, epsilon })
    }

    /// `n_bands` weights all equal to `w_init`.
    pub fn uniform(n_bands: usize, w_init: T, epsilon: T) -> Result<Self> {
        Self::new(vec![w_init; n_bands], epsilon)
    }

    pub fn n_bands(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Returns a copy with new raw weights.
    pub fn with_weights(&self, w: Vec<T>) -> Result<Self> {
        if w.len() != self.w.len() {
            return Err(Error::shape(self.w.len(), w.len()));
        }
        Self::new(w, self.epsilon)
    }
}

/// `a_i = 1 / (1 + exp(-w_i))`.
pub fn pass_through_rates<T: Scalar>(params: &GateParameters<T>) -> Vec<T> {
    params.w.iter().map(|&w| sigmoid(w)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGradient<T> {
    pub d_loss_d_w: Vec<T>,
}

fn check_bands<T: Scalar>(decomp: &BandDecomposition<T>, params: &GateParameters<T>) -> Result<()> {
    if decomp.n_bands() != params.n_bands() {
        return Err(Error::validation(format!(
            "decomposition has {} bands, gate has {}",
            decomp.n_bands(),
            params.n_bands()
        )));
    }
    Ok(())
}

/// Fuses band-limited images with the gate's pass-through rates.
pub fn fuse<T: Scalar>(
    decomp: &BandDecomposition<T>,
    params: &GateParameters<T>,
) -> Result<ImageTensor<T>> {
    check_bands(decomp, params)?;
    let alpha = pass_through_rates(params);
    Ok(fuse_with_rates(decomp, &alpha, params.epsilon))
}

pub(crate) fn fuse_with_rates<T: Scalar>(
    decomp: &BandDecomposition<T>,
    alpha: &[T],
    epsilon: T,
) -> ImageTensor<T> {
    let shape = decomp.shape();
    let denom = alpha.iter().copied().sum::<T>() + epsilon;
    let mut out = vec![T::zero(); shape.len()];
    for (band, &a) in decomp.bands().iter().zip(alpha) {
        for (o, &v) in out.iter_mut().zip(band.data()) {
            *o = *o + a * v;
        }
    }
    for o in &mut out {
        *o = *o / denom;
    }
    ImageTensor::from_raw(shape, out)
}

/// Gradient of `<upstream, fuse(decomp, params)>` with respect to the raw weights.
///
/// Uses `d fused / d a_k = (f_k - fused) / (sum a + eps)` and
/// `d a_k / d w_k = a_k (1 - a_k)`.
pub fn fuse_gradient<T: Scalar>(
    decomp: &BandDecomposition<T>,
    params: &GateParameters<T>,
    upstream: &ImageTensor<T>,
) -> Result<GateGradient<T>> {
    check_bands(decomp, params)?;
    upstream.ensure_shape(decomp.shape())?;
    let alpha = pass_through_rates(params);
    let fused = fuse_with_rates(decomp, &alpha, params.epsilon);
    let denom = alpha.iter().copied().sum::<T>() + params.epsilon;
    let up_dot_fused: T = upstream
        .data()
        .iter()
        .zip(fused.data())
        .map(|(&g, &x)| g * x)
        .sum();
    let d_loss_d_w = decomp
        .bands()
        .iter()
        .zip(&alpha)
        .map(|(band, &a)| {
            let up_dot_band: T = upstream
                .data()
                .iter()
                .zip(band.data())
                .map(|(&g, &f)| g * f)
                .sum();
            (up_dot_band - up_dot_fused) / denom * a * (T::one() - a)
        })
        .collect();
    Ok(GateGradient { d_loss_d_w })
}
