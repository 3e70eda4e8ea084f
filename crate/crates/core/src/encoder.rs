//! Frozen image encoders.
//!
//! [`FrozenEncoder`] is the seam where a pretrained VAE encoder would plug in.
//! A real adapter would normalize the fused image to the network's input
//! format inside `encode`; the surrogates here consume `[0, 1]` images as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, normal, STREAM_ENCODER};
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, LatentVector, Shape};

/// Deterministic, stateless image-to-latent map.
pub trait FrozenEncoder<T: Scalar>: Send + Sync {
    fn input_shape(&self) -> Shape;

    fn latent_dim(&self) -> usize;

    fn encode(&self, image: &ImageTensor<T>) -> Result<LatentVector<T>>;

    /// Vector-Jacobian product at `image`: pulls a latent cotangent back to
    /// image space.
    fn pullback(&self, image: &ImageTensor<T>, cotangent: &[T]) -> Result<ImageTensor<T>>;

    /// Whether `encode` is a linear map. Training caches per-band latents
    /// for linear encoders instead of re-encoding fused images.
    fn is_linear(&self) -> bool {
        false
    }
}

/// Encodes `image` with `encoder`.
pub fn encode<T: Scalar>(
    encoder: &dyn FrozenEncoder<T>,
    image: &ImageTensor<T>,
) -> Result<LatentVector<T>> {
    encoder.encode(image)
}

/// Dense projection `z = P vec(x)`.
#[derive(Debug, Clone)]
pub struct LinearProjectionEncoder<T> {
    shape: Shape,
    latent_dim: usize,
    // latent_dim x shape.len(), row-major
    matrix: Vec<T>,
}

/// Seeded Gaussian projection with rows scaled by `1/sqrt(C*H*W)`.
pub fn make_linear_projection_encoder<T: Scalar>(
    seed: u64,
    in_shape: Shape,
    latent_dim: usize,
) -> Result<LinearProjectionEncoder<T>> {
    if latent_dim == 0 {
        return Err(Error::validation("latent_dim must be at least 1"));
    }
    if in_shape.is_empty() {
        return Err(Error::validation(format!("empty encoder input shape {in_shape}")));
    }
    let n = in_shape.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut matrix = Vec::with_capacity(latent_dim * n);
    for row in 0..latent_dim {
        let mut rng = derive_rng(seed, STREAM_ENCODER, row as u64);
        matrix.extend((0..n).map(|_| T::lit(normal(&mut rng) * scale)));
    }
    Ok(LinearProjectionEncoder {
        shape: in_shape,
        latent_dim,
        matrix,
    })
}

impl<T: Scalar> LinearProjectionEncoder<T> {
    /// Wraps an explicit `latent_dim x C*H*W` matrix.
    pub fn from_matrix(shape: Shape, latent_dim: usize, matrix: Vec<T>) -> Result<Self> {
        if latent_dim == 0 || matrix.len() != latent_dim * shape.len() {
            return Err(Error::shape(latent_dim * shape.len(), matrix.len()));
        }
        Ok(Self {
            shape,
            latent_dim,
            matrix,
        })
    }

    /// The identity map on flattened images.
    pub fn identity(shape: Shape) -> Self {
        let n = shape.len();
        let mut matrix = vec![T::zero(); n * n];
        for i in 0..n {
            matrix[i * n + i] = T::one();
        }
        Self {
            shape,
            latent_dim: n,
            matrix,
        }
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }
}

impl<T: Scalar> FrozenEncoder<T> for LinearProjectionEncoder<T> {
    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode(&self, image: &ImageTensor<T>) -> Result<LatentVector<T>> {
        image.ensure_shape(self.shape)?;
        let x = image.data();
        let z = self
            .matrix
            .chunks_exact(x.len())
            .map(|row| row.iter().zip(x).map(|(&p, &v)| p * v).sum())
            .collect();
        Ok(LatentVector::from_raw(z))
    }

    fn pullback(&self, image: &ImageTensor<T>, cotangent: &[T]) -> Result<ImageTensor<T>> {
        image.ensure_shape(self.shape)?;
        if cotangent.len() != self.latent_dim {
            return Err(Error::shape(self.latent_dim, cotangent.len()));
        }
        let n = self.shape.len();
        let mut out = vec![T::zero(); n];
        for (row, &g) in self.matrix.chunks_exact(n).zip(cotangent) {
            for (o, &p) in out.iter_mut().zip(row) {
                *o = *o + g * p;
            }
        }
        Ok(ImageTensor::from_raw(self.shape, out))
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Per-block orthonormal DCT-II keeping the lowest `keep` zigzag coefficients.
///
/// Latent layout: channel-major, then blocks in row-major order, then the
/// retained coefficients in zigzag order.
#[derive(Debug, Clone)]
pub struct BlockDctEncoder<T> {
    shape: Shape,
    block: usize,
    keep: usize,
    basis: Vec<T>,
    order: Vec<(usize, usize)>,
}

/// JPEG-style zigzag traversal of a `block x block` coefficient grid.
pub fn zigzag_order(block: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(block * block);
    for s in 0..(2 * block - 1) {
        let lo = s.saturating_sub(block - 1);
        let hi = s.min(block - 1);
        if s % 2 == 0 {
            for row in (lo..=hi).rev() {
                order.push((row, s - row));
            }
        } else {
            for row in lo..=hi {
                order.push((row, s - row));
            }
        }
    }
    order
}

pub fn make_block_dct_encoder<T: Scalar>(
    in_shape: Shape,
    block: usize,
    keep: usize,
) -> Result<BlockDctEncoder<T>> {
    if block == 0 || !in_shape.height.is_multiple_of(block) || !in_shape.width.is_multiple_of(block) {
        return Err(Error::validation(format!(
            "block {block} must divide image size {}x{}",
            in_shape.height, in_shape.width
        )));
    }
    if keep == 0 || keep > block * block {
        return Err(Error::validation(format!(
            "keep must be in 1..={}, got {keep}",
            block * block
        )));
    }
    let b = block as f64;
    let mut basis = Vec::with_capacity(block * block);
    for k in 0..block {
        let s = if k == 0 { (1.0 / b).sqrt() } else { (2.0 / b).sqrt() };
        for n in 0..block {
            let angle = std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * b);
            basis.push(T::lit(s * angle.cos()));
        }
    }
    let mut order = zigzag_order(block);
    order.truncate(keep);
    Ok(BlockDctEncoder {
        shape: in_shape,
        block,
        keep,
        basis,
        order,
    })
}

impl<T: Scalar> BlockDctEncoder<T> {
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    fn blocks_per_channel(&self) -> (usize, usize) {
        (self.shape.height / self.block, self.shape.width / self.block)
    }

    #[inline]
    fn basis(&self, k: usize, n: usize) -> T {
        self.basis[k * self.block + n]
    }
}

impl<T: Scalar> FrozenEncoder<T> for BlockDctEncoder<T> {
    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn latent_dim(&self) -> usize {
        let (by, bx) = self.blocks_per_channel();
        self.shape.channels * by * bx * self.keep
    }

    fn encode(&self, image: &ImageTensor<T>) -> Result<LatentVector<T>> {
        image.ensure_shape(self.shape)?;
        let b = self.block;
        let (nby, nbx) = self.blocks_per_channel();
        let mut rows = vec![T::zero(); b * b];
        let mut z = Vec::with_capacity(self.latent_dim());
        for c in 0..self.shape.channels {
            for by in 0..nby {
                for bx in 0..nbx {
                    // rows[k][x] = sum_y C[k][y] * block[y][x]
                    for k in 0..b {
                        for x in 0..b {
                            rows[k * b + x] = (0..b)
                                .map(|y| self.basis(k, y) * image.get(c, by * b + y, bx * b + x))
                                .sum();
                        }
                    }
                    for &(ky, kx) in &self.order {
                        z.push((0..b).map(|x| rows[ky * b + x] * self.basis(kx, x)).sum());
                    }
                }
            }
        }
        Ok(LatentVector::from_raw(z))
    }

    fn pullback(&self, image: &ImageTensor<T>, cotangent: &[T]) -> Result<ImageTensor<T>> {
        image.ensure_shape(self.shape)?;
        if cotangent.len() != self.latent_dim() {
            return Err(Error::shape(self.latent_dim(), cotangent.len()));
        }
        let b = self.block;
        let (nby, nbx) = self.blocks_per_channel();
        let mut out = vec![T::zero(); self.shape.len()];
        let mut coef = vec![T::zero(); b * b];
        let mut tmp = vec![T::zero(); b * b];
        let mut g = cotangent.chunks_exact(self.keep);
        for c in 0..self.shape.channels {
            for by in 0..nby {
                for bx in 0..nbx {
                    coef.iter_mut().for_each(|v| *v = T::zero());
                    for (&(ky, kx), &v) in self.order.iter().zip(g.next().expect("sized above")) {
                        coef[ky * b + kx] = v;
                    }
                    // block = C^T coef C
                    for ky in 0..b {
                        for x in 0..b {
                            tmp[ky * b + x] = (0..b)
                                .map(|kx| coef[ky * b + kx] * self.basis(kx, x))
                                .sum();
                        }
                    }
                    for y in 0..b {
                        for x in 0..b {
                            let v: T = (0..b).map(|ky| self.basis(ky, y) * tmp[ky * b + x]).sum();
                            let idx = (c * self.shape.height + by * b + y) * self.shape.width
                                + bx * b
                                + x;
                            out[idx] = v;
                        }
                    }
                }
            }
        }
        Ok(ImageTensor::from_raw(self.shape, out))
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Encoder section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum EncoderConfig {
    #[serde(rename = "linear")]
    Linear { seed: u64, latent_dim: usize },
    #[serde(rename = "blockdct")]
    BlockDct {
        #[serde(default = "default_block")]
        block: usize,
        keep: usize,
    },
}

fn default_block() -> usize {
    8
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Linear {
            seed: 7,
            latent_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn build<T: Scalar>(&self, in_shape: Shape) -> Result<Box<dyn FrozenEncoder<T>>> {
        Ok(match *self {
            EncoderConfig::Linear { seed, latent_dim } => Box::new(
                make_linear_projection_encoder::<T>(seed, in_shape, latent_dim)?,
            ),
            EncoderConfig::BlockDct { block, keep } => {
                Box::new(make_block_dct_encoder::<T>(in_shape, block, keep)?)
            }
        })
    }
}
