//! Synthetic stand-in for a natural-scenes fMRI dataset.
//!
//! Images have a random-phase `1/r^p` amplitude spectrum. Voxel responses are
//! a fixed Gaussian projection of the image after per-band gains
//! (`gt_profile`), plus white noise, so ridge regression is the optimal
//! linear decoder and only the gate has something to discover.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_rng, normal, STREAM_IMAGE, STREAM_VOXEL_NOISE, STREAM_VOXEL_PROJECTION};
use crate::scalar::Scalar;
use crate::spectral::{make_band_masks, radial_distance, BandDecomposer, BandMaskSet, Dft2Plan, MaskMode};
use crate::tensor::{ImageTensor, Shape};

/// How random phases are shared between color channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// One phase field for all channels (gray images).
    #[default]
    Luminance,
    /// Independent phases per channel.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spectral_exponent: f64,
    pub color: ColorMode,
    /// Per-band signal gain seen by the voxels.
    pub gt_profile: Vec<f64>,
    /// Outer cutoff of the ground-truth bands.
    pub nu_max: f64,
    pub voxel_dim: usize,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

/// Ones on the lowest `ceil(n/4)` bands, zeros elsewhere.
pub fn low_quarter_profile(n_bands: usize) -> Vec<f64> {
    let k = n_bands.div_ceil(4);
    (0..n_bands).map(|i| if i < k { 1.0 } else { 0.0 }).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 640,
            channels: 3,
            height: 64,
            width: 64,
            spectral_exponent: 1.0,
            color: ColorMode::Luminance,
            gt_profile: low_quarter_profile(16),
            nu_max: 32.0,
            voxel_dim: 256,
            noise_sigma: 0.1,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::validation("synth.n_samples must be at least 1"));
        }
        if self.channels == 0 || self.height < 2 || self.width < 2 {
            return Err(Error::validation(format!(
                "synth image shape {} is too small",
                self.shape()
            )));
        }
        if !self.spectral_exponent.is_finite() {
            return Err(Error::validation("synth.spectral_exponent must be finite"));
        }
        if self.gt_profile.is_empty() {
            return Err(Error::validation("synth.gt_profile must name at least one band"));
        }
        if self.gt_profile.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::validation("synth.gt_profile entries must lie in [0, 1]"));
        }
        if !(self.nu_max > 0.0) {
            return Err(Error::validation("synth.nu_max must be positive"));
        }
        if self.voxel_dim == 0 {
            return Err(Error::validation("synth.voxel_dim must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::validation("synth.noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Partition masks matching `gt_profile`.
    pub fn masks(&self) -> Result<BandMaskSet> {
        make_band_masks(
            self.height,
            self.width,
            self.gt_profile.len(),
            self.nu_max,
            MaskMode::PartitionComplete,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset<T> {
    pub images: Vec<ImageTensor<T>>,
    /// One row per image.
    pub voxels: Matrix<T>,
    pub config: SynthConfig,
}

fn random_phase_plane<T: Scalar>(
    plan: &Dft2Plan<T>,
    amplitude: &[T],
    rng: &mut impl Rng,
) -> Vec<T> {
    let two_pi = T::PI() + T::PI();
    let spectrum: Vec<_> = amplitude
        .iter()
        .map(|&a| {
            let phase = T::lit(rng.random::<f64>()) * two_pi;
            num_complex::Complex::from_polar(a, phase)
        })
        .collect();
    plan.inverse_plane(&spectrum).into_iter().map(|z| z.re).collect()
}

fn rescale_unit<T: Scalar>(data: &mut [T]) {
    let lo = data.iter().copied().fold(T::infinity(), T::min);
    let hi = data.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    if span > T::zero() {
        data.iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        data.iter_mut().for_each(|v| *v = T::lit(0.5));
    }
}

/// Random-phase `1/r^exponent` images, min-max rescaled to `[0, 1]`.
pub fn gen_images<T: Scalar>(config: &SynthConfig) -> Result<Vec<ImageTensor<T>>> {
    config.validate()?;
    let shape = config.shape();
    let (h, w) = (shape.height, shape.width);
    let plan = Dft2Plan::<T>::new(h, w)?;
    let mut amplitude = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let r = radial_distance(u, v, h, w);
            amplitude.push(if r > 0.0 {
                T::lit(r.powf(-config.spectral_exponent))
            } else {
                T::zero()
            });
        }
    }
    Ok((0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(config.rng_seed, STREAM_IMAGE, i as u64);
            let mut data = Vec::with_capacity(shape.len());
            match config.color {
                ColorMode::Luminance => {
                    let plane = random_phase_plane(&plan, &amplitude, &mut rng);
                    for _ in 0..shape.channels {
                        data.extend_from_slice(&plane);
                    }
                }
                ColorMode::Independent => {
                    for _ in 0..shape.channels {
                        data.extend(random_phase_plane(&plan, &amplitude, &mut rng));
                    }
                }
            }
            rescale_unit(&mut data);
            ImageTensor::from_raw(shape, data)
        })
        .collect())
}

/// Seeded `voxel_dim x C*H*W` matrix with standard normal entries.
pub fn voxel_projection<T: Scalar>(seed: u64, voxel_dim: usize, input_len: usize) -> Matrix<T> {
    let rows: Vec<Vec<T>> = (0..voxel_dim)
        .into_par_iter()
        .map(|r| {
            let mut rng = derive_rng(seed, STREAM_VOXEL_PROJECTION, r as u64);
            (0..input_len).map(|_| T::lit(normal(&mut rng))).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("rows have equal length")
}

/// `voxel = P vec(sum_i g_i f_i(image)) + noise_sigma * n`.
pub fn gen_voxels<T: Scalar>(
    images: &[ImageTensor<T>],
    masks: &BandMaskSet,
    gt_profile: &[f64],
    projection_seed: u64,
    voxel_dim: usize,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<Matrix<T>> {
    if gt_profile.len() != masks.n_bands() {
        return Err(Error::validation(format!(
            "gt_profile has {} entries, masks have {} bands",
            gt_profile.len(),
            masks.n_bands()
        )));
    }
    if voxel_dim == 0 {
        return Err(Error::validation("voxel_dim must be at least 1"));
    }
    let Some(first) = images.first() else {
        return Err(Error::validation("no images to project"));
    };
    let shape = first.shape();
    let projection = voxel_projection::<T>(projection_seed, voxel_dim, shape.len());
    let decomposer = BandDecomposer::<T>::new(masks.clone())?;
    let gains: Vec<T> = gt_profile.iter().map(|&g| T::lit(g)).collect();
    let sigma = T::lit(noise_sigma);
    let rows: Result<Vec<Vec<T>>> = images
        .par_iter()
        .enumerate()
        .map(|(b, image)| {
            image.ensure_shape(shape)?;
            let decomp = decomposer.decompose(image)?;
            let mut signal = vec![T::zero(); shape.len()];
            for (band, &g) in decomp.bands().iter().zip(&gains) {
                if g == T::zero() {
                    continue;
                }
                for (s, &v) in signal.iter_mut().zip(band.data()) {
                    *s = *s + g * v;
                }
            }
            let mut rng = derive_rng(noise_seed, STREAM_VOXEL_NOISE, b as u64);
            Ok(projection
                .iter_rows()
                .map(|row| {
                    let clean: T = row.iter().zip(&signal).map(|(&p, &s)| p * s).sum();
                    clean + sigma * T::lit(normal(&mut rng))
                })
                .collect())
        })
        .collect();
    Matrix::from_rows(&rows?)
}

/// Images and voxels for `config`, both derived from `config.rng_seed`.
pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<SynthDataset<T>> {
    config.validate()?;
    let images = gen_images::<T>(config)?;
    let voxels = gen_voxels(
        &images,
        &config.masks()?,
        &config.gt_profile,
        config.rng_seed,
        config.voxel_dim,
        config.noise_sigma,
        config.rng_seed,
    )?;
    Ok(SynthDataset {
        images,
        voxels,
        config: config.clone(),
    })
}
