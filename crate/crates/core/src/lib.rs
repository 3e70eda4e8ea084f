//! Adaptive radial frequency-band gating of images, with a desk-scale
//! fMRI-to-latent decoding loop and forward-diffusion utilities.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for typical use.

pub mod config;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod gate;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod train;

pub use config::ExperimentConfig;
pub use diffusion::{
    forward_noise, make_schedule, noise_prediction_loss, reverse_denoise, DiffusionSchedule,
    NoisePredictor, OraclePredictor, ZeroPredictor,
};
pub use encoder::{
    encode, make_block_dct_encoder, make_linear_projection_encoder, BlockDctEncoder,
    EncoderConfig, FrozenEncoder, LinearProjectionEncoder,
};
pub use error::{Error, ErrorKind, Result};
pub use gate::{fuse, fuse_gradient, pass_through_rates, GateGradient, GateParameters};
pub use linalg::Matrix;
pub use metrics::{evaluate_pairs, pixcorr, ssim, ssim_with, MetricReport, SsimOptions};
pub use regression::{ridge_fit, ridge_fit_with, ridge_predict, RidgeModel, RidgeOptions};
pub use scalar::Scalar;
pub use spectral::{
    band_decompose, dft2_shifted, idft2_shifted, make_band_masks, BandDecomposition, BandMaskSet,
    MaskMode,
};
pub use synth::{gen_images, gen_voxels, generate, ColorMode, SynthConfig, SynthDataset};
pub use train::{
    infer_stage1, stage1_loss, train_stage1, Stage1Config, Stage1Objective, Stage1Output,
    TrajectoryLog,
};
pub use tensor::{ImageTensor, LatentVector, Shape, SpectrumTensor};

pub type Image = ImageTensor<f64>;
pub type ImageF32 = ImageTensor<f32>;
pub type Spectrum = SpectrumTensor<f64>;
pub type SpectrumF32 = SpectrumTensor<f32>;
pub type Latent = LatentVector<f64>;
pub type LatentF32 = LatentVector<f32>;
pub type Decomposition = BandDecomposition<f64>;
pub type DecompositionF32 = BandDecomposition<f32>;
pub type Gate = GateParameters<f64>;
pub type GateF32 = GateParameters<f32>;
pub type Ridge = RidgeModel<f64>;
pub type RidgeF32 = RidgeModel<f32>;
pub type Mat = Matrix<f64>;
pub type MatF32 = Matrix<f32>;
