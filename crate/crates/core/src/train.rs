//! Stage-1 training: learn gate weights while ridge maps voxels to the
//! latents of the gated image.
//!
//! Each epoch encodes the fused training images, refits the ridge decoder on
//! them, then takes one optimizer step on the gate against the frozen ridge
//! predictions.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::gate::{fuse, fuse_gradient, pass_through_rates, GateParameters, DEFAULT_EPSILON};
use crate::linalg::Matrix;
use crate::regression::{
    default_lambda_grid, select_lambda, RidgeModel, RidgeOptions, RidgeSystem, DEFAULT_LAMBDA,
};
use crate::rng::{derive_rng, STREAM_SHUFFLE};
use crate::scalar::{sigmoid, Scalar};
use crate::spectral::{make_band_masks, BandDecomposer, BandDecomposition, BandMaskSet, MaskMode};
use crate::tensor::ImageTensor;

/// A loss this many times the first epoch's aborts training.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Floor on the divergence baseline, relative to the mean squared latent norm.
pub const DIVERGENCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// How the gate gradient is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientPath {
    /// `cached` for linear encoders, `image` otherwise.
    #[default]
    Auto,
    /// Encode every band once and mix latents; linear encoders only.
    Cached,
    /// Fuse, encode and pull back through the encoder each step.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub n_bands: usize,
    pub nu_max: f64,
    pub mask_mode: MaskMode,
    pub epsilon: f64,
    pub w_init: f64,
    /// Per-band starting weights; overrides `w_init` when present.
    pub w_start: Option<Vec<f64>>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// `None` trains on the full training split each step.
    pub batch_size: Option<usize>,
    pub ridge_lambda: f64,
    /// Pick lambda by 5-fold cross-validation at the initial gate.
    pub ridge_cv: bool,
    pub ridge_refresh_every: usize,
    pub gradient_path: GradientPath,
    pub rng_seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            n_bands: 16,
            nu_max: 32.0,
            mask_mode: MaskMode::PartitionComplete,
            epsilon: DEFAULT_EPSILON,
            w_init: 1.0,
            w_start: None,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adam,
            epochs: 300,
            batch_size: None,
            ridge_lambda: DEFAULT_LAMBDA,
            ridge_cv: false,
            ridge_refresh_every: 1,
            gradient_path: GradientPath::Auto,
            rng_seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation(format!("stage1.{m}")));
        if self.n_bands == 0 {
            return fail("n_bands must be at least 1");
        }
        if !(self.nu_max > 0.0) || !self.nu_max.is_finite() {
            return fail("nu_max must be positive");
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return fail("epsilon must be positive");
        }
        if !self.w_init.is_finite() {
            return fail("w_init must be finite");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be finite and >= 0");
        }
        if let Some(w) = &self.w_start {
            if w.len() != self.n_bands || w.iter().any(|v| !v.is_finite()) {
                return fail("w_start must hold one finite weight per band");
            }
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == Some(0) {
            return fail("batch_size must be at least 1");
        }
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return fail("ridge_lambda must be finite and >= 0");
        }
        if self.ridge_refresh_every == 0 {
            return fail("ridge_refresh_every must be at least 1");
        }
        Ok(())
    }
}

/// Mean squared latent error `1/B sum ||z_true - z_pred||^2`.
pub fn stage1_loss<T: Scalar>(z_true: &Matrix<T>, z_pred: &Matrix<T>) -> Result<T> {
    if z_true.rows() == 0 {
        return Err(Error::validation("stage-1 loss over an empty batch"));
    }
    if z_true.rows() != z_pred.rows() || z_true.cols() != z_pred.cols() {
        return Err(Error::shape(
            format!("{}x{}", z_true.rows(), z_true.cols()),
            format!("{}x{}", z_pred.rows(), z_pred.cols()),
        ));
    }
    let sse: T = z_true
        .data()
        .iter()
        .zip(z_pred.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sse / T::from_count(z_true.rows()))
}

enum Source<T> {
    /// Per sample, the `n_bands x D` latents of each band image.
    Cached(Vec<Matrix<T>>),
    Image(Vec<BandDecomposition<T>>),
}

/// Stage-1 loss and gate gradient over a fixed set of images.
pub struct Stage1Objective<'e, T: Scalar> {
    source: Source<T>,
    encoder: &'e dyn FrozenEncoder<T>,
    n_bands: usize,
}

impl<'e, T: Scalar> Stage1Objective<'e, T> {
    pub fn new(
        images: &[ImageTensor<T>],
        masks: &BandMaskSet,
        encoder: &'e dyn FrozenEncoder<T>,
        path: GradientPath,
    ) -> Result<Self> {
        let cached = match path {
            GradientPath::Auto => encoder.is_linear(),
            GradientPath::Cached if !encoder.is_linear() => {
                return Err(Error::validation(
                    "cached gradients need a linear encoder",
                ))
            }
            GradientPath::Cached => true,
            GradientPath::Image => false,
        };
        let decomposer = BandDecomposer::<T>::new(masks.clone())?;
        let in_shape = encoder.input_shape();
        let source = if cached {
            let latents: Result<Vec<Matrix<T>>> = images
                .par_iter()
                .map(|img| {
                    img.ensure_shape(in_shape)?;
                    let d = decomposer.decompose(img)?;
                    let rows = d
                        .bands()
                        .iter()
                        .map(|b| encoder.encode(b).map(|z| z.into_vec()))
                        .collect::<Result<Vec<_>>>()?;
                    Matrix::from_rows(&rows)
                })
                .collect();
            Source::Cached(latents?)
        } else {
            let decomps: Result<Vec<_>> = images
                .par_iter()
                .map(|img| {
                    img.ensure_shape(in_shape)?;
                    decomposer.decompose(img)
                })
                .collect();
            Source::Image(decomps?)
        };
        Ok(Self {
            source,
            encoder,
            n_bands: masks.n_bands(),
        })
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Cached(u) => u.len(),
            Source::Image(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    fn check(&self, params: &GateParameters<T>) -> Result<()> {
        if params.n_bands() != self.n_bands {
            return Err(Error::validation(format!(
                "gate has {} bands, objective has {}",
                params.n_bands(),
                self.n_bands
            )));
        }
        Ok(())
    }

    fn latent_of(&self, b: usize, alpha: &[T], params: &GateParameters<T>) -> Result<Vec<T>> {
        match &self.source {
            Source::Cached(u) => {
                let denom = alpha.iter().copied().sum::<T>() + params.epsilon();
                let mut z = vec![T::zero(); u[b].cols()];
                for (row, &a) in u[b].iter_rows().zip(alpha) {
                    for (zi, &v) in z.iter_mut().zip(row) {
                        *zi = *zi + a * v;
                    }
                }
                Ok(z.into_iter().map(|v| v / denom).collect())
            }
            Source::Image(d) => Ok(self.encoder.encode(&fuse(&d[b], params)?)?.into_vec()),
        }
    }

    /// Latents of the gated images, one row per sample.
    pub fn latents(&self, params: &GateParameters<T>) -> Result<Matrix<T>> {
        self.check(params)?;
        let alpha = pass_through_rates(params);
        let rows: Result<Vec<Vec<T>>> = (0..self.len())
            .into_par_iter()
            .map(|b| self.latent_of(b, &alpha, params))
            .collect();
        Matrix::from_rows(&rows?)
    }

    fn check_batch(&self, z_pred: &Matrix<T>, idx: &[usize]) -> Result<()> {
        if idx.is_empty() {
            return Err(Error::validation("stage-1 loss over an empty batch"));
        }
        if z_pred.rows() != self.len() || z_pred.cols() != self.latent_dim() {
            return Err(Error::shape(
                format!("{}x{} predictions", self.len(), self.latent_dim()),
                format!("{}x{}", z_pred.rows(), z_pred.cols()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&b| b >= self.len()) {
            return Err(Error::validation(format!("sample index {bad} out of range")));
        }
        Ok(())
    }

    /// Loss over the samples in `idx`; `z_pred` holds a row per sample.
    pub fn loss(&self, params: &GateParameters<T>, z_pred: &Matrix<T>, idx: &[usize]) -> Result<T> {
        self.check(params)?;
        self.check_batch(z_pred, idx)?;
        let alpha = pass_through_rates(params);
        let per: Result<Vec<T>> = idx
            .par_iter()
            .map(|&b| {
                let z = self.latent_of(b, &alpha, params)?;
                Ok(z.iter()
                    .zip(z_pred.row(b))
                    .map(|(&a, &p)| (a - p) * (a - p))
                    .sum())
            })
            .collect();
        Ok(per?.into_iter().sum::<T>() / T::from_count(idx.len()))
    }

    /// Loss and its gradient with respect to the raw gate weights.
    pub fn loss_and_gradient(
        &self,
        params: &GateParameters<T>,
        z_pred: &Matrix<T>,
        idx: &[usize],
    ) -> Result<(T, Vec<T>)> {
        self.check(params)?;
        self.check_batch(z_pred, idx)?;
        let alpha = pass_through_rates(params);
        let scale = T::lit(2.0) / T::from_count(idx.len());
        let per: Result<Vec<(T, Vec<T>)>> = idx
            .par_iter()
            .map(|&b| self.sample_gradient(b, &alpha, params, z_pred.row(b), scale))
            .collect();
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); self.n_bands];
        for (l, g) in per? {
            loss = loss + l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc = *acc + v;
            }
        }
        Ok((loss / T::from_count(idx.len()), grad))
    }

    fn sample_gradient(
        &self,
        b: usize,
        alpha: &[T],
        params: &GateParameters<T>,
        pred: &[T],
        scale: T,
    ) -> Result<(T, Vec<T>)> {
        match &self.source {
            Source::Cached(u) => {
                let z = self.latent_of(b, alpha, params)?;
                let resid: Vec<T> = z.iter().zip(pred).map(|(&a, &p)| a - p).collect();
                let loss = resid.iter().map(|&r| r * r).sum();
                let denom = alpha.iter().copied().sum::<T>() + params.epsilon();
                let grad = u[b]
                    .iter_rows()
                    .zip(alpha)
                    .map(|(row, &a)| {
                        let dot: T = row
                            .iter()
                            .zip(&z)
                            .zip(&resid)
                            .map(|((&uk, &zk), &r)| r * (uk - zk))
                            .sum();
                        scale * dot / denom * a * (T::one() - a)
                    })
                    .collect();
                Ok((loss, grad))
            }
            Source::Image(d) => {
                let fused = fuse(&d[b], params)?;
                let z = self.encoder.encode(&fused)?;
                let cot: Vec<T> = z.iter().zip(pred).map(|(&a, &p)| scale * (a - p)).collect();
                let loss = z.iter().zip(pred).map(|(&a, &p)| (a - p) * (a - p)).sum();
                let up = self.encoder.pullback(&fused, &cot)?;
                Ok((loss, fuse_gradient(&d[b], params, &up)?.d_loss_d_w))
            }
        }
    }
}

enum Optimizer<T> {
    Sgd { lr: T },
    Adam { lr: T, m: Vec<T>, v: Vec<T>, t: i32 },
}

impl<T: Scalar> Optimizer<T> {
    fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        let lr = T::lit(lr);
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => Self::Adam {
                lr,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                t: 0,
            },
        }
    }

    fn step(&mut self, w: &mut [T], grad: &[T]) {
        match self {
            Self::Sgd { lr } => {
                for (wi, &g) in w.iter_mut().zip(grad) {
                    *wi = *wi - *lr * g;
                }
            }
            Self::Adam { lr, m, v, t } => {
                let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
                *t += 1;
                let c1 = T::one() - b1.powi(*t);
                let c2 = T::one() - b2.powi(*t);
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + (T::one() - b1) * grad[i];
                    v[i] = b2 * v[i] + (T::one() - b2) * grad[i] * grad[i];
                    let step = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    w[i] = w[i] - *lr * step;
                }
            }
        }
    }
}

/// State at the start of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_heldout: Option<f64>,
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.records.first().map_or(0, |r| r.w.len());
        write!(out, "epoch,loss_train,loss_heldout")?;
        for i in 0..n {
            write!(out, ",w_{i}")?;
        }
        for i in 0..n {
            write!(out, ",alpha_{i}")?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(out, "{},{:e},", r.epoch, r.loss_train)?;
            if let Some(h) = r.loss_heldout {
                write!(out, "{h:e}")?;
            }
            for v in r.w.iter().chain(&r.alpha) {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Output<T> {
    pub gate: GateParameters<T>,
    /// Refit on the final gate.
    pub ridge: RidgeModel<T>,
    pub masks: BandMaskSet,
    pub log: TrajectoryLog,
    pub n_train: usize,
    pub n_heldout: usize,
}

/// Last `floor(n/5)` samples are held out.
pub fn split_heldout(n: usize) -> (usize, usize) {
    let held = n / 5;
    (n - held, held)
}

fn rows_range<T: Scalar>(m: &Matrix<T>, lo: usize, hi: usize) -> Matrix<T> {
    m.select_rows(&(lo..hi).collect::<Vec<_>>())
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn train_stage1<T: Scalar>(
    images: &[ImageTensor<T>],
    voxels: &Matrix<T>,
    encoder: &dyn FrozenEncoder<T>,
    config: &Stage1Config,
) -> Result<Stage1Output<T>> {
    config.validate()?;
    if images.len() != voxels.rows() {
        return Err(Error::validation(format!(
            "{} images but {} voxel rows",
            images.len(),
            voxels.rows()
        )));
    }
    if images.is_empty() {
        return Err(Error::validation("no training samples"));
    }
    let shape = encoder.input_shape();
    let masks = make_band_masks(
        shape.height,
        shape.width,
        config.n_bands,
        config.nu_max,
        config.mask_mode,
    )?;
    let (n_train, n_heldout) = split_heldout(images.len());
    let n = images.len();
    let train = Stage1Objective::new(&images[..n_train], &masks, encoder, config.gradient_path)?;
    let heldout = (n_heldout > 0)
        .then(|| Stage1Objective::new(&images[n_train..], &masks, encoder, config.gradient_path))
        .transpose()?;
    let x_train = rows_range(voxels, 0, n_train);
    let x_held = rows_range(voxels, n_train, n);

    let mut params = match &config.w_start {
        Some(w) => GateParameters::new(w.iter().map(|&v| T::lit(v)).collect(), T::lit(config.epsilon))?,
        None => GateParameters::uniform(config.n_bands, T::lit(config.w_init), T::lit(config.epsilon))?,
    };
    let mut lambda = config.ridge_lambda;
    if config.ridge_cv {
        let folds = n_train.min(5);
        let search = select_lambda(&x_train, &train.latents(&params)?, &default_lambda_grid(), folds)?;
        lambda = search.best;
    }
    let system = RidgeSystem::new(&x_train, RidgeOptions::with_lambda(lambda))?;
    let mut optimizer = Optimizer::<T>::new(config.optimizer, config.learning_rate, config.n_bands);
    let all: Vec<usize> = (0..n_train).collect();
    let held_idx: Vec<usize> = (0..n_heldout).collect();

    let mut log = TrajectoryLog::default();
    let mut preds: Option<(Matrix<T>, Matrix<T>)> = None;
    let mut first_loss = None;
    let mut latent_scale = 0.0;
    for epoch in 0..config.epochs {
        if epoch % config.ridge_refresh_every == 0 {
            let z_true = train.latents(&params)?;
            if first_loss.is_none() {
                let scale = stage1_loss(&z_true, &Matrix::zeros(z_true.rows(), z_true.cols()))?;
                latent_scale = scale.as_f64();
            }
            let model = system.fit(&z_true)?;
            preds = Some((model.predict_batch(&x_train)?, model.predict_batch(&x_held)?));
        }
        let (p_train, p_held) = preds.as_ref().expect("ridge fitted at epoch 0");
        let loss_heldout = match &heldout {
            Some(h) => Some(h.loss(&params, p_held, &held_idx)?.as_f64()),
            None => None,
        };
        let batch = config.batch_size.unwrap_or(n_train);
        if batch >= n_train {
            let (loss, grad) = train.loss_and_gradient(&params, p_train, &all)?;
            guard(epoch, loss.as_f64(), latent_scale, &mut first_loss)?;
            log.records.push(record(epoch, loss.as_f64(), loss_heldout, &params));
            params = step(&mut optimizer, &params, &grad)?;
            continue;
        }
        let loss = train.loss(&params, p_train, &all)?.as_f64();
        guard(epoch, loss, latent_scale, &mut first_loss)?;
        log.records.push(record(epoch, loss, loss_heldout, &params));
        let mut order = all.clone();
        order.shuffle(&mut derive_rng(config.rng_seed, STREAM_SHUFFLE, epoch as u64));
        for chunk in order.chunks(batch) {
            let (_, grad) = train.loss_and_gradient(&params, p_train, chunk)?;
            params = step(&mut optimizer, &params, &grad)?;
        }
    }
    let final_ridge = system.fit(&train.latents(&params)?)?;
    Ok(Stage1Output {
        gate: params,
        ridge: final_ridge,
        masks,
        log,
        n_train,
        n_heldout,
    })
}

fn step<T: Scalar>(
    optimizer: &mut Optimizer<T>,
    params: &GateParameters<T>,
    grad: &[T],
) -> Result<GateParameters<T>> {
    let mut w = params.weights().to_vec();
    optimizer.step(&mut w, grad);
    params.with_weights(w)
}

fn guard(epoch: usize, loss: f64, latent_scale: f64, first: &mut Option<f64>) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
    }
    let base = first.get_or_insert(loss).max(DIVERGENCE_FLOOR * latent_scale);
    let limit = DIVERGENCE_FACTOR * base;
    if base > 0.0 && loss > limit {
        return Err(Error::Divergence { epoch, loss, limit });
    }
    Ok(())
}

fn record<T: Scalar>(
    epoch: usize,
    loss_train: f64,
    loss_heldout: Option<f64>,
    params: &GateParameters<T>,
) -> TrajectoryRecord {
    TrajectoryRecord {
        epoch,
        loss_train,
        loss_heldout,
        w: to_f64(params.weights()),
        alpha: params.weights().iter().map(|&w| sigmoid(w).as_f64()).collect(),
    }
}

/// Ridge predictions for a batch of voxel rows.
pub fn infer_stage1<T: Scalar>(ridge: &RidgeModel<T>, voxels: &Matrix<T>) -> Result<Matrix<T>> {
    ridge.predict_batch(voxels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{make_block_dct_encoder, make_linear_projection_encoder};
    use crate::synth::{generate, low_quarter_profile, SynthConfig};
    use crate::tensor::Shape;

    fn data(n: usize) -> (Vec<ImageTensor<f64>>, Matrix<f64>) {
        let d = generate::<f64>(&SynthConfig {
            n_samples: n,
            height: 16,
            width: 16,
            gt_profile: low_quarter_profile(4),
            nu_max: 8.0,
            voxel_dim: 24,
            ..SynthConfig::default()
        })
        .unwrap();
        (d.images, d.voxels)
    }

    fn cfg(epochs: usize) -> Stage1Config {
        Stage1Config {
            n_bands: 4,
            nu_max: 8.0,
            epochs,
            ..Stage1Config::default()
        }
    }

    #[test]
    fn loss_example() {
        let t = Matrix::<f64>::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = Matrix::<f64>::zeros(1, 2);
        assert_eq!(stage1_loss(&t, &p).unwrap(), 5.0);
        let empty = Matrix::<f64>::zeros(0, 2);
        assert!(stage1_loss(&empty, &empty).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let (images, voxels) = data(10);
        let enc = make_linear_projection_encoder::<f64>(1, Shape::new(3, 16, 16), 8).unwrap();
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let c = Stage1Config {
                learning_rate: 0.0,
                optimizer,
                w_init: 0.3,
                ..cfg(5)
            };
            let out = train_stage1(&images, &voxels, &enc, &c).unwrap();
            assert!(out.gate.weights().iter().all(|w| w.to_bits() == 0.3f64.to_bits()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (images, voxels) = data(10);
        let enc = make_linear_projection_encoder::<f64>(1, Shape::new(3, 16, 16), 8).unwrap();
        let c = Stage1Config {
            batch_size: Some(3),
            ..cfg(4)
        };
        let a = train_stage1(&images, &voxels, &enc, &c).unwrap();
        let b = train_stage1(&images, &voxels, &enc, &c).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.gate, b.gate);
        assert_eq!((a.n_train, a.n_heldout), (8, 2));
        assert_eq!(a.log.records.len(), 4);
    }

    #[test]
    fn cached_and_image_paths_agree() {
        let (images, _) = data(4);
        let enc = make_linear_projection_encoder::<f64>(2, Shape::new(3, 16, 16), 6).unwrap();
        let masks = make_band_masks(16, 16, 4, 8.0, MaskMode::PartitionComplete).unwrap();
        let a = Stage1Objective::new(&images, &masks, &enc, GradientPath::Cached).unwrap();
        let b = Stage1Objective::new(&images, &masks, &enc, GradientPath::Image).unwrap();
        let params = GateParameters::new(vec![0.4, -1.0, 2.0, 0.1], 1e-10).unwrap();
        let pred = Matrix::from_fn_rows(4, 6, |r, c| (r as f64 - c as f64) * 0.01);
        let idx = [0, 2, 3];
        let (la, ga) = a.loss_and_gradient(&params, &pred, &idx).unwrap();
        let (lb, gb) = b.loss_and_gradient(&params, &pred, &idx).unwrap();
        assert!((la - lb).abs() < 1e-12 * la.max(1.0));
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (images, _) = data(3);
        let enc = make_block_dct_encoder::<f64>(Shape::new(3, 16, 16), 8, 5).unwrap();
        let masks = make_band_masks(16, 16, 4, 8.0, MaskMode::PartitionComplete).unwrap();
        let obj = Stage1Objective::new(&images, &masks, &enc, GradientPath::Image).unwrap();
        let w = vec![0.2, -0.5, 1.0, 0.0];
        let params = GateParameters::new(w.clone(), 1e-10).unwrap();
        let pred = Matrix::from_fn_rows(3, obj.latent_dim(), |r, c| ((r * 7 + c) % 5) as f64 * 0.1);
        let idx = [0, 1, 2];
        let (_, g) = obj.loss_and_gradient(&params, &pred, &idx).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut up = w.clone();
            up[k] += h;
            let mut dn = w.clone();
            dn[k] -= h;
            let lu = obj.loss(&params.with_weights(up).unwrap(), &pred, &idx).unwrap();
            let ld = obj.loss(&params.with_weights(dn).unwrap(), &pred, &idx).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "band {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn interpolating_ridge_recovers_training_latents() {
        let (images, _) = data(10);
        let enc = make_linear_projection_encoder::<f64>(3, Shape::new(3, 16, 16), 5).unwrap();
        let mut rng = derive_rng(11, 0, 0);
        let voxels = Matrix::from_fn_rows(10, 7, |_, _| crate::rng::normal(&mut rng));
        let c = Stage1Config {
            ridge_lambda: 0.0,
            learning_rate: 0.0,
            ..cfg(1)
        };
        let out = train_stage1(&images, &voxels, &enc, &c).unwrap();
        let masks = make_band_masks(16, 16, 4, 8.0, MaskMode::PartitionComplete).unwrap();
        let obj = Stage1Objective::new(&images[..8], &masks, &enc, GradientPath::Auto).unwrap();
        let truth = obj.latents(&out.gate).unwrap();
        let pred = infer_stage1(&out.ridge, &voxels.select_rows(&(0..8).collect::<Vec<_>>())).unwrap();
        assert!(truth.max_abs_diff(&pred) < 1e-6, "{}", truth.max_abs_diff(&pred));
    }

    #[test]
    fn heldout_latents_recovered_from_noiseless_voxels() {
        let (images, _) = data(20);
        let enc = make_linear_projection_encoder::<f64>(3, Shape::new(3, 16, 16), 6).unwrap();
        let rows: Vec<Vec<f64>> = images.iter().map(|i| enc.encode(i).unwrap().into_vec()).collect();
        let voxels = Matrix::from_rows(&rows).unwrap();
        let c = Stage1Config {
            ridge_lambda: 0.0,
            learning_rate: 0.0,
            ..cfg(1)
        };
        let out = train_stage1(&images, &voxels, &enc, &c).unwrap();
        let masks = make_band_masks(16, 16, 4, 8.0, MaskMode::PartitionComplete).unwrap();
        let held = Stage1Objective::new(&images[16..], &masks, &enc, GradientPath::Image).unwrap();
        let truth = held.latents(&out.gate).unwrap();
        let pred = infer_stage1(&out.ridge, &voxels.select_rows(&[16, 17, 18, 19])).unwrap();
        assert!(truth.max_abs_diff(&pred) < 1e-6, "{}", truth.max_abs_diff(&pred));
    }

    #[test]
    fn training_pulls_skewed_gate_toward_all_pass_truth() {
        let (images, _) = data(20);
        let enc = make_linear_projection_encoder::<f64>(3, Shape::new(3, 16, 16), 6).unwrap();
        let rows: Vec<Vec<f64>> = images.iter().map(|i| enc.encode(i).unwrap().into_vec()).collect();
        let voxels = Matrix::from_rows(&rows).unwrap();
        let c = Stage1Config {
            ridge_lambda: 1e-6,
            w_start: Some(vec![2.0, -2.0, 1.0, -3.0]),
            ..cfg(100)
        };
        let out = train_stage1(&images, &voxels, &enc, &c).unwrap();
        let r = &out.log.records;
        let (first, last) = (r[0].loss_heldout.unwrap(), r.last().unwrap().loss_heldout.unwrap());
        assert!(last < first, "{first} -> {last}");
        let spread = |a: &[f64]| a.iter().cloned().fold(f64::MIN, f64::max) - a.iter().cloned().fold(f64::MAX, f64::min);
        let alpha = pass_through_rates(&out.gate);
        assert!(spread(&alpha) < spread(&r[0].alpha), "{alpha:?}");
    }

    #[test]
    fn noise_voxels_predict_the_mean_latent() {
        let (images, _) = data(20);
        let enc = make_linear_projection_encoder::<f64>(3, Shape::new(3, 16, 16), 6).unwrap();
        let mut rng = derive_rng(5, 0, 0);
        let voxels = Matrix::from_fn_rows(20, 10, |_, _| crate::rng::normal(&mut rng));
        let c = Stage1Config {
            ridge_lambda: 1e9,
            ..cfg(1)
        };
        let out = train_stage1(&images, &voxels, &enc, &c).unwrap();
        let masks = make_band_masks(16, 16, 4, 8.0, MaskMode::PartitionComplete).unwrap();
        let obj = Stage1Objective::new(&images[..16], &masks, &enc, GradientPath::Auto).unwrap();
        let mean = obj.latents(&out.gate).unwrap().column_means();
        let pred = infer_stage1(&out.ridge, &voxels.select_rows(&[18])).unwrap();
        for (p, m) in pred.row(0).iter().zip(&mean) {
            assert!((p - m).abs() < 1e-6 * (1.0 + m.abs()), "{p} vs {m}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (images, voxels) = data(5);
        let enc = make_linear_projection_encoder::<f64>(1, Shape::new(3, 16, 16), 4).unwrap();
        assert!(train_stage1(&images[..4], &voxels, &enc, &cfg(1)).is_err());
        let bad = Stage1Config {
            batch_size: Some(0),
            ..cfg(1)
        };
        assert!(train_stage1(&images, &voxels, &enc, &bad).is_err());
    }

    #[test]
    fn csv_header() {
        let log = TrajectoryLog {
            records: vec![TrajectoryRecord {
                epoch: 0,
                loss_train: 1.5,
                loss_heldout: None,
                w: vec![1.0, 2.0],
                alpha: vec![0.5, 0.25],
            }],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,loss_train,loss_heldout,w_0,w_1,alpha_0,alpha_1");
        assert_eq!(lines.next().unwrap(), "0,1.5e0,,1e0,2e0,5e-1,2.5e-1");
    }
}
