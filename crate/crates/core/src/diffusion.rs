//! Forward noising, noise-prediction loss and a deterministic reverse loop.
//!
//! `beta_bar[t]` is the signal retention after `t` steps: the clean latent is
//! scaled by `sqrt(beta_bar[t])`. This is the role usually written as
//! alpha-bar; the symbols are kept as the retention products.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::LatentVector;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_RETENTION_START: f64 = 0.9999;
pub const DEFAULT_RETENTION_END: f64 = 0.98;
/// Refinement entry point: 37 of 50 steps.
pub const DEFAULT_T_INIT: usize = 37;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule<T> {
    betas: Vec<T>,
    beta_bar: Vec<T>,
}

/// Per-step retention factors linearly spaced from `retention_start` to
/// `retention_end`, with their running products.
pub fn make_schedule<T: Scalar>(
    steps: usize,
    retention_start: f64,
    retention_end: f64,
) -> Result<DiffusionSchedule<T>> {
    if steps == 0 {
        return Err(Error::validation("schedule needs at least one step"));
    }
    if !(retention_end > 0.0 && retention_end <= retention_start && retention_start <= 1.0) {
        return Err(Error::validation(format!(
            "need 0 < retention_end <= retention_start <= 1, got {retention_start}..{retention_end}"
        )));
    }
    let betas: Vec<T> = (0..steps)
        .map(|i| {
            let f = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            T::lit(retention_start + (retention_end - retention_start) * f)
        })
        .collect();
    DiffusionSchedule::from_betas(betas)
}

impl<T: Scalar> DiffusionSchedule<T> {
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::validation("schedule needs at least one step"));
        }
        if betas.iter().any(|&b| !(b > T::zero() && b <= T::one())) {
            return Err(Error::validation("retention factors must lie in (0, 1]"));
        }
        let mut beta_bar = Vec::with_capacity(betas.len());
        let mut acc = T::one();
        for &b in &betas {
            acc = acc * b;
            beta_bar.push(acc);
        }
        Ok(Self { betas, beta_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn beta_bars(&self) -> &[T] {
        &self.beta_bar
    }

    /// Retention after `t` steps; `t = 0` gives 1.
    pub fn beta_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.beta_bar[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::validation(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Writes `t,beta,beta_bar` rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "t,beta,beta_bar")?;
        for (i, (b, bb)) in self.betas.iter().zip(&self.beta_bar).enumerate() {
            writeln!(out, "{},{},{}", i + 1, b.as_f64(), bb.as_f64())?;
        }
        Ok(())
    }
}

/// `z_t = sqrt(beta_bar_t) z0 + sqrt(1 - beta_bar_t) noise`.
pub fn forward_noise<T: Scalar>(
    z0: &[T],
    t: usize,
    schedule: &DiffusionSchedule<T>,
    noise: &[T],
) -> Result<LatentVector<T>> {
    schedule.check_step(t)?;
    if z0.len() != noise.len() {
        return Err(Error::shape(z0.len(), noise.len()));
    }
    Ok(LatentVector::from_raw(mix(z0, noise, schedule.beta_bar(t))))
}

fn mix<T: Scalar>(signal: &[T], noise: &[T], retention: T) -> Vec<T> {
    let a = retention.sqrt();
    let b = (T::one() - retention).max(T::zero()).sqrt();
    signal.iter().zip(noise).map(|(&s, &n)| a * s + b * n).collect()
}

/// Noise estimate `eps(z_t, t, c)`.
pub trait NoisePredictor<T: Scalar> {
    fn predict(&self, z_t: &[T], t: usize, conditioning: &[T]) -> Vec<T>;
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl<T: Scalar> NoisePredictor<T> for ZeroPredictor {
    fn predict(&self, z_t: &[T], _t: usize, _c: &[T]) -> Vec<T> {
        vec![T::zero(); z_t.len()]
    }
}

/// Returns the noise that was actually injected, whatever it is asked.
#[derive(Debug, Clone)]
pub struct OraclePredictor<T> {
    pub noise: Vec<T>,
}

impl<T: Scalar> NoisePredictor<T> for OraclePredictor<T> {
    fn predict(&self, _z_t: &[T], _t: usize, _c: &[T]) -> Vec<T> {
        self.noise.clone()
    }
}

/// `||noise - eps(z_t, t, c)||^2` with `z_t` from [`forward_noise`].
pub fn noise_prediction_loss<T: Scalar>(
    predictor: &dyn NoisePredictor<T>,
    z0: &[T],
    t: usize,
    conditioning: &[T],
    schedule: &DiffusionSchedule<T>,
    noise: &[T],
) -> Result<T> {
    let z_t = forward_noise(z0, t, schedule, noise)?;
    let eps = predictor.predict(&z_t, t, conditioning);
    if eps.len() != noise.len() {
        return Err(Error::shape(
            format!("predicted noise of length {}", noise.len()),
            eps.len(),
        ));
    }
    Ok(noise.iter().zip(&eps).map(|(&n, &e)| (n - e) * (n - e)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseOutcome<T> {
    pub z0: LatentVector<T>,
    pub steps: usize,
}

/// Deterministic reverse updates from `t_init` down to 0.
///
/// Each step estimates `z0 = (z_t - sqrt(1 - bb_t) eps) / sqrt(bb_t)` and
/// re-noises it to `t - 1` with the same `eps`.
pub fn reverse_denoise<T: Scalar>(
    z_init: &[T],
    t_init: usize,
    predictor: &dyn NoisePredictor<T>,
    conditioning: &[T],
    schedule: &DiffusionSchedule<T>,
) -> Result<ReverseOutcome<T>> {
    schedule.check_step(t_init)?;
    let mut z = z_init.to_vec();
    let mut steps = 0;
    for t in (1..=t_init).rev() {
        let eps = predictor.predict(&z, t, conditioning);
        if eps.len() != z.len() {
            return Err(Error::shape(z.len(), eps.len()));
        }
        let bb = schedule.beta_bar(t);
        let keep = bb.sqrt();
        let lost = (T::one() - bb).max(T::zero()).sqrt();
        let z0_hat: Vec<T> = z
            .iter()
            .zip(&eps)
            .map(|(&zt, &e)| (zt - lost * e) / keep)
            .collect();
        z = mix(&z0_hat, &eps, schedule.beta_bar(t - 1));
        steps += 1;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::ReverseStep { step: t });
        }
    }
    Ok(ReverseOutcome {
        z0: LatentVector::from_raw(z),
        steps,
    })
}
