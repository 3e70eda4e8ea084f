//! Low-level reconstruction metrics: pixel correlation and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Pearson correlation over all `C*H*W` samples.
///
/// Returns `None` when either image has zero variance (r is 0/0).
pub fn pixcorr<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<Option<T>> {
    a.ensure_shape(b.shape())?;
    let n = T::from_count(a.data().len());
    let mean_a = a.data().iter().copied().sum::<T>() / n;
    let mean_b = b.data().iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    // Rounding in the mean leaves constant images with a tiny residual variance.
    let flat = |ss: T, d: &[T]| {
        let scale = d.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        ss <= n * (T::lit(16.0) * T::epsilon() * scale).powi(2)
    };
    if flat(saa, a.data()) || flat(sbb, b.data()) {
        return Ok(None);
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Ok(Some(r.max(-T::one()).min(T::one())))
}

/// SSIM hyperparameters; defaults are the usual single-scale settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid<T: Scalar>(plane: &[T], h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| kernel[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions of the channel-mean grayscale images.
pub fn ssim<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<T> {
    ssim_with(a, b, &SsimOptions::default())
}

pub fn ssim_with<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>, opts: &SsimOptions) -> Result<T> {
    a.ensure_shape(b.shape())?;
    let shape = a.shape();
    if opts.window == 0 || shape.height < opts.window || shape.width < opts.window {
        return Err(Error::validation(format!(
            "image {}x{} is smaller than the {}x{} SSIM window",
            shape.height, shape.width, opts.window, opts.window
        )));
    }
    let (h, w) = (shape.height, shape.width);
    let kernel: Vec<T> = gaussian_window(opts.window, opts.sigma)
        .into_iter()
        .map(T::lit)
        .collect();
    let ga = a.to_grayscale();
    let gb = b.to_grayscale();
    let prod = |x: &[T], y: &[T]| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| p * q).collect() };
    let mu_a = filter_valid(&ga, h, w, &kernel);
    let mu_b = filter_valid(&gb, h, w, &kernel);
    let e_aa = filter_valid(&prod(&ga, &ga), h, w, &kernel);
    let e_bb = filter_valid(&prod(&gb, &gb), h, w, &kernel);
    let e_ab = filter_valid(&prod(&ga, &gb), h, w, &kernel);
    let c1 = T::lit((opts.k1 * opts.data_range).powi(2));
    let c2 = T::lit((opts.k2 * opts.data_range).powi(2));
    let two = T::lit(2.0);
    let mut total = T::zero();
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (two * ma * mb + c1) * (two * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total = total + num / den;
    }
    Ok(total / T::from_count(mu_a.len()))
}

/// Per-image metrics plus dataset means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub ids: Vec<String>,
    pub pixcorr: Vec<Option<f64>>,
    pub ssim: Vec<f64>,
    /// Mean over images with a defined correlation.
    pub pixcorr_mean: Option<f64>,
    pub ssim_mean: f64,
}

/// Scores `(id, reconstruction, reference)` triples.
pub fn evaluate_pairs<T: Scalar>(
    pairs: &[(String, ImageTensor<T>, ImageTensor<T>)],
    opts: &SsimOptions,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::validation("no image pairs to evaluate"));
    }
    let mut ids = Vec::with_capacity(pairs.len());
    let mut pc = Vec::with_capacity(pairs.len());
    let mut ss = Vec::with_capacity(pairs.len());
    for (id, rec, reference) in pairs {
        ids.push(id.clone());
        pc.push(pixcorr(rec, reference)?.map(Scalar::as_f64));
        ss.push(ssim_with(rec, reference, opts)?.as_f64());
    }
    let defined: Vec<f64> = pc.iter().flatten().copied().collect();
    let pixcorr_mean =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let ssim_mean = ss.iter().sum::<f64>() / ss.len() as f64;
    Ok(MetricReport {
        ids,
        pixcorr: pc,
        ssim: ss,
        pixcorr_mean,
        ssim_mean,
    })
}
