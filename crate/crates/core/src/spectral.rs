//! Centered 2D DFT, radial ring masks and band-pass decomposition.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries
//! the `1/(H*W)` factor, and after shifting the zero frequency sits at the
//! integer index `(H/2, W/2)` (floor for odd sizes). Masks are shared by all
//! channels; every channel is transformed on its own.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ImageTensor, Shape, SpectrumTensor};

/// How the DC bin and the corners beyond the last cutoff are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MaskMode {
    /// Every grid point belongs to exactly one band: `r = 0` joins band 1 and
    /// `r > nu_N` joins band N.
    #[default]
    #[serde(rename = "partition")]
    PartitionComplete,
    /// Literal `nu_{i-1} < r <= nu_i`; DC and corners belong to no band.
    #[serde(rename = "strict")]
    PaperStrict,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::PartitionComplete => "partition",
            MaskMode::PaperStrict => "strict",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partition" => Ok(MaskMode::PartitionComplete),
            "strict" => Ok(MaskMode::PaperStrict),
            other => Err(Error::validation(format!(
                "unknown mask mode {other:?} (expected partition|strict)"
            ))),
        }
    }
}

/// Row/column FFT plans for one `H x W` grid.
pub struct Dft2Plan<T: Scalar> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Dft2Plan<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::validation(format!(
                "DFT grid must be at least 2x2, got {height}x{width}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn transform(&self, plane: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for line in plane.chunks_exact_mut(w) {
            row.process(line);
        }
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }

    /// Unnormalized forward DFT of one real plane, center-shifted.
    pub fn forward_plane(&self, plane: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = plane.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, false);
        shift(&buf, self.height, self.width, false)
    }

    /// Inverse of [`forward_plane`](Self::forward_plane): unshift, inverse DFT,
    /// scale by `1/(H*W)`. Returns the full complex result.
    pub fn inverse_plane(&self, shifted: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = shift(shifted, self.height, self.width, true);
        self.transform(&mut buf, true);
        let scale = T::one() / T::from_count(self.height * self.width);
        for z in &mut buf {
            *z = *z * scale;
        }
        buf
    }

    pub fn forward(&self, image: &ImageTensor<T>) -> Result<SpectrumTensor<T>> {
        let shape = image.shape();
        self.check_grid(shape)?;
        if image.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dft2_shifted input".into()));
        }
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            data.extend(self.forward_plane(image.channel(c)));
        }
        Ok(SpectrumTensor::from_raw(shape, data))
    }

    pub fn inverse(&self, spectrum: &SpectrumTensor<T>) -> Result<InverseDft<T>> {
        let shape = spectrum.shape();
        self.check_grid(shape)?;
        let n = shape.plane_len();
        let mut data = Vec::with_capacity(shape.len());
        let mut max_imag = T::zero();
        for c in 0..shape.channels {
            let out = self.inverse_plane(&spectrum.data()[c * n..(c + 1) * n]);
            for z in out {
                max_imag = max_imag.max(z.im.abs());
                data.push(z.re);
            }
        }
        Ok(InverseDft {
            image: ImageTensor::from_raw(shape, data),
            max_imag,
        })
    }

    fn check_grid(&self, shape: Shape) -> Result<()> {
        if shape.height != self.height || shape.width != self.width {
            return Err(Error::shape(
                format!("{}x{} grid", self.height, self.width),
                format!("{}x{}", shape.height, shape.width),
            ));
        }
        Ok(())
    }
}

/// fftshift (`inverse = false`) or ifftshift (`inverse = true`) of one plane.
fn shift<V: Copy>(plane: &[V], h: usize, w: usize, inverse: bool) -> Vec<V> {
    let (dy, dx) = if inverse {
        (h - h / 2, w - w / 2)
    } else {
        (h / 2, w / 2)
    };
    let mut out = plane.to_vec();
    for y in 0..h {
        let ty = (y + dy) % h;
        for x in 0..w {
            out[ty * w + (x + dx) % w] = plane[y * w + x];
        }
    }
    out
}

/// Real part of an inverse transform plus the largest discarded imaginary part.
#[derive(Debug, Clone)]
pub struct InverseDft<T> {
    pub image: ImageTensor<T>,
    pub max_imag: T,
}

/// Forward 2D DFT of every channel, zero frequency moved to the grid center.
pub fn dft2_shifted<T: Scalar>(image: &ImageTensor<T>) -> Result<SpectrumTensor<T>> {
    let shape = image.shape();
    Dft2Plan::new(shape.height, shape.width)?.forward(image)
}

/// Inverse of [`dft2_shifted`]; keeps the real part.
pub fn idft2_shifted<T: Scalar>(spectrum: &SpectrumTensor<T>) -> Result<InverseDft<T>> {
    let shape = spectrum.shape();
    Dft2Plan::new(shape.height, shape.width)?.inverse(spectrum)
}

/// Radial distance of shifted grid point `(u, v)` from the center bin.
#[inline]
pub fn radial_distance(u: usize, v: usize, height: usize, width: usize) -> f64 {
    let du = u as f64 - (height / 2) as f64;
    let dv = v as f64 - (width / 2) as f64;
    (du * du + dv * dv).sqrt()
}

/// Ring masks over a centered `H x W` frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMaskSet {
    height: usize,
    width: usize,
    cutoffs: Vec<f64>,
    mode: MaskMode,
    band_index: Vec<Option<usize>>,
}

/// Cutoffs `nu_0..nu_N` linearly spaced on `[0, nu_max]`.
pub fn linear_cutoffs(n_bands: usize, nu_max: f64) -> Vec<f64> {
    (0..=n_bands)
        .map(|i| nu_max * i as f64 / n_bands as f64)
        .collect()
}

/// Builds `n_bands` ring masks with cutoffs linearly spaced on `[0, nu_max]`.
pub fn make_band_masks(
    height: usize,
    width: usize,
    n_bands: usize,
    nu_max: f64,
    mode: MaskMode,
) -> Result<BandMaskSet> {
    if n_bands == 0 {
        return Err(Error::validation("n_bands must be at least 1"));
    }
    if !(nu_max > 0.0) || !nu_max.is_finite() {
        return Err(Error::validation(format!("nu_max must be positive, got {nu_max}")));
    }
    BandMaskSet::from_cutoffs(height, width, linear_cutoffs(n_bands, nu_max), mode)
}

impl BandMaskSet {
    /// Builds masks from explicit cutoffs `nu_0 = 0 < nu_1 < ... < nu_N`.
    pub fn from_cutoffs(
        height: usize,
        width: usize,
        cutoffs: Vec<f64>,
        mode: MaskMode,
    ) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::validation(format!(
                "mask grid must be at least 2x2, got {height}x{width}"
            )));
        }
        if cutoffs.len() < 2 {
            return Err(Error::validation("need at least two cutoffs (one band)"));
        }
        if cutoffs[0] != 0.0 {
            return Err(Error::validation("first cutoff must be 0"));
        }
        if cutoffs.windows(2).any(|p| !(p[1] > p[0]) || !p[1].is_finite()) {
            return Err(Error::validation("cutoffs must be finite and strictly increasing"));
        }
        let n_bands = cutoffs.len() - 1;
        let mut band_index = Vec::with_capacity(height * width);
        for u in 0..height {
            for v in 0..width {
                let r = radial_distance(u, v, height, width);
                // first i with nu_i >= r, i.e. nu_{i-1} < r <= nu_i
                let i = cutoffs.partition_point(|&c| c < r);
                let band = match (i, mode) {
                    (0, MaskMode::PartitionComplete) => Some(0),
                    (0, MaskMode::PaperStrict) => None,
                    (i, _) if i <= n_bands => Some(i - 1),
                    (_, MaskMode::PartitionComplete) => Some(n_bands - 1),
                    (_, MaskMode::PaperStrict) => None,
                };
                band_index.push(band);
            }
        }
        Ok(Self {
            height,
            width,
            cutoffs,
            mode,
            band_index,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.cutoffs.len() - 1
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    /// Zero-based band of shifted grid point `(u, v)`, if any.
    pub fn band_of(&self, u: usize, v: usize) -> Option<usize> {
        self.band_index[u * self.width + v]
    }

    /// Per-pixel band map in row-major order.
    pub fn band_index(&self) -> &[Option<usize>] {
        &self.band_index
    }

    /// Binary mask `M_i` for zero-based band `i`.
    pub fn mask(&self, band: usize) -> Vec<bool> {
        self.band_index.iter().map(|b| *b == Some(band)).collect()
    }

    /// Number of grid points in each band.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_bands()];
        for b in self.band_index.iter().flatten() {
            counts[*b] += 1;
        }
        counts
    }

    pub fn unassigned(&self) -> usize {
        self.band_index.iter().filter(|b| b.is_none()).count()
    }
}

/// Band-limited images `f_1..f_N`, low to high frequency.
#[derive(Debug, Clone)]
pub struct BandDecomposition<T> {
    bands: Vec<ImageTensor<T>>,
    shape: Shape,
    cutoffs: Vec<f64>,
    max_imag: T,
}

impl<T: Scalar> BandDecomposition<T> {
    pub fn new(bands: Vec<ImageTensor<T>>, cutoffs: Vec<f64>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::validation("decomposition needs at least one band"))?;
        let shape = first.shape();
        for b in &bands {
            b.ensure_shape(shape)?;
        }
        if cutoffs.len() != bands.len() + 1 {
            return Err(Error::shape(bands.len() + 1, cutoffs.len()));
        }
        Ok(Self {
            bands,
            shape,
            cutoffs,
            max_imag: T::zero(),
        })
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bands(&self) -> &[ImageTensor<T>] {
        &self.bands
    }

    pub fn band(&self, i: usize) -> &ImageTensor<T> {
        &self.bands[i]
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Largest imaginary part discarded across all bands.
    pub fn max_imag(&self) -> T {
        self.max_imag
    }

    /// Element-wise sum of all bands.
    pub fn sum(&self) -> ImageTensor<T> {
        let mut out = vec![T::zero(); self.shape.len()];
        for b in &self.bands {
            for (o, &v) in out.iter_mut().zip(b.data()) {
                *o = *o + v;
            }
        }
        ImageTensor::from_raw(self.shape, out)
    }
}

/// Reusable decomposer for images of one grid size.
pub struct BandDecomposer<T: Scalar> {
    plan: Dft2Plan<T>,
    masks: BandMaskSet,
}

impl<T: Scalar> BandDecomposer<T> {
    pub fn new(masks: BandMaskSet) -> Result<Self> {
        Ok(Self {
            plan: Dft2Plan::new(masks.height, masks.width)?,
            masks,
        })
    }

    pub fn masks(&self) -> &BandMaskSet {
        &self.masks
    }

    pub fn plan(&self) -> &Dft2Plan<T> {
        &self.plan
    }

    pub fn decompose(&self, image: &ImageTensor<T>) -> Result<BandDecomposition<T>> {
        let shape = image.shape();
        if shape.height != self.masks.height || shape.width != self.masks.width {
            return Err(Error::shape(
                format!("{}x{} mask grid", self.masks.height, self.masks.width),
                format!("{}x{} image", shape.height, shape.width),
            ));
        }
        let spectrum = self.plan.forward(image)?;
        let n = shape.plane_len();
        let zero = Complex::new(T::zero(), T::zero());
        let mut bands = Vec::with_capacity(self.masks.n_bands());
        let mut max_imag = T::zero();
        let mut masked = vec![zero; n];
        for band in 0..self.masks.n_bands() {
            let mut data = Vec::with_capacity(shape.len());
            for c in 0..shape.channels {
                let plane = &spectrum.data()[c * n..(c + 1) * n];
                for (p, m) in masked.iter_mut().enumerate() {
                    *m = if self.masks.band_index[p] == Some(band) {
                        plane[p]
                    } else {
                        zero
                    };
                }
                for z in self.plan.inverse_plane(&masked) {
                    max_imag = max_imag.max(z.im.abs());
                    data.push(z.re);
                }
            }
            bands.push(ImageTensor::from_raw(shape, data));
        }
        Ok(BandDecomposition {
            bands,
            shape,
            cutoffs: self.masks.cutoffs.clone(),
            max_imag,
        })
    }
}

/// Splits `image` into band-limited images, one per mask.
pub fn band_decompose<T: Scalar>(
    image: &ImageTensor<T>,
    masks: &BandMaskSet,
) -> Result<BandDecomposition<T>> {
    BandDecomposer::new(masks.clone())?.decompose(image)
}
