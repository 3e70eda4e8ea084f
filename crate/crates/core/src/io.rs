//! On-disk formats: raw little-endian f32 arrays with JSON sidecars, binary
//! PGM/PPM images, gate JSON and a few CSV tables.
//!
//! Every writer goes through [`write_atomic`], so a crash never leaves a
//! half-written output behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{pass_through_rates, GateParameters};
use crate::linalg::Matrix;
use crate::metrics::MetricReport;
use crate::regression::RidgeModel;
use crate::spectral::{BandDecomposition, BandMaskSet, MaskMode};
use crate::tensor::{ImageTensor, Shape};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// `foo.bin` -> `foo.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::format(
            path,
            format!("expected {} f32 values, file holds {} bytes", expected_len, bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageStackMeta {
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMeta {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionMeta {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_bands: usize,
    pub cutoffs: Vec<f64>,
    pub mask_mode: MaskMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeMeta {
    #[serde(rename = "V")]
    pub voxel_dim: usize,
    #[serde(rename = "D")]
    pub latent_dim: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateFile {
    pub n_bands: usize,
    /// Band edges, `n_bands + 1` of them starting at 0.
    pub cutoffs: Vec<f64>,
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub epsilon: f64,
    pub mask_mode: MaskMode,
}

impl GateFile {
    pub fn new(params: &GateParameters<f64>, masks: &BandMaskSet) -> Result<Self> {
        if params.n_bands() != masks.n_bands() {
            return Err(Error::validation(format!(
                "gate has {} bands, masks have {}",
                params.n_bands(),
                masks.n_bands()
            )));
        }
        Ok(Self {
            n_bands: params.n_bands(),
            cutoffs: masks.cutoffs().to_vec(),
            w: params.weights().to_vec(),
            alpha: pass_through_rates(params),
            epsilon: params.epsilon(),
            mask_mode: masks.mode(),
        })
    }

    pub fn params(&self) -> Result<GateParameters<f64>> {
        if self.w.len() != self.n_bands || self.cutoffs.len() != self.n_bands + 1 {
            return Err(Error::validation(format!(
                "gate file declares {} bands but has {} weights and {} cutoffs",
                self.n_bands,
                self.w.len(),
                self.cutoffs.len()
            )));
        }
        if self.cutoffs.windows(2).any(|p| !(p[0] < p[1])) || !(self.cutoffs[0] >= 0.0) {
            return Err(Error::validation("gate cutoffs must be non-negative and increasing"));
        }
        GateParameters::new(self.w.clone(), self.epsilon)
    }
}

pub fn write_gate(path: &Path, gate: &GateFile) -> Result<()> {
    write_json(path, gate)
}

pub fn read_gate(path: &Path) -> Result<GateFile> {
    let gate: GateFile = read_json(path)?;
    gate.params().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(gate)
}

pub fn write_images(path: &Path, images: &[ImageTensor<f64>]) -> Result<()> {
    let Some(first) = images.first() else {
        return Err(Error::validation("no images to write"));
    };
    let s = first.shape();
    for img in images {
        img.ensure_shape(s)?;
    }
    let meta = ImageStackMeta {
        count: images.len(),
        channels: s.channels,
        height: s.height,
        width: s.width,
    };
    write_f32(path, images.iter().flat_map(|i| i.data().iter().copied()))?;
    write_json(&sidecar_path(path), &meta)
}

pub fn read_images(path: &Path) -> Result<Vec<ImageTensor<f64>>> {
    let meta: ImageStackMeta = read_json(&sidecar_path(path))?;
    let shape = Shape::new(meta.channels, meta.height, meta.width);
    let data = read_f32(path, meta.count * shape.len())?;
    if shape.is_empty() {
        return Err(Error::format(path, "empty image shape"));
    }
    data.chunks_exact(shape.len())
        .map(|c| ImageTensor::new(shape, c.to_vec()))
        .collect()
}

pub fn write_matrix(path: &Path, m: &Matrix<f64>) -> Result<()> {
    write_f32(path, m.data().iter().copied())?;
    write_json(
        &sidecar_path(path),
        &MatrixMeta {
            rows: m.rows(),
            cols: m.cols(),
        },
    )
}

pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    let meta: MatrixMeta = read_json(&sidecar_path(path))?;
    Matrix::new(meta.rows, meta.cols, read_f32(path, meta.rows * meta.cols)?)
}

/// Weights (`V x D`, row-major) followed by the intercept.
pub fn write_ridge(path: &Path, model: &RidgeModel<f64>) -> Result<()> {
    let values = model.weights().data().iter().chain(model.intercept()).copied();
    write_f32(path, values)?;
    write_json(
        &sidecar_path(path),
        &RidgeMeta {
            voxel_dim: model.voxel_dim(),
            latent_dim: model.latent_dim(),
            lambda: model.lambda(),
        },
    )
}

pub fn read_ridge(path: &Path) -> Result<RidgeModel<f64>> {
    let meta: RidgeMeta = read_json(&sidecar_path(path))?;
    let (v, d) = (meta.voxel_dim, meta.latent_dim);
    let mut data = read_f32(path, v * d + d)?;
    let intercept = data.split_off(v * d);
    RidgeModel::new(Matrix::new(v, d, data)?, intercept, meta.lambda)
}

/// Band images stored band-major.
pub fn write_decomposition(path: &Path, d: &BandDecomposition<f64>, mode: MaskMode) -> Result<()> {
    let s = d.shape();
    write_f32(path, d.bands().iter().flat_map(|b| b.data().iter().copied()))?;
    write_json(
        &sidecar_path(path),
        &DecompositionMeta {
            channels: s.channels,
            height: s.height,
            width: s.width,
            n_bands: d.n_bands(),
            cutoffs: d.cutoffs().to_vec(),
            mask_mode: mode,
        },
    )
}

pub fn read_decomposition(path: &Path) -> Result<(BandDecomposition<f64>, DecompositionMeta)> {
    let meta: DecompositionMeta = read_json(&sidecar_path(path))?;
    let shape = Shape::new(meta.channels, meta.height, meta.width);
    let data = read_f32(path, meta.n_bands * shape.len())?;
    let bands = data
        .chunks_exact(shape.len().max(1))
        .map(|c| ImageTensor::new(shape, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((BandDecomposition::new(bands, meta.cutoffs.clone())?, meta))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PGM for one channel, PPM for three. Values are clamped to `[0, 1]`.
pub fn encode_pnm(img: &ImageTensor<f64>) -> Result<Vec<u8>> {
    let s = img.shape();
    let magic = match s.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::validation(format!(
                "PNM output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", s.width, s.height).into_bytes();
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..s.channels {
                out.push(to_byte(img.get(c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, img: &ImageTensor<f64>) -> Result<()> {
    write_atomic(path, &encode_pnm(img)?)
}

struct PnmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmCursor<'_> {
    fn token(&mut self) -> Option<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.bytes[start..self.pos]).ok())?
    }

    fn number(&mut self) -> Option<usize> {
        self.token()?.parse().ok()
    }
}

/// Reads P2/P3/P5/P6 images into `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<ImageTensor<f64>, String> {
    let mut cur = PnmCursor { bytes, pos: 0 };
    let magic = cur.token().ok_or("missing PNM magic")?.to_string();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P3" => (3, false),
        "P5" => (1, true),
        "P6" => (3, true),
        m => return Err(format!("unsupported PNM magic {m:?}")),
    };
    let width = cur.number().ok_or("bad PNM width")?;
    let height = cur.number().ok_or("bad PNM height")?;
    let maxval = cur.number().ok_or("bad PNM maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad PNM header {width}x{height} maxval {maxval}"));
    }
    let n = width * height * channels;
    let raw: Vec<usize> = if binary {
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let body = bytes
            .get(start..start + need)
            .ok_or("PNM pixel data is truncated")?;
        if wide {
            body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        } else {
            body.iter().map(|&b| b as usize).collect()
        }
    } else {
        (0..n)
            .map(|_| cur.number().ok_or("PNM pixel data is truncated"))
            .collect::<std::result::Result<_, _>>()?
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err("PNM sample exceeds maxval".into());
    }
    let scale = maxval as f64;
    let shape = Shape::new(channels, height, width);
    Ok(ImageTensor::from_fn(shape, |c, y, x| {
        raw[(y * width + x) * channels + c] as f64 / scale
    }))
}

pub fn read_pnm(path: &Path) -> Result<ImageTensor<f64>> {
    decode_pnm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

/// PNM by extension, otherwise a single-image f32 stack.
pub fn load_image(path: &Path) -> Result<ImageTensor<f64>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "pgm" | "ppm" | "pnm" => read_pnm(path),
        _ => {
            let mut images = read_images(path)?;
            if images.len() != 1 {
                return Err(Error::format(
                    path,
                    format!("expected one image, found {}", images.len()),
                ));
            }
            Ok(images.remove(0))
        }
    }
}

/// `band,cutoff_low,cutoff_high,w,alpha`
pub fn alpha_csv(gate: &GateFile) -> Result<String> {
    let params = gate.params()?;
    let alpha = pass_through_rates(&params);
    let mut out = String::from("band,cutoff_low,cutoff_high,w,alpha\n");
    for i in 0..gate.n_bands {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            gate.cutoffs[i],
            gate.cutoffs[i + 1],
            gate.w[i],
            alpha[i]
        ));
    }
    Ok(out)
}

/// `image_id,pixcorr,ssim`; an undefined correlation is left empty.
pub fn metrics_csv(report: &MetricReport) -> String {
    let mut out = String::from("image_id,pixcorr,ssim\n");
    for i in 0..report.ids.len() {
        let pc = report.pixcorr[i].map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{pc},{}\n", report.ids[i], report.ssim[i]));
    }
    out
}

/// Zero-mean band image shifted by 0.5 for viewing.
pub fn band_preview(band: &ImageTensor<f64>) -> ImageTensor<f64> {
    band.map(|v| (v + 0.5).clamp(0.0, 1.0))
}
