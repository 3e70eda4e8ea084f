//! File-level steps behind each command-line subcommand.
//!
//! Outputs depend only on inputs and config seeds: no timestamps, host names
//! or thread counts end up in any artifact.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{
    alpha_csv, band_preview, load_image, metrics_csv, read_gate, read_images, read_json,
    read_matrix, read_ridge, write_atomic, write_decomposition, write_gate, write_images,
    write_json, write_matrix, write_pnm, write_ridge, GateFile,
};
use crate::linalg::Matrix;
use crate::metrics::{evaluate_pairs, MetricReport, SsimOptions};
use crate::spectral::{make_band_masks, BandDecomposer, MaskMode};
use crate::synth::{generate, SynthConfig};
use crate::tensor::{ImageTensor, Shape};
use crate::train::{infer_stage1, train_stage1, Stage1Config};

pub const IMAGES_FILE: &str = "images.bin";
pub const VOXELS_FILE: &str = "voxels.bin";
pub const DATASET_FILE: &str = "dataset.json";
pub const GATE_FILE: &str = "gate.json";
pub const RIDGE_FILE: &str = "ridge.bin";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ALPHA_FILE: &str = "alpha.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BANDS_FILE: &str = "bands.bin";

/// Manifest written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub images: String,
    pub voxels: String,
    pub count: usize,
    pub shape: Shape,
    pub voxel_dim: usize,
    pub synth: SynthConfig,
}

pub fn synth_data(config_path: &Path, out_dir: &Path) -> Result<DatasetManifest> {
    let config = ExperimentConfig::load(config_path)?;
    let data = generate::<f64>(&config.synth)?;
    write_images(&out_dir.join(IMAGES_FILE), &data.images)?;
    write_matrix(&out_dir.join(VOXELS_FILE), &data.voxels)?;
    let manifest = DatasetManifest {
        images: IMAGES_FILE.into(),
        voxels: VOXELS_FILE.into(),
        count: data.images.len(),
        shape: config.synth.shape(),
        voxel_dim: config.synth.voxel_dim,
        synth: config.synth,
    };
    write_json(&out_dir.join(DATASET_FILE), &manifest)?;
    Ok(manifest)
}

/// Images and voxel rows of a `synth-data` directory.
pub fn load_dataset(dir: &Path) -> Result<(Vec<ImageTensor<f64>>, Matrix<f64>)> {
    let manifest: DatasetManifest = read_json(&dir.join(DATASET_FILE))?;
    let images = read_images(&dir.join(&manifest.images))?;
    let voxels = read_matrix(&dir.join(&manifest.voxels))?;
    if images.len() != manifest.count || voxels.rows() != manifest.count {
        return Err(Error::format(
            dir.join(DATASET_FILE),
            format!(
                "manifest lists {} samples, found {} images and {} voxel rows",
                manifest.count,
                images.len(),
                voxels.rows()
            ),
        ));
    }
    Ok((images, voxels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeSummary {
    pub shape: Shape,
    pub n_bands: usize,
    pub cutoffs: Vec<f64>,
    pub mask_mode: MaskMode,
    pub band_pixels: Vec<usize>,
    pub unassigned_pixels: usize,
    pub max_imag: f64,
}

pub fn decompose(
    image_path: &Path,
    n_bands: usize,
    nu_max: f64,
    mode: MaskMode,
    out_dir: &Path,
) -> Result<DecomposeSummary> {
    let image = load_image(image_path)?;
    let shape = image.shape();
    let masks = make_band_masks(shape.height, shape.width, n_bands, nu_max, mode)?;
    let decomp = BandDecomposer::<f64>::new(masks.clone())?.decompose(&image)?;
    write_decomposition(&out_dir.join(BANDS_FILE), &decomp, mode)?;
    let dc = masks.band_of(shape.height / 2, shape.width / 2);
    let ext = if shape.channels == 1 { "pgm" } else { "ppm" };
    let previews = shape.channels == 1 || shape.channels == 3;
    for (i, band) in decomp.bands().iter().enumerate() {
        if previews {
            let view = if dc == Some(i) {
                band.map(|v| v.clamp(0.0, 1.0))
            } else {
                band_preview(band)
            };
            write_pnm(&out_dir.join(format!("band_{i:02}.{ext}")), &view)?;
        }
        let mask = masks.mask(i);
        let mask_img = ImageTensor::from_fn(Shape::new(1, shape.height, shape.width), |_, y, x| {
            if mask[y * shape.width + x] { 1.0 } else { 0.0 }
        });
        write_pnm(&out_dir.join(format!("mask_{i:02}.pgm")), &mask_img)?;
    }
    let summary = DecomposeSummary {
        shape,
        n_bands,
        cutoffs: masks.cutoffs().to_vec(),
        mask_mode: mode,
        band_pixels: masks.counts(),
        unassigned_pixels: masks.unassigned(),
        max_imag: decomp.max_imag(),
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub n_train: usize,
    pub n_heldout: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub loss_train_first: f64,
    pub loss_train_last: f64,
    pub loss_heldout_first: Option<f64>,
    pub loss_heldout_last: Option<f64>,
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub stage1: Stage1Config,
}

pub fn train(config_path: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let config = ExperimentConfig::load(config_path)?;
    let (images, voxels) = match &config.dataset {
        Some(dir) => load_dataset(dir)?,
        None => {
            let d = generate::<f64>(&config.synth)?;
            (d.images, d.voxels)
        }
    };
    let shape = images
        .first()
        .map(|i| i.shape())
        .ok_or_else(|| Error::validation("dataset has no samples"))?;
    let encoder = config.encoder.build::<f64>(shape)?;
    let out = train_stage1(&images, &voxels, encoder.as_ref(), &config.stage1)?;

    let gate = GateFile::new(&out.gate, &out.masks)?;
    write_gate(&out_dir.join(GATE_FILE), &gate)?;
    write_ridge(&out_dir.join(RIDGE_FILE), &out.ridge)?;
    let mut csv = Vec::new();
    out.log
        .write_csv(&mut csv)
        .map_err(|e| Error::io(out_dir.join(TRAJECTORY_FILE), e))?;
    write_atomic(&out_dir.join(TRAJECTORY_FILE), &csv)?;
    write_atomic(&out_dir.join(ALPHA_FILE), alpha_csv(&gate)?.as_bytes())?;

    let first = out.log.records.first().expect("at least one epoch");
    let last = out.log.records.last().expect("at least one epoch");
    let summary = TrainSummary {
        n_train: out.n_train,
        n_heldout: out.n_heldout,
        epochs: out.log.records.len(),
        lambda: out.ridge.lambda(),
        loss_train_first: first.loss_train,
        loss_train_last: last.loss_train,
        loss_heldout_first: first.loss_heldout,
        loss_heldout_last: last.loss_heldout,
        w: gate.w.clone(),
        alpha: gate.alpha.clone(),
        stage1: config.stage1,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Predicted latents, one row per voxel row.
pub fn infer(gate_path: &Path, ridge_path: &Path, voxels_path: &Path, out: &Path) -> Result<Matrix<f64>> {
    read_gate(gate_path)?;
    let ridge = read_ridge(ridge_path)?;
    let voxels = read_matrix(voxels_path)?;
    if voxels.cols() != ridge.voxel_dim() {
        return Err(Error::validation(format!(
            "voxel file has {} columns, ridge model expects {}",
            voxels.cols(),
            ridge.voxel_dim()
        )));
    }
    let latents = infer_stage1(&ridge, &voxels)?;
    write_matrix(out, &latents)?;
    Ok(latents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id: String,
    pub reconstruction: PathBuf,
    pub reference: PathBuf,
}

/// Image pairs to score; paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationManifest {
    pub pairs: Vec<PairEntry>,
    #[serde(default)]
    pub ssim: SsimOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub count: usize,
    pub pixcorr_mean: Option<f64>,
    pub pixcorr_undefined: usize,
    pub ssim_mean: f64,
    pub ssim: SsimOptions,
}

pub fn evaluate(manifest_path: &Path, out_dir: &Path) -> Result<MetricReport> {
    let manifest: EvaluationManifest = read_json(manifest_path).map_err(|e| match e {
        Error::Format { path, message } => {
            Error::Validation(format!("{}: {message}", path.display()))
        }
        other => other,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));
    let pairs: Result<Vec<_>> = manifest
        .pairs
        .par_iter()
        .map(|p| {
            Ok((
                p.id.clone(),
                load_image(&base.join(&p.reconstruction))?,
                load_image(&base.join(&p.reference))?,
            ))
        })
        .collect();
    let report = evaluate_pairs(&pairs?, &manifest.ssim)?;
    write_atomic(&out_dir.join(METRICS_FILE), metrics_csv(&report).as_bytes())?;
    let summary = EvaluationSummary {
        count: report.ids.len(),
        pixcorr_mean: report.pixcorr_mean,
        pixcorr_undefined: report.pixcorr.iter().filter(|p| p.is_none()).count(),
        ssim_mean: report.ssim_mean,
        ssim: manifest.ssim,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(report)
}

pub fn export_weights(gate_path: &Path, out: &Path) -> Result<GateFile> {
    let gate = read_gate(gate_path)?;
    write_atomic(out, alpha_csv(&gate)?.as_bytes())?;
    Ok(gate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{read_decomposition, read_pnm};

    #[test]
    fn decompose_constant_image() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::<f64>::filled(Shape::new(3, 16, 16), 0.4);
        let p = dir.path().join("c.ppm");
        write_pnm(&p, &img).unwrap();
        let out = dir.path().join("out");
        let s = decompose(&p, 4, 8.0, MaskMode::PartitionComplete, &out).unwrap();
        assert_eq!(s.unassigned_pixels, 0);
        let input = read_pnm(&p).unwrap();
        let (bands, _) = read_decomposition(&out.join(BANDS_FILE)).unwrap();
        assert!(bands.band(0).max_abs_diff(&input) < 1e-6);
        assert!(bands.bands()[1..].iter().all(|b| b.max_abs_diff(&ImageTensor::zeros(b.shape())) < 1e-6));
        assert_eq!(read_pnm(&out.join("band_00.ppm")).unwrap(), input);
        assert!(out.join("mask_03.pgm").exists());
    }

    #[test]
    fn evaluate_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let a = ImageTensor::<f64>::from_fn(Shape::new(1, 12, 12), |_, y, x| ((x * y) % 7) as f64 / 6.0);
        write_pnm(&dir.path().join("a.pgm"), &a).unwrap();
        let flat = ImageTensor::<f64>::filled(Shape::new(1, 12, 12), 0.5);
        write_pnm(&dir.path().join("f.pgm"), &flat).unwrap();
        let manifest = r#"{"pairs": [
            {"id": "same", "reconstruction": "a.pgm", "reference": "a.pgm"},
            {"id": "flat", "reconstruction": "f.pgm", "reference": "a.pgm"}
        ]}"#;
        std::fs::write(dir.path().join("m.json"), manifest).unwrap();
        let report = evaluate(&dir.path().join("m.json"), &dir.path().join("eval")).unwrap();
        assert_eq!(report.pixcorr[1], None);
        let csv = std::fs::read_to_string(dir.path().join("eval").join(METRICS_FILE)).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "image_id,pixcorr,ssim");
        let same: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(same[0], "same");
        assert!((same[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!(lines[2].starts_with("flat,,"));
    }
}
