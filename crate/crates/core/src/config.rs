//! Single-document experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::io::read_json;
use crate::metrics::SsimOptions;
use crate::synth::SynthConfig;
use crate::train::Stage1Config;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub stage1: Stage1Config,
    pub encoder: EncoderConfig,
    pub metrics: SsimOptions,
    /// Directory written by `synth-data`; when absent, `train` regenerates
    /// the data from `synth`. Relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = read_json(path).map_err(|e| match e {
            Error::Format { path, message } => Error::Validation(format!(
                "{}: {message}",
                path.display()
            )),
            other => other,
        })?;
        if let Some(d) = &config.dataset {
            if d.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new(""));
                config.dataset = Some(base.join(d));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.stage1.validate()?;
        if self.metrics.window == 0 || !(self.metrics.sigma > 0.0) || !(self.metrics.data_range > 0.0) {
            return Err(Error::validation(
                "metrics.window, metrics.sigma and metrics.data_range must be positive",
            ));
        }
        Ok(())
    }
}
