use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sen2sharp::fusion::{self, TrainConfig};
use sen2sharp::metrics::MetricsConfig;
use sen2sharp::net::{AblationFlags, Architecture};
use sen2sharp::resample::DEFAULT_NYQUIST_GAIN;
use sen2sharp::wald::{self, NyquistGains};

pub const DEFAULT_PREVIEW_BANDS: [&str; 3] = ["B11", "B8A", "B05"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub io: IoSection,
    #[serde(default)]
    pub wald: WaldSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub input_z: PathBuf,
    pub input_x: PathBuf,
    /// Directory for every product the commands write.
    pub output: PathBuf,
    /// Bands mapped to red, green and blue in previews.
    #[serde(default = "default_preview")]
    pub preview_bands: [String; 3],
}

fn default_preview() -> [String; 3] {
    DEFAULT_PREVIEW_BANDS.map(String::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaldSection {
    pub gains: NyquistGains,
    pub patch: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub hpf_gain: f64,
}

impl Default for WaldSection {
    fn default() -> Self {
        Self {
            gains: NyquistGains::default(),
            patch: wald::DEFAULT_PATCH,
            stride: wald::DEFAULT_STRIDE,
            val_fraction: wald::DEFAULT_VAL_FRACTION,
            seed: wald::DEFAULT_SEED,
            hpf_gain: DEFAULT_NYQUIST_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Widths of the two hidden layers.
    pub channels: [usize; 2],
    pub kernel: usize,
    pub flags: AblationFlags,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            channels: arch.hidden,
            kernel: arch.kernel,
            flags: AblationFlags::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: fusion::DEFAULT_EPOCHS,
            batch: fusion::DEFAULT_BATCH,
            lr: fusion::DEFAULT_LR,
            momentum: fusion::DEFAULT_MOMENTUM,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.train_config().validate()?;
        if cfg.metrics.q_window == 0 || !(cfg.metrics.ergas_ratio > 0.0) {
            bail!("metrics.q_window must be >= 1 and metrics.ergas_ratio > 0");
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch,
            learning_rate: self.train.lr,
            momentum: self.train.momentum,
            patch: self.wald.patch,
            stride: self.wald.stride,
            flags: self.model.flags,
            arch: Architecture {
                hidden: self.model.channels,
                kernel: self.model.kernel,
            },
            seed: self.wald.seed,
            val_fraction: self.wald.val_fraction,
            nyquist_gains: self.wald.gains.clone(),
            hpf_gain: self.wald.hpf_gain,
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.io.output.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"io": {"input_z": "z.msr", "input_x": "x.msr", "output": "out"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.io.preview_bands, default_preview());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"io": {"input_z": "z", "input_x": "x", "output": "o"}, "extra": 1}"#,
            r#"{"io": {"input_z": "z", "input_x": "x", "output": "o"}, "train": {"epoch": 3}}"#,
            r#"{"io": {"input_z": "z", "input_x": "x", "output": "o"}, "model": {"flags": {"use_z": true, "use_hpf": true, "x": 1}}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(text).is_err(), "{}", text);
        }
    }

    #[test]
    fn per_band_gains_parse() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"io": {"input_z": "z", "input_x": "x", "output": "o"},
                "wald": {"gains": {"default": 0.28, "bands": {"B12": 0.22}}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.wald.gains.gain("B12"), 0.22);
        assert_eq!(cfg.wald.gains.gain("B05"), 0.28);
    }
}
