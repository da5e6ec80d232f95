use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::AdmmConfig;
use crate::baselines::MagnitudePruneConfig;
use crate::datasets::{Shift, SyntheticPairConfig};
use crate::model::Shape3;
use crate::objective::NtpLossConfig;
use crate::transferability::FineTuneConfig;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "NTP_OUT_ROOT";

/// The source/target domains of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticPairConfig),
    /// Class-per-subdirectory image folders (or saved datasets), resized to
    /// `shape` and split 80/20 per class.
    Folders {
        source: PathBuf,
        target: PathBuf,
        shape: Shape3,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 15,
            lr: 2e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Everything that determines an experiment's artifacts. Stage seeds
/// inside the sub-configs are combined with the global `seed`, so changing
/// `seed` alone reseeds every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub architecture: String,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub loss: NtpLossConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub magnitude: MagnitudePruneConfig,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    /// Target training-subset sizes of the learning curves.
    pub sizes: Vec<usize>,
    /// Output root; excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// The reference experiment: tiny CNN on the 10-class background-noise
/// glyph pair, NTP at 80% sparsity, FF fine-tuning with minibatches of 16 on
/// the grid 32..512.
impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            dataset: DatasetSpec::Synthetic(SyntheticPairConfig {
                num_classes: 10,
                per_class: 100,
                image: Shape3::new(32, 32, 3),
                shift: Shift::BackgroundNoise,
                seed: 0,
            }),
            architecture: "tiny_cnn".into(),
            pretrain: PretrainConfig::default(),
            loss: NtpLossConfig {
                beta: 0.05,
                gamma: 3.0,
                ..NtpLossConfig::default()
            },
            admm: AdmmConfig {
                target_sparsity: 0.8,
                max_iterations: 10,
                batch_size: 32,
                source_fraction: 0.5,
                target_fraction: 0.5,
                ..AdmmConfig::default()
            },
            magnitude: MagnitudePruneConfig::default(),
            finetune: FineTuneConfig {
                batch_size: 16,
                ..FineTuneConfig::default()
            },
            sizes: vec![32, 64, 128, 256, 512],
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::format(path, j.to_string()),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.loss.validate()?;
        self.admm.validate()?;
        self.finetune.validate()?;
        if !(0.0..1.0).contains(&self.magnitude.sparsity) {
            return Err(Error::invalid("magnitude sparsity must lie in [0, 1)"));
        }
        if self.sizes.len() < 2 || self.sizes.windows(2).any(|w| w[0] >= w[1]) || self.sizes[0] == 0 {
            return Err(Error::invalid("sizes must be at least two strictly increasing positive counts"));
        }
        if self.pretrain.batch_size == 0 || !(self.pretrain.lr > 0.0) {
            return Err(Error::invalid("pretrain batch size and lr must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of the config without its output
    /// directory.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Output root: explicit argument, then the config, then
    /// `$NTP_OUT_ROOT`, then `./runs`.
    pub fn out_root(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Per-stage seed derived from the global seed and the stage's own.
    pub fn stage_seed(&self, stage: &str, local: u64) -> u64 {
        crate::seed::derive(self.seed, stage, local)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: Some("/elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json().unwrap()).unwrap();
        v["admm"]["rhoo"] = 1.0.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json().unwrap()).unwrap();
        v["version"] = 2.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
