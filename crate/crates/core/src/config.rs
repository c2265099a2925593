//! Pipeline configuration: one TOML file with dotted-key overrides, hashed
//! for artifact lineage. Every subcommand prints the hash of the fully
//! resolved config it ran with, and datasets, checkpoints and reports carry
//! it forward.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::sim::FusionSimConfig;
use crate::regressor::TrainConfig;
use crate::synthgen::GenConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {detail}")]
    File { path: String, detail: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected dotted.key=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the body model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ModelSource {
    /// The procedural desk-scale model.
    Mini { seed: u64 },
    /// A model-parameter file.
    File { path: PathBuf },
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Mini { seed: 7 }
    }
}

/// Pose bank configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum BankConfig {
    Procedural { count: usize, seed: u64 },
    File { path: PathBuf },
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig::Procedural {
            count: 512,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub pck_alpha: f64,
    /// Optional px→cm scale for the 2D MPJPE (cm) report.
    pub px_per_cm: Option<f64>,
    /// Fraction of records (by id order) reserved as the held-out split.
    pub holdout_fraction: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            pck_alpha: 0.3,
            px_per_cm: None,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsocenterOptions {
    /// Calibration file; identity calibration when omitted.
    pub calibration: Option<PathBuf>,
    pub region: String,
}

impl Default for IsocenterOptions {
    fn default() -> Self {
        Self {
            calibration: None,
            region: "abdomen".into(),
        }
    }
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelSource,
    pub bank: BankConfig,
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub fusion_sim: FusionSimConfig,
    pub eval: EvalOptions,
    pub isocenter: IsocenterOptions,
    /// Output root; overridable with the `SPMK_OUT_ROOT` environment
    /// variable.
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    /// Loads a config file (or the defaults when `path` is `None`), applies
    /// `key.path=value` overrides in order, then the output-root env var.
    pub fn resolve(
        path: Option<&Path>,
        overrides: &[String],
        env_out_root: Option<&str>,
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Value = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
                let table: toml::Table =
                    text.parse().map_err(|e: toml::de::Error| ConfigError::File {
                        path: path.display().to_string(),
                        detail: e.to_string(),
                    })?;
                toml::Value::Table(table)
            }
            None => toml::Value::Table(Default::default()),
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let mut config: PipelineConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if config.output_dir.as_os_str().is_empty() {
            config.output_dir = PathBuf::from("runs");
        }
        if let Some(root) = env_out_root {
            config.output_dir = PathBuf::from(root);
        }
        Ok(config)
    }

    /// Canonical serialized form used for hashing.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        stable_hash_hex(&self.canonical_toml())
    }
}

/// Applies one `dotted.key=value` override onto a TOML tree. The value is
/// parsed as TOML (so strings need quotes); bare words fall back to strings.
fn apply_override(root: &mut toml::Value, item: &str) -> Result<(), ConfigError> {
    let (key, raw_value) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(item.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(item.to_string()));
    }
    let raw_value = raw_value.trim();
    let parsed: toml::Value = match format!("x = {raw_value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap(),
        Err(_) => toml::Value::String(raw_value.to_string()),
    };

    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(item.to_string()))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::BadOverride(item.to_string()))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// FNV-1a 64-bit over the canonical text, hex-encoded. Stable across runs
/// and platforms; used for artifact lineage, not security.
pub fn stable_hash_hex(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_a_file() {
        let config = PipelineConfig::resolve(None, &[], None).unwrap();
        assert_eq!(config.gen.count, 20_000);
        assert_eq!(config.output_dir, PathBuf::from("runs"));
    }

    #[test]
    fn overrides_apply_in_order() {
        let config = PipelineConfig::resolve(
            None,
            &[
                "gen.count=100".into(),
                "gen.seed=9".into(),
                "gen.count=200".into(),
                "train.learning_rate=0.01".into(),
                "isocenter.region=\"thorax\"".into(),
            ],
            None,
        )
        .unwrap();
        assert_eq!(config.gen.count, 200);
        assert_eq!(config.gen.seed, 9);
        assert_eq!(config.train.learning_rate, 0.01);
        assert_eq!(config.isocenter.region, "thorax");
    }

    #[test]
    fn env_out_root_wins() {
        let config =
            PipelineConfig::resolve(None, &["output_dir=\"elsewhere\"".into()], Some("/tmp/o"))
                .unwrap();
        assert_eq!(config.output_dir, PathBuf::from("/tmp/o"));
    }

    #[test]
    fn file_plus_override_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, "[gen]\ncount = 50\nseed = 3\n").unwrap();
        let config =
            PipelineConfig::resolve(Some(&path), &["gen.beta_std=0.5".into()], None).unwrap();
        assert_eq!(config.gen.count, 50);
        assert_eq!(config.gen.seed, 3);
        assert_eq!(config.gen.beta_std, 0.5);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = PipelineConfig::resolve(None, &[], None).unwrap();
        let b = PipelineConfig::resolve(None, &[], None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig::resolve(None, &["gen.seed=1234".into()], None).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn malformed_override_is_rejected() {
        assert!(matches!(
            PipelineConfig::resolve(None, &["gen.count".into()], None),
            Err(ConfigError::BadOverride(_))
        ));
    }
}
