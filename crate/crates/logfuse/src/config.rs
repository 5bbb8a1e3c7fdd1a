//! Service configuration, read from a JSON file. Every field has a default.

use std::path::{Path, PathBuf};

use logfuse_core::bundle::{BundleConfig, RetrainConfig};
use logfuse_core::ewc::EwcConfig;
use logfuse_core::feedback::FinetuneConfig;
use logfuse_core::nn::TrainConfig;
use logfuse_core::DrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{HeaderProfile, ProfileSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Builtin(String),
    Custom(ProfileSpec),
}

impl ProfileChoice {
    pub fn resolve(&self) -> Result<HeaderProfile> {
        match self {
            ProfileChoice::Builtin(name) => HeaderProfile::builtin(name),
            ProfileChoice::Custom(spec) => HeaderProfile::new(spec.clone()),
        }
    }
}

/// Where alerts go besides the alert store.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SinkConfig {
    #[default]
    None,
    /// Appends alerts as JSON Lines.
    File { path: PathBuf },
    /// POSTs each batch of alerts as a JSON array.
    Webhook { url: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub profile: ProfileChoice,
    pub drain: DrainConfig,
    /// Column threshold τ, forest and initial training settings.
    pub bundle: BundleConfig,
    /// Fine-tuning settings, including λ.
    pub retrain: RetrainConfig,
    pub finetune: FinetuneConfig,
    pub embedding_dim: usize,
    pub workers: usize,
    pub partitions: usize,
    /// Share of labeled lines held out for validation when training.
    pub validation_split: f64,
    pub sink: SinkConfig,
    /// Periodic retraining when set.
    pub retrain_every_seconds: Option<u64>,
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        // feedback sets are small: one full batch per epoch, and batch-norm
        // statistics stay as the initial training left them. A strong anchor
        // keeps templates nobody flagged from being dragged along.
        let finetune_train = TrainConfig {
            epochs: 60,
            freeze_batch_norm: true,
            ..TrainConfig::default()
        };
        Self {
            profile: ProfileChoice::Builtin("hdfs".into()),
            drain: DrainConfig::default(),
            bundle: BundleConfig::default(),
            retrain: RetrainConfig {
                mlp: finetune_train.clone(),
                gcn: finetune_train,
                ewc: EwcConfig {
                    lambda: 1000.0,
                    ..EwcConfig::default()
                },
            },
            finetune: FinetuneConfig::default(),
            embedding_dim: logfuse_core::embed::DEFAULT_DIM,
            workers: 2,
            partitions: 1,
            validation_split: 0.2,
            sink: SinkConfig::None,
            retrain_every_seconds: None,
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let config: Self = serde_json::from_str(&text).map_err(Error::json(format!("config {}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.resolve()?;
        self.drain.validate()?;
        self.bundle.mlp_train.validate()?;
        self.bundle.gcn_train.validate()?;
        self.retrain.mlp.validate()?;
        self.retrain.gcn.validate()?;
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::BadRequest(format!("validation_split {} must be in [0, 1)", self.validation_split)));
        }
        if self.partitions == 0 || self.workers == 0 || self.embedding_dim == 0 {
            return Err(Error::BadRequest("partitions, workers and embedding_dim must be positive".into()));
        }
        if !(self.retrain.ewc.lambda >= 0.0 && self.retrain.ewc.lambda.is_finite()) {
            return Err(Error::BadRequest(format!("lambda {} must be finite and non-negative", self.retrain.ewc.lambda)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let c: ServiceConfig = serde_json::from_str(r#"{"workers": 4, "retrain": {"ewc": {"lambda": 3.0}}, "sink": {"kind": "file", "path": "a.jsonl"}}"#).unwrap();
        assert_eq!(c.workers, 4);
        assert_eq!(c.retrain.ewc.lambda, 3.0);
        assert_eq!(c.drain, DrainConfig::default());
        assert_eq!(c.sink, SinkConfig::File { path: "a.jsonl".into() });
        c.validate().unwrap();
    }

    #[test]
    fn custom_profile_and_bad_values() {
        let mut c: ServiceConfig = serde_json::from_str(r#"{"profile": "bgl"}"#).unwrap();
        assert_eq!(c.profile.resolve().unwrap().name(), "bgl");
        c.validation_split = 1.0;
        assert!(c.validate().is_err());
        let c: ServiceConfig = serde_json::from_str(r#"{"profile": "nope"}"#).unwrap();
        assert!(c.validate().is_err());
    }
}
