//! The versioned unit of deployment: template tree, featurizer, both
//! models, their EWC anchors and the fusion weights.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::drain::TemplateTree;
use crate::embed::TokenEmbedder;
use crate::error::{Error, Result};
use crate::event::ParsedEvent;
use crate::ewc::{estimate_fisher, retrain_ewc, EwcAnchor, EwcConfig};
use crate::features::{train_importance, FeatureBundle, FeatureEncoder, Featurizer, ImportanceMap, ParamNormalizer, WeightDictionary};
use crate::forest::ForestConfig;
use crate::fusion::{FusedPrediction, FusionWeights};
use crate::nn::train::train;
use crate::nn::{BinaryModel, Gcn, Mlp, TrainConfig, TrainReport};
use crate::preprocess::Preprocessor;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeHeader {
    pub x_dim: usize,
    pub embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub version: u64,
    pub created_at_ms: i64,
    pub shape: ShapeHeader,
    pub preprocessor: Preprocessor,
    pub tree: TemplateTree,
    pub featurizer: Featurizer,
    pub importance: ImportanceMap,
    pub weights: WeightDictionary,
    pub mlp: Mlp,
    pub gcn: Gcn,
    pub mlp_anchor: Option<EwcAnchor>,
    pub gcn_anchor: Option<EwcAnchor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleConfig {
    /// Importance threshold τ for column selection.
    pub threshold: f64,
    pub forest: ForestConfig,
    pub normalizer: ParamNormalizer,
    pub mlp_train: TrainConfig,
    pub gcn_train: TrainConfig,
    pub ewc: EwcConfig,
    pub model_seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            forest: ForestConfig::default(),
            normalizer: ParamNormalizer::default(),
            mlp_train: TrainConfig::default(),
            gcn_train: TrainConfig::default(),
            ewc: EwcConfig::default(),
            model_seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub bundle: ModelBundle,
    /// Featurized training events, in input order.
    pub training_set: Vec<FeatureBundle>,
    pub mlp_report: TrainReport,
    pub gcn_report: TrainReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub mlp: TrainConfig,
    pub gcn: TrainConfig,
    pub ewc: EwcConfig,
}

#[derive(Clone, Debug)]
pub struct Retrained {
    pub bundle: ModelBundle,
    pub mlp_report: TrainReport,
    pub gcn_report: TrainReport,
}

impl ModelBundle {
    /// Fits importance, encoders and both models on labeled events mined by
    /// `tree`, and anchors both models at the result (version 1).
    pub fn train(
        events: &[ParsedEvent],
        tree: TemplateTree,
        preprocessor: Preprocessor,
        embedder: TokenEmbedder,
        config: &BundleConfig,
        created_at_ms: i64,
    ) -> Result<Trained> {
        let labeled: Vec<ParsedEvent> = events.iter().filter(|e| e.label.is_some()).cloned().collect();
        let importance = train_importance(&labeled, &config.forest)?;
        let weights = WeightDictionary::build(&importance, config.threshold)?;
        let columns: Vec<_> = weights.columns().collect();
        let featurizer = Featurizer {
            encoder: FeatureEncoder::fit(&labeled, &columns),
            normalizer: config.normalizer.clone(),
            embedder,
        };
        let training_set = labeled.iter().map(|e| featurizer.bundle(e)).collect::<Result<Vec<_>>>()?;

        let shape = ShapeHeader {
            x_dim: featurizer.encoder.x_dim(),
            embedding_dim: featurizer.embedder.dim(),
        };
        let (mlp, mlp_report) = train(&Mlp::new(shape.x_dim, config.model_seed), &training_set, &config.mlp_train)?;
        let (gcn, gcn_report) = train(&Gcn::new(shape.embedding_dim, config.model_seed), &training_set, &config.gcn_train)?;
        let mlp_anchor = anchor_for(&mlp, &training_set, &config.ewc, config.mlp_train.seed, "initial")?;
        let gcn_anchor = anchor_for(&gcn, &training_set, &config.ewc, config.gcn_train.seed, "initial")?;

        let bundle = ModelBundle {
            schema_version: SCHEMA_VERSION,
            version: 1,
            created_at_ms,
            shape,
            preprocessor,
            tree,
            featurizer,
            importance,
            weights,
            mlp,
            gcn,
            mlp_anchor: Some(mlp_anchor),
            gcn_anchor: Some(gcn_anchor),
        };
        Ok(Trained {
            bundle,
            training_set,
            mlp_report,
            gcn_report,
        })
    }

    pub fn fusion_weights(&self) -> Result<FusionWeights> {
        FusionWeights::relative_scores(&self.weights)
    }

    pub fn featurize(&self, event: &ParsedEvent) -> Result<FeatureBundle> {
        self.featurizer.bundle(event)
    }

    /// Anomaly probabilities of both models.
    pub fn model_outputs(&self, sample: &FeatureBundle) -> Result<(f64, f64)> {
        Ok((self.mlp.predict(sample)?, self.gcn.predict(sample)?))
    }

    pub fn score(&self, sample: &FeatureBundle) -> Result<FusedPrediction> {
        let (a, b) = self.model_outputs(sample)?;
        FusedPrediction::from_anomaly_probs(a, b, self.fusion_weights()?)
    }

    /// Structural checks, including the presence of both EWC anchors.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(alloc::format!(
                "bundle schema version {} is not {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.shape.x_dim != self.mlp.x_dim() || self.shape.x_dim != self.featurizer.encoder.x_dim() {
            return Err(Error::Shape {
                expected: self.shape.x_dim,
                actual: self.mlp.x_dim(),
            });
        }
        if self.shape.embedding_dim != self.gcn.dim() || self.shape.embedding_dim != self.featurizer.embedder.dim() {
            return Err(Error::Shape {
                expected: self.shape.embedding_dim,
                actual: self.gcn.dim(),
            });
        }
        self.mlp.validate()?;
        self.gcn.validate()?;
        self.fusion_weights()?;
        let (Some(ma), Some(ga)) = (&self.mlp_anchor, &self.gcn_anchor) else {
            return Err(Error::MissingAnchor);
        };
        ma.validate(self.mlp.params().len())?;
        ga.validate(self.gcn.params().len())?;
        Ok(())
    }

    /// EWC fine-tuning of both models. Returns the next version; `self` is
    /// untouched, also on failure.
    pub fn retrain(&self, finetune: &[FeatureBundle], config: &RetrainConfig, created_at_ms: i64, task_tag: &str) -> Result<Retrained> {
        let (Some(ma), Some(ga)) = (&self.mlp_anchor, &self.gcn_anchor) else {
            return Err(Error::MissingAnchor);
        };
        let lambda = Some(config.ewc.lambda);
        let m = retrain_ewc(&self.mlp, ma, finetune, &config.mlp, lambda, config.ewc.fisher_samples, task_tag)?;
        let g = retrain_ewc(&self.gcn, ga, finetune, &config.gcn, lambda, config.ewc.fisher_samples, task_tag)?;
        let mut bundle = self.clone();
        bundle.version = self.version + 1;
        bundle.created_at_ms = created_at_ms;
        bundle.mlp = m.model;
        bundle.gcn = g.model;
        bundle.mlp_anchor = Some(m.anchor);
        bundle.gcn_anchor = Some(g.anchor);
        Ok(Retrained {
            bundle,
            mlp_report: m.report,
            gcn_report: g.report,
        })
    }
}

fn anchor_for<M: BinaryModel>(model: &M, data: &[FeatureBundle], ewc: &EwcConfig, seed: u64, tag: &str) -> Result<EwcAnchor> {
    let fisher = estimate_fisher(model, data, ewc.fisher_samples, seed)?;
    EwcAnchor::new(model.params().to_vec(), fisher, ewc.lambda, String::from(tag))
}
