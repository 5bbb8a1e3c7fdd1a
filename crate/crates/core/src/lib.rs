//! Log template mining, feature engineering and dual-model anomaly detection
//! with elastic weight consolidation.
//!
//! This crate is `no_std` (it needs `alloc`) and carries no IO. File formats,
//! the task orchestrator, the HTTP service and the CLI live in the `logfuse`
//! crate.
//!
//! The pieces, bottom-up:
//!
//! - [`drain`] and [`preprocess`]: fixed-depth template tree and token masking.
//! - [`forest`] and [`features`]: entropy random forest for column importance,
//!   ordinal encoders, parameter normalization, per-event star graphs.
//! - [`embed`]: deterministic token embeddings.
//! - [`nn`]: MLP with batch normalization and a graph convolutional network,
//!   both trained with hand-written backpropagation.
//! - [`fusion`]: importance-weighted decision fusion and evaluation metrics.
//! - [`ewc`] and [`feedback`]: Fisher estimation, EWC retraining and the
//!   analyst feedback to fine-tune set path.
//! - [`bundle`]: the versioned model bundle tying it together.
#![no_std]
#![warn(rust_2018_idioms)]

extern crate alloc;

pub mod bundle;
pub mod drain;
pub mod embed;
pub mod error;
pub mod event;
pub mod ewc;
pub mod features;
pub mod feedback;
pub mod forest;
pub mod fusion;
pub mod graph;
pub mod nn;
pub mod preprocess;

mod math;

pub use bundle::ModelBundle;
pub use drain::{DrainConfig, LogTemplate, TemplateId, TemplateTree, WILDCARD};
pub use error::{Error, Result};
pub use event::{Label, ParsedEvent};
pub use features::{Column, FeatureBundle, Featurizer};
pub use fusion::{FusedPrediction, FusionWeights, MetricReport};
pub use graph::EventGraph;
