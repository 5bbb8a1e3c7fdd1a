//! Train, inference and retrain pipelines as orchestrator DAGs.
//!
//! Each call builds a run-local registry whose payloads share state through
//! slots, runs the DAG on the given pool and journal, and collects the
//! result. A failed task fails the call with the task's error.

use std::sync::{Arc, Mutex};

use logfuse_core::bundle::{BundleConfig, RetrainConfig};
use logfuse_core::embed::TokenEmbedder;
use logfuse_core::feedback::{build_finetune_set, FeedbackEntry, FinetuneConfig};
use logfuse_core::fusion::compute_metrics;
use logfuse_core::nn::BinaryModel;
use logfuse_core::{DrainConfig, FeatureBundle, FusedPrediction, MetricReport, ModelBundle, ParsedEvent};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{map_partitions, run, Journal, Registry, RunOptions, TaskContext, TaskDag, TaskSpec, WorkerPool};
use crate::parse::{parse_batch, parse_batch_from, Quarantined, RawLogLine};
use crate::profile::HeaderProfile;

pub const TRAIN_DAG: &str = "train";
pub const INFER_DAG: &str = "infer";
pub const RETRAIN_DAG: &str = "retrain";

/// Hand-off between two tasks of one run.
struct Slot<T>(Arc<Mutex<Option<T>>>);

impl<T> Clone for Slot<T> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<T: Clone> Slot<T> {
    fn new() -> Self {
        Self(Arc::new(Mutex::new(None)))
    }

    fn put(&self, value: T) {
        *self.0.lock().expect("slot lock") = Some(value);
    }

    fn get(&self, what: &str) -> std::result::Result<T, String> {
        self.0.lock().expect("slot lock").clone().ok_or_else(|| format!("{what} is not available"))
    }

    fn take(self) -> Option<T> {
        self.0.lock().expect("slot lock").take()
    }
}

fn execute(dag: &TaskDag, registry: &Registry, pool: &WorkerPool, journal: &mut Journal) -> Result<String> {
    let report = run(dag, registry, pool, journal, &RunOptions::default())?
        .report()
        .expect("no halt was requested");
    if let Some((task, message)) = report.first_failure() {
        return Err(Error::TaskFailed {
            task: task.to_string(),
            message: message.to_string(),
        });
    }
    Ok(report.run_id)
}

fn train_dag() -> TaskDag {
    TaskDag::chain(TRAIN_DAG, &[("parse", "parse"), ("split", "split"), ("train", "train"), ("evaluate", "evaluate")]).expect("static DAG")
}

fn infer_dag() -> TaskDag {
    let mut spec = TaskDag::chain(INFER_DAG, &[("parse", "parse"), ("featurize", "featurize")]).expect("static DAG").spec().clone();
    spec.tasks.extend(["mlp", "gcn", "fuse"].map(|t| TaskSpec::new(t, t)));
    for (a, b) in [("featurize", "mlp"), ("featurize", "gcn"), ("mlp", "fuse"), ("gcn", "fuse")] {
        spec.edges.push((a.into(), b.into()));
    }
    TaskDag::new(spec).expect("static DAG")
}

fn retrain_dag() -> TaskDag {
    TaskDag::chain(RETRAIN_DAG, &[("build_finetune", "build_finetune"), ("retrain", "retrain"), ("validate", "validate")]).expect("static DAG")
}

/// Fused predictions for a featurized set, in order.
pub fn score_all(bundle: &ModelBundle, samples: &[FeatureBundle]) -> Result<Vec<FusedPrediction>> {
    samples.iter().map(|s| Ok(bundle.score(s)?)).collect()
}

/// Fused metrics over labeled samples; unlabeled ones are ignored.
pub fn evaluate(bundle: &ModelBundle, samples: &[FeatureBundle]) -> Result<MetricReport> {
    let labeled: Vec<&FeatureBundle> = samples.iter().filter(|s| s.label.is_some()).collect();
    let predictions = labeled.iter().map(|s| Ok(bundle.score(s)?.y_hat)).collect::<Result<Vec<u8>>>()?;
    let labels: Vec<u8> = labeled.iter().filter_map(|s| s.label).collect();
    Ok(compute_metrics(&predictions, &labels)?)
}

#[derive(Clone, Debug)]
pub struct TrainRequest {
    pub lines: Vec<RawLogLine>,
    pub profile: HeaderProfile,
    pub drain: DrainConfig,
    pub bundle: BundleConfig,
    pub embedding_dim: usize,
    pub validation_split: f64,
    pub partitions: usize,
    pub created_at_ms: i64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub run_id: String,
    pub bundle: ModelBundle,
    pub training_set: Vec<FeatureBundle>,
    pub validation_set: Vec<FeatureBundle>,
    /// `None` when nothing was held out.
    pub validation: Option<MetricReport>,
    pub quarantine: Vec<Quarantined>,
}

/// parse, split, train, evaluate. The split is a seeded shuffle of the
/// labeled events; unlabeled events only feed the template tree.
pub fn train(req: TrainRequest, pool: &WorkerPool, journal: &mut Journal) -> Result<TrainOutput> {
    let req = Arc::new(req);
    let parsed = Slot::<(Vec<ParsedEvent>, logfuse_core::TemplateTree, Vec<Quarantined>)>::new();
    let split = Slot::<(Vec<ParsedEvent>, Vec<ParsedEvent>)>::new();
    let trained = Slot::<(ModelBundle, Vec<FeatureBundle>)>::new();
    let validated = Slot::<(Vec<FeatureBundle>, Option<MetricReport>)>::new();

    let mut registry = Registry::new();
    {
        let (req, parsed) = (Arc::clone(&req), parsed.clone());
        registry.register("parse", move |_: &TaskContext| {
            let out = parse_batch(&req.lines, req.partitions, &req.profile, &req.drain).map_err(|e| e.to_string())?;
            parsed.put((out.events, out.tree, out.quarantine));
            Ok(())
        });
    }
    {
        let (req, parsed, split) = (Arc::clone(&req), parsed.clone(), split.clone());
        registry.register("split", move |_: &TaskContext| {
            let (events, _, _) = parsed.get("parse output")?;
            let mut labeled: Vec<ParsedEvent> = events.into_iter().filter(|e| e.label.is_some()).collect();
            if labeled.is_empty() {
                return Err("no labeled lines to train on".into());
            }
            labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(req.bundle.model_seed));
            let n_val = (labeled.len() as f64 * req.validation_split).round() as usize;
            let validation = labeled.split_off(labeled.len() - n_val.min(labeled.len() - 1));
            split.put((labeled, validation));
            Ok(())
        });
    }
    {
        let (req, parsed, split, trained) = (Arc::clone(&req), parsed.clone(), split.clone(), trained.clone());
        registry.register("train", move |_: &TaskContext| {
            let (_, tree, _) = parsed.get("parse output")?;
            let (train_events, _) = split.get("split")?;
            let out = ModelBundle::train(
                &train_events,
                tree,
                req.profile.preprocessor().clone(),
                TokenEmbedder::new(req.embedding_dim),
                &req.bundle,
                req.created_at_ms,
            )
            .map_err(|e| e.to_string())?;
            log::info!(
                "trained: mlp loss {:?}, gcn loss {:?}",
                out.mlp_report.loss_history.last(),
                out.gcn_report.loss_history.last()
            );
            trained.put((out.bundle, out.training_set));
            Ok(())
        });
    }
    {
        let (split, trained, validated) = (split.clone(), trained.clone(), validated.clone());
        registry.register("evaluate", move |_: &TaskContext| {
            let (_, val_events) = split.get("split")?;
            let (bundle, _) = trained.get("trained bundle")?;
            let set = val_events.iter().map(|e| bundle.featurize(e)).collect::<logfuse_core::Result<Vec<_>>>().map_err(|e| e.to_string())?;
            let metrics = if set.is_empty() { None } else { Some(evaluate(&bundle, &set).map_err(|e| e.to_string())?) };
            validated.put((set, metrics));
            Ok(())
        });
    }

    let run_id = execute(&train_dag(), &registry, pool, journal)?;
    let (_, _, quarantine) = parsed.take().expect("parse succeeded");
    let (bundle, training_set) = trained.take().expect("train succeeded");
    let (validation_set, validation) = validated.take().expect("evaluate succeeded");
    Ok(TrainOutput {
        run_id,
        bundle,
        training_set,
        validation_set,
        validation,
        quarantine,
    })
}

/// One scored record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub event: ParsedEvent,
    /// Anomaly probabilities of the two models.
    pub mlp: f64,
    pub gcn: f64,
    pub fused: FusedPrediction,
}

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub run_id: String,
    pub scored: Vec<Scored>,
    pub quarantine: Vec<Quarantined>,
}

/// parse, featurize, then both models side by side, then fuse. Parsing
/// extends a copy of the bundle's tree; lines that open new templates get
/// ids the encoders have not seen.
pub fn infer(
    bundle: Arc<ModelBundle>,
    lines: Arc<Vec<RawLogLine>>,
    profile: &HeaderProfile,
    partitions: usize,
    pool: &WorkerPool,
    journal: &mut Journal,
) -> Result<InferOutput> {
    let parsed = Slot::<(Arc<Vec<ParsedEvent>>, Vec<Quarantined>)>::new();
    let features = Slot::<Arc<Vec<FeatureBundle>>>::new();
    let mlp = Slot::<Vec<f64>>::new();
    let gcn = Slot::<Vec<f64>>::new();
    let fused = Slot::<Vec<FusedPrediction>>::new();

    let mut registry = Registry::new();
    {
        let (bundle, lines, parsed, profile) = (Arc::clone(&bundle), Arc::clone(&lines), parsed.clone(), profile.clone());
        registry.register("parse", move |_: &TaskContext| {
            let out = parse_batch_from(&bundle.tree, &lines, partitions, &profile).map_err(|e| e.to_string())?;
            parsed.put((Arc::new(out.events), out.quarantine));
            Ok(())
        });
    }
    {
        let (bundle, parsed, features) = (Arc::clone(&bundle), parsed.clone(), features.clone());
        registry.register("featurize", move |_: &TaskContext| {
            let (events, _) = parsed.get("parse output")?;
            let set = map_partitions(&events, partitions, |_, part| part.iter().map(|e| bundle.featurize(e)).collect::<logfuse_core::Result<Vec<_>>>())
                .map_err(|e| e.to_string())?;
            features.put(Arc::new(set));
            Ok(())
        });
    }
    for (name, slot) in [("mlp", mlp.clone()), ("gcn", gcn.clone())] {
        let (bundle, features) = (Arc::clone(&bundle), features.clone());
        registry.register(name, move |_: &TaskContext| {
            let set = features.get("features")?;
            let probs = map_partitions(&set, partitions, |_, part| {
                part.iter()
                    .map(|s| if name == "mlp" { bundle.mlp.predict(s) } else { bundle.gcn.predict(s) })
                    .collect::<logfuse_core::Result<Vec<_>>>()
            })
            .map_err(|e| e.to_string())?;
            slot.put(probs);
            Ok(())
        });
    }
    {
        let (bundle, mlp, gcn, fused) = (Arc::clone(&bundle), mlp.clone(), gcn.clone(), fused.clone());
        registry.register("fuse", move |_: &TaskContext| {
            let weights = bundle.fusion_weights().map_err(|e| e.to_string())?;
            let out = mlp
                .get("mlp output")?
                .into_iter()
                .zip(gcn.get("gcn output")?)
                .map(|(a, b)| FusedPrediction::from_anomaly_probs(a, b, weights))
                .collect::<logfuse_core::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            fused.put(out);
            Ok(())
        });
    }

    let run_id = execute(&infer_dag(), &registry, pool, journal)?;
    let (events, quarantine) = parsed.take().expect("parse succeeded");
    let events = Arc::try_unwrap(events).unwrap_or_else(|a| (*a).clone());
    let scored = events
        .into_iter()
        .zip(mlp.take().expect("mlp succeeded"))
        .zip(gcn.take().expect("gcn succeeded"))
        .zip(fused.take().expect("fuse succeeded"))
        .map(|(((event, mlp), gcn), fused)| Scored { event, mlp, gcn, fused })
        .collect();
    Ok(InferOutput { run_id, scored, quarantine })
}

#[derive(Clone, Debug)]
pub struct RetrainRequest {
    pub bundle: Arc<ModelBundle>,
    pub feedback: Vec<FeedbackEntry>,
    /// Only feedback newer than this counts.
    pub since_ms: Option<i64>,
    pub training: Arc<Vec<FeatureBundle>>,
    pub validation: Arc<Vec<FeatureBundle>>,
    pub finetune: FinetuneConfig,
    pub retrain: RetrainConfig,
    pub created_at_ms: i64,
}

#[derive(Clone, Debug)]
pub struct RetrainOutput {
    pub run_id: String,
    pub bundle: ModelBundle,
    pub corrected: usize,
    pub replayed: usize,
    pub validation: Option<MetricReport>,
}

/// build_finetune, retrain, validate. `Ok(None)` when the feedback holds no
/// false-positive corrections; nothing is trained then.
pub fn retrain(req: RetrainRequest, pool: &WorkerPool, journal: &mut Journal) -> Result<Option<RetrainOutput>> {
    let set = build_finetune_set(&req.feedback, req.since_ms, &req.training, &req.finetune);
    if set.is_empty() {
        return Ok(None);
    }
    let req = Arc::new(req);
    let finetune = Slot::<(Vec<FeatureBundle>, usize, usize)>::new();
    let retrained = Slot::<ModelBundle>::new();
    let validation = Slot::<Option<MetricReport>>::new();

    let mut registry = Registry::new();
    {
        let finetune = finetune.clone();
        registry.register("build_finetune", move |_: &TaskContext| {
            finetune.put((set.all(), set.corrected.len(), set.replay.len()));
            Ok(())
        });
    }
    {
        let (req, finetune, retrained) = (Arc::clone(&req), finetune.clone(), retrained.clone());
        registry.register("retrain", move |ctx: &TaskContext| {
            let (samples, _, _) = finetune.get("fine-tune set")?;
            let tag = format!("feedback run {}", ctx.run_id);
            let out = req.bundle.retrain(&samples, &req.retrain, req.created_at_ms, &tag).map_err(|e| e.to_string())?;
            retrained.put(out.bundle);
            Ok(())
        });
    }
    {
        let (req, retrained, validation) = (Arc::clone(&req), retrained.clone(), validation.clone());
        registry.register("validate", move |_: &TaskContext| {
            let bundle = retrained.get("retrained bundle")?;
            bundle.validate().map_err(|e| e.to_string())?;
            let metrics = if req.validation.is_empty() { None } else { Some(evaluate(&bundle, &req.validation).map_err(|e| e.to_string())?) };
            validation.put(metrics);
            Ok(())
        });
    }

    let run_id = execute(&retrain_dag(), &registry, pool, journal)?;
    let (_, corrected, replayed) = finetune.take().expect("build_finetune succeeded");
    Ok(Some(RetrainOutput {
        run_id,
        bundle: retrained.take().expect("retrain succeeded"),
        corrected,
        replayed,
        validation: validation.take().expect("validate succeeded"),
    }))
}
