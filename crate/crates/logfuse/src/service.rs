//! The detection service: durable stores under a data directory and the
//! operations behind the HTTP API and the CLI.
//!
//! Layout of the data directory:
//!
//! ```text
//! batches.jsonl            ingest batches (commit records)
//! batches/<id>.jsonl       raw lines of a batch
//! quarantine/<id>.jsonl    rejected lines of a batch, with reasons
//! alerts.jsonl             alert creations and verdicts
//! feedback.jsonl           analyst verdicts with model inputs
//! models.jsonl             model creations and activations
//! models/v<N>.json         bundles
//! replay/v<N>.jsonl        training and validation sets of the lineage rooted at N
//! retrain.jsonl            retrain reports
//! runs/<dag>.jsonl         orchestrator journals
//! ```
//!
//! Every store is append-only; the in-memory indexes are rebuilt from them
//! on open. Files a commit record points to are written first.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use logfuse_core::feedback::{latest_per_alert, FeedbackEntry, Verdict};
use logfuse_core::{FeatureBundle, MetricReport, ModelBundle, ParsedEvent};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::{Error, Result};
use crate::io::{load_bundle, parse_raw_lines, read_jsonl, save_bundle, write_jsonl};
use crate::orchestrator::{Journal, WorkerPool};
use crate::parse::{Quarantined, RawLogLine};
use crate::pipeline::{self, RetrainRequest, TrainRequest, INFER_DAG, RETRAIN_DAG, TRAIN_DAG};
use crate::profile::HeaderProfile;
use crate::sink::{self, AlertSink, SinkEvent};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 100;

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertStatus {
    Open,
    FalsePositive,
    Confirmed,
}

impl From<Verdict> for AlertStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::FalsePositive => AlertStatus::FalsePositive,
            Verdict::Confirmed => AlertStatus::Confirmed,
        }
    }
}

/// A record the fused decision called anomalous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub alert_id: String,
    pub batch_id: String,
    #[serde(flatten)]
    pub event: ParsedEvent,
    /// Normal-class probabilities of the MLP and the GCN.
    pub p1: f64,
    pub p2: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub y_hat: u8,
    pub s0: f64,
    pub s1: f64,
    pub model_version: u64,
    pub created_at: i64,
    pub status: AlertStatus,
    #[serde(default)]
    pub analyst: Option<String>,
    #[serde(default)]
    pub closed_at: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestBatch {
    pub batch_id: String,
    pub source: String,
    /// Non-blank input lines, accepted or not.
    pub raw_count: usize,
    pub quarantine_count: usize,
    pub path: String,
    pub created_at: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub version: u64,
    /// Version of the trained model this one descends from.
    pub lineage: u64,
    pub created_at_ms: i64,
    pub origin: ModelOrigin,
    pub path: String,
    pub validation: Option<MetricReport>,
    /// Feedback entries before this index were consumed by this model or
    /// its ancestors.
    pub feedback_cursor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOrigin {
    Train,
    Retrain,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum AlertLog {
    Created(AlertRecord),
    Closed {
        alert_id: String,
        status: AlertStatus,
        analyst: String,
        at: i64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelLog {
    Created(ModelRecord),
    Activated { version: u64, at: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainOutcome {
    Skipped,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub status: RetrainOutcome,
    pub message: String,
    pub run_id: Option<String>,
    pub old_version: Option<u64>,
    pub new_version: Option<u64>,
    pub corrected: usize,
    pub replayed: usize,
    /// Fused metrics on the lineage's validation slice.
    pub before: Option<MetricReport>,
    pub after: Option<MetricReport>,
    pub started_at_ms: i64,
    pub finished_at_ms: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainStatus {
    pub running: bool,
    pub pending_feedback: usize,
    pub last: Option<RetrainReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsView {
    pub active: Option<u64>,
    pub versions: Vec<ModelRecord>,
    pub pending_feedback: usize,
    pub last_retrain: Option<RetrainReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertFilter {
    pub status: Option<AlertStatus>,
    /// Only alerts created at or after this time (ms).
    pub since: Option<i64>,
    pub batch_id: Option<String>,
    /// 1-based.
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub alerts: Vec<AlertRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub batch_id: String,
    pub run_id: String,
    pub model_version: u64,
    pub records: usize,
    /// Lines that reached the parser but could not be parsed.
    pub quarantined: usize,
    pub alerts: Vec<AlertRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub run_id: String,
    pub version: u64,
    pub templates: usize,
    pub training_records: usize,
    pub validation_records: usize,
    pub validation: Option<MetricReport>,
    pub quarantined: usize,
}

/// Append-only JSON Lines file. A torn last line (no newline) is cut off
/// when opened.
struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    fn open<T: DeserializeOwned>(path: PathBuf) -> Result<(Self, Vec<T>)> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(Error::io(&path))?;
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        if keep < text.len() {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(keep as u64).map_err(Error::io(&path))?;
            file.seek(SeekFrom::End(0)).map_err(Error::io(&path))?;
        }
        let items = text[..keep]
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(Error::json(format!("{} line {}", path.display(), n + 1))))
            .collect::<Result<Vec<T>>>()?;
        Ok((Self { path, file }, items))
    }

    fn append<T: Serialize>(&mut self, items: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).map_err(Error::json("store record"))?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(Error::io(&self.path))?;
        self.file.sync_data().map_err(Error::io(&self.path))
    }
}

/// Training and validation sets kept for replay and validation.
#[derive(Clone, Default)]
struct Replay {
    training: Arc<Vec<FeatureBundle>>,
    validation: Arc<Vec<FeatureBundle>>,
}

struct State {
    batches: Vec<IngestBatch>,
    alerts: Vec<AlertRecord>,
    alert_index: HashMap<String, usize>,
    feedback: Vec<FeedbackEntry>,
    models: Vec<ModelRecord>,
    active: Option<(ModelRecord, Arc<ModelBundle>)>,
    replay: HashMap<u64, Replay>,
    retrains: Vec<RetrainReport>,
    batch_log: AppendLog,
    alert_log: AppendLog,
    feedback_log: AppendLog,
    model_log: AppendLog,
    retrain_log: AppendLog,
}

impl State {
    fn model(&self, version: u64) -> Option<&ModelRecord> {
        self.models.iter().find(|m| m.version == version)
    }

    fn next_version(&self) -> u64 {
        self.models.iter().map(|m| m.version).max().unwrap_or(0) + 1
    }

    fn cursor(&self) -> usize {
        self.active.as_ref().map_or(0, |(m, _)| m.feedback_cursor)
    }

    fn pending_feedback(&self) -> usize {
        latest_per_alert(&self.feedback[self.cursor()..])
            .values()
            .filter(|e| e.verdict == Verdict::FalsePositive)
            .count()
    }
}

pub struct Service {
    dir: PathBuf,
    config: ServiceConfig,
    profile: HeaderProfile,
    pool: WorkerPool,
    state: Mutex<State>,
    retrain_lock: Mutex<()>,
    train_runs: Mutex<Journal>,
    infer_runs: Mutex<Journal>,
    retrain_runs: Mutex<Journal>,
    sink: Option<Box<dyn AlertSink>>,
}

impl Service {
    /// Opens (or creates) the stores under `dir` and rebuilds the indexes.
    pub fn open(dir: impl Into<PathBuf>, config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let dir = dir.into();
        for sub in ["batches", "quarantine", "models", "replay", "runs"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(Error::io(&p))?;
        }
        let (batch_log, batches) = AppendLog::open::<IngestBatch>(dir.join("batches.jsonl"))?;
        let (alert_log, alert_records) = AppendLog::open::<AlertLog>(dir.join("alerts.jsonl"))?;
        let (feedback_log, feedback) = AppendLog::open::<FeedbackEntry>(dir.join("feedback.jsonl"))?;
        let (model_log, model_records) = AppendLog::open::<ModelLog>(dir.join("models.jsonl"))?;
        let (retrain_log, retrains) = AppendLog::open::<RetrainReport>(dir.join("retrain.jsonl"))?;

        let mut alerts: Vec<AlertRecord> = Vec::new();
        let mut alert_index = HashMap::new();
        for rec in alert_records {
            match rec {
                AlertLog::Created(a) => {
                    alert_index.insert(a.alert_id.clone(), alerts.len());
                    alerts.push(a);
                }
                AlertLog::Closed { alert_id, status, analyst, at } => {
                    if let Some(&i) = alert_index.get(&alert_id) {
                        alerts[i].status = status;
                        alerts[i].analyst = Some(analyst);
                        alerts[i].closed_at = Some(at);
                    }
                }
            }
        }
        let mut models = Vec::new();
        let mut active_version = None;
        for rec in model_records {
            match rec {
                ModelLog::Created(m) => models.push(m),
                ModelLog::Activated { version, .. } => active_version = Some(version),
            }
        }

        let mut state = State {
            batches,
            alerts,
            alert_index,
            feedback,
            models,
            active: None,
            replay: HashMap::new(),
            retrains,
            batch_log,
            alert_log,
            feedback_log,
            model_log,
            retrain_log,
        };
        if let Some(v) = active_version {
            let record = state.model(v).cloned().ok_or_else(|| Error::NotFound(format!("activated model v{v} has no record")))?;
            let bundle = load_bundle(dir.join(&record.path))?;
            let replay = load_replay(&dir, record.lineage)?;
            state.replay.insert(record.lineage, replay);
            state.active = Some((record, Arc::new(bundle)));
        }

        let runs = dir.join("runs");
        Ok(Self {
            profile: config.profile.resolve()?,
            pool: WorkerPool::new(config.workers),
            sink: sink::from_config(&config.sink),
            train_runs: Mutex::new(Journal::for_dag(&runs, TRAIN_DAG)?),
            infer_runs: Mutex::new(Journal::for_dag(&runs, INFER_DAG)?),
            retrain_runs: Mutex::new(Journal::for_dag(&runs, RETRAIN_DAG)?),
            state: Mutex::new(state),
            retrain_lock: Mutex::new(()),
            config,
            dir,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn forward(&self, event: &SinkEvent<'_>) {
        if let Some(sink) = &self.sink {
            if let Err(e) = sink.send(event) {
                log::warn!("{e}");
            }
        }
    }

    /// Stores a JSON Lines batch. The batch is committed only after its
    /// lines and quarantine are on disk.
    pub fn ingest(&self, body: &str, source: Option<&str>) -> Result<IngestBatch> {
        if body.trim().is_empty() {
            return Err(Error::BadRequest("empty body".into()));
        }
        let (lines, quarantine) = parse_raw_lines(body);
        let mut state = self.state();
        let batch_id = format!("b{:06}", state.batches.len() + 1);
        let path = format!("batches/{batch_id}.jsonl");
        write_jsonl(self.dir.join(&path), &lines)?;
        write_jsonl(self.dir.join(format!("quarantine/{batch_id}.jsonl")), &quarantine)?;
        let source = source
            .map(str::to_string)
            .or_else(|| lines.iter().map(|l| &l.source).find(|s| !s.is_empty()).cloned())
            .unwrap_or_default();
        let batch = IngestBatch {
            batch_id,
            source,
            raw_count: lines.len() + quarantine.len(),
            quarantine_count: quarantine.len(),
            path,
            created_at: now_ms(),
        };
        state.batch_log.append(std::slice::from_ref(&batch))?;
        state.batches.push(batch.clone());
        Ok(batch)
    }

    pub fn batches(&self) -> Vec<IngestBatch> {
        self.state().batches.clone()
    }

    pub fn batch_lines(&self, batch_id: &str) -> Result<Vec<RawLogLine>> {
        let path = self
            .state()
            .batches
            .iter()
            .find(|b| b.batch_id == batch_id)
            .map(|b| b.path.clone())
            .ok_or_else(|| Error::NotFound(format!("batch {batch_id}")))?;
        read_jsonl(self.dir.join(path))
    }

    pub fn quarantine(&self, batch_id: &str) -> Result<Vec<Quarantined>> {
        self.batch_lines(batch_id)?;
        read_jsonl(self.dir.join(format!("quarantine/{batch_id}.jsonl")))
    }

    /// Trains a new lineage from labeled lines and activates it.
    pub fn train(&self, lines: Vec<RawLogLine>) -> Result<TrainSummary> {
        if lines.is_empty() {
            return Err(Error::BadRequest("no lines to train on".into()));
        }
        let created_at_ms = now_ms();
        let req = TrainRequest {
            lines,
            profile: self.profile.clone(),
            drain: self.config.drain.clone(),
            bundle: self.config.bundle.clone(),
            embedding_dim: self.config.embedding_dim,
            validation_split: self.config.validation_split,
            partitions: self.config.partitions,
            created_at_ms,
        };
        let out = {
            let mut journal = self.train_runs.lock().unwrap_or_else(|p| p.into_inner());
            pipeline::train(req, &self.pool, &mut journal)?
        };
        let mut bundle = out.bundle;
        let mut state = self.state();
        let version = state.next_version();
        bundle.version = version;
        write_jsonl(self.dir.join(format!("replay/v{version}.train.jsonl")), &out.training_set)?;
        write_jsonl(self.dir.join(format!("replay/v{version}.validation.jsonl")), &out.validation_set)?;
        let record = ModelRecord {
            version,
            lineage: version,
            created_at_ms,
            origin: ModelOrigin::Train,
            path: format!("models/v{version}.json"),
            validation: out.validation,
            feedback_cursor: state.feedback.len(),
        };
        let summary = TrainSummary {
            run_id: out.run_id,
            version,
            templates: bundle.tree.len(),
            training_records: out.training_set.len(),
            validation_records: out.validation_set.len(),
            validation: out.validation,
            quarantined: out.quarantine.len(),
        };
        state.replay.insert(
            version,
            Replay {
                training: Arc::new(out.training_set),
                validation: Arc::new(out.validation_set),
            },
        );
        self.commit_model(&mut state, record, bundle)?;
        Ok(summary)
    }

    /// Writes the bundle, then the creation and activation records, then
    /// swaps the active model.
    fn commit_model(&self, state: &mut State, record: ModelRecord, bundle: ModelBundle) -> Result<()> {
        save_bundle(&bundle, self.dir.join(&record.path))?;
        let at = now_ms();
        state.model_log.append(&[
            ModelLog::Created(record.clone()),
            ModelLog::Activated {
                version: record.version,
                at,
            },
        ])?;
        state.models.push(record.clone());
        state.active = Some((record, Arc::new(bundle)));
        Ok(())
    }

    /// Makes an existing version the active one.
    pub fn activate(&self, version: u64) -> Result<ModelRecord> {
        let mut state = self.state();
        let record = state.model(version).cloned().ok_or_else(|| Error::NotFound(format!("model v{version}")))?;
        let bundle = load_bundle(self.dir.join(&record.path))?;
        if !state.replay.contains_key(&record.lineage) {
            let replay = load_replay(&self.dir, record.lineage)?;
            state.replay.insert(record.lineage, replay);
        }
        state.model_log.append(&[ModelLog::Activated { version, at: now_ms() }])?;
        state.active = Some((record.clone(), Arc::new(bundle)));
        Ok(record)
    }

    pub fn active_bundle(&self) -> Option<Arc<ModelBundle>> {
        self.state().active.as_ref().map(|(_, b)| Arc::clone(b))
    }

    fn bundle_for(&self, version: Option<u64>) -> Result<Arc<ModelBundle>> {
        let state = self.state();
        let (active_record, active) = state.active.as_ref().ok_or(Error::NoBundle)?;
        match version {
            None => Ok(Arc::clone(active)),
            Some(v) if v == active_record.version => Ok(Arc::clone(active)),
            Some(v) => {
                let record = state.model(v).ok_or_else(|| Error::NotFound(format!("model v{v}")))?;
                Ok(Arc::new(load_bundle(self.dir.join(&record.path))?))
            }
        }
    }

    /// Runs the inference DAG on a stored batch and records one alert per
    /// anomalous decision.
    pub fn infer(&self, batch_id: &str, version: Option<u64>) -> Result<InferReport> {
        let bundle = self.bundle_for(version)?;
        let lines = Arc::new(self.batch_lines(batch_id)?);
        let out = {
            let mut journal = self.infer_runs.lock().unwrap_or_else(|p| p.into_inner());
            pipeline::infer(Arc::clone(&bundle), lines, &self.profile, self.config.partitions, &self.pool, &mut journal)?
        };
        let weights = bundle.fusion_weights()?;
        let created_at = now_ms();
        let records = out.scored.len();
        let mut state = self.state();
        let mut seq = state.alerts.len();
        let alerts: Vec<AlertRecord> = out
            .scored
            .into_iter()
            .filter(|s| s.fused.y_hat == 1)
            .map(|s| {
                seq += 1;
                AlertRecord {
                    alert_id: format!("a{seq:07}"),
                    batch_id: batch_id.to_string(),
                    event: s.event,
                    p1: s.fused.p1,
                    p2: s.fused.p2,
                    f: s.fused.f,
                    y_hat: s.fused.y_hat,
                    s0: weights.s0,
                    s1: weights.s1,
                    model_version: bundle.version,
                    created_at,
                    status: AlertStatus::Open,
                    analyst: None,
                    closed_at: None,
                }
            })
            .collect();
        let log: Vec<AlertLog> = alerts.iter().cloned().map(AlertLog::Created).collect();
        state.alert_log.append(&log)?;
        for a in &alerts {
            let i = state.alerts.len();
            state.alert_index.insert(a.alert_id.clone(), i);
            state.alerts.push(a.clone());
        }
        drop(state);
        if !alerts.is_empty() {
            self.forward(&SinkEvent::Alerts { batch_id, alerts: &alerts });
        }
        Ok(InferReport {
            batch_id: batch_id.to_string(),
            run_id: out.run_id,
            model_version: bundle.version,
            records,
            quarantined: out.quarantine.len(),
            alerts,
        })
    }

    /// Newest first. Pages are 1-based; a page past the end is empty.
    pub fn list_alerts(&self, filter: &AlertFilter) -> Result<AlertPage> {
        let page = filter.page.unwrap_or(1);
        let page_size = filter.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
        if page == 0 {
            return Err(Error::BadRequest("page starts at 1".into()));
        }
        if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
            return Err(Error::BadRequest(format!("page_size must be between 1 and {MAX_PAGE_SIZE}")));
        }
        let state = self.state();
        let mut hits: Vec<&AlertRecord> = state
            .alerts
            .iter()
            .filter(|a| filter.status.is_none_or(|s| a.status == s))
            .filter(|a| filter.since.is_none_or(|t| a.created_at >= t))
            .filter(|a| filter.batch_id.as_ref().is_none_or(|b| &a.batch_id == b))
            .collect();
        // ids grow with creation, so they break created_at ties
        hits.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| b.alert_id.cmp(&a.alert_id)));
        let alerts = hits.iter().skip((page - 1) * page_size).take(page_size).map(|a| (*a).clone()).collect();
        Ok(AlertPage {
            total: hits.len(),
            page,
            page_size,
            alerts,
        })
    }

    pub fn alert(&self, alert_id: &str) -> Result<AlertRecord> {
        let state = self.state();
        state
            .alert_index
            .get(alert_id)
            .map(|&i| state.alerts[i].clone())
            .ok_or_else(|| Error::NotFound(format!("alert {alert_id}")))
    }

    /// Closes an open alert. Both verdicts are stored; only false positives
    /// reach the fine-tune set.
    pub fn submit_feedback(&self, alert_id: &str, verdict: Verdict, analyst: &str) -> Result<AlertRecord> {
        if analyst.trim().is_empty() {
            return Err(Error::BadRequest("analyst is required".into()));
        }
        let mut state = self.state();
        let i = *state.alert_index.get(alert_id).ok_or_else(|| Error::NotFound(format!("alert {alert_id}")))?;
        if state.alerts[i].status != AlertStatus::Open {
            return Err(Error::Conflict(format!("alert {alert_id} is already closed")));
        }
        let bundle = state.active.as_ref().map(|(_, b)| Arc::clone(b)).ok_or(Error::NoBundle)?;
        let features = bundle.featurize(&state.alerts[i].event)?;
        let at = now_ms();
        let entry = FeedbackEntry::new(alert_id, verdict, analyst, at, features);
        let status = AlertStatus::from(verdict);
        state.feedback_log.append(std::slice::from_ref(&entry))?;
        state.feedback.push(entry);
        state.alert_log.append(&[AlertLog::Closed {
            alert_id: alert_id.to_string(),
            status,
            analyst: analyst.to_string(),
            at,
        }])?;
        let alert = &mut state.alerts[i];
        alert.status = status;
        alert.analyst = Some(analyst.to_string());
        alert.closed_at = Some(at);
        let alert = alert.clone();
        drop(state);
        self.forward(&SinkEvent::Verdict { alert_id, status, analyst });
        Ok(alert)
    }

    pub fn pending_feedback(&self) -> usize {
        self.state().pending_feedback()
    }

    /// Fine-tunes the active model on false positives flagged since it was
    /// created, plus replay, and activates the result. Only one retrain runs
    /// at a time; inference keeps using the previous bundle until the switch.
    pub fn trigger_retrain(&self) -> Result<RetrainReport> {
        let _guard = match self.retrain_lock.try_lock() {
            Ok(g) => g,
            Err(std::sync::TryLockError::WouldBlock) => return Err(Error::Busy),
            Err(std::sync::TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let started_at_ms = now_ms();
        let snapshot = {
            let state = self.state();
            let cursor = state.cursor();
            state.active.as_ref().map(|(record, bundle)| {
                let replay = state.replay.get(&record.lineage).cloned().unwrap_or_default();
                (record.clone(), Arc::clone(bundle), state.feedback[cursor..].to_vec(), state.feedback.len(), replay)
            })
        };
        let skipped = |message: &str, old_version| RetrainReport {
            status: RetrainOutcome::Skipped,
            message: message.to_string(),
            run_id: None,
            old_version,
            new_version: None,
            corrected: 0,
            replayed: 0,
            before: None,
            after: None,
            started_at_ms,
            finished_at_ms: now_ms(),
        };
        let Some((record, bundle, feedback, cursor, replay)) = snapshot else {
            return self.record_retrain(skipped("skipped: no feedback", None));
        };
        let req = RetrainRequest {
            bundle: Arc::clone(&bundle),
            feedback,
            since_ms: None,
            training: Arc::clone(&replay.training),
            validation: Arc::clone(&replay.validation),
            finetune: self.config.finetune.clone(),
            retrain: self.config.retrain.clone(),
            created_at_ms: started_at_ms,
        };
        let out = {
            let mut journal = self.retrain_runs.lock().unwrap_or_else(|p| p.into_inner());
            pipeline::retrain(req, &self.pool, &mut journal)?
        };
        let Some(out) = out else {
            return self.record_retrain(skipped("skipped: no feedback", Some(record.version)));
        };
        let before = if replay.validation.is_empty() { None } else { Some(pipeline::evaluate(&bundle, &replay.validation)?) };

        let mut state = self.state();
        let version = state.next_version();
        let mut new_bundle = out.bundle;
        new_bundle.version = version;
        let new_record = ModelRecord {
            version,
            lineage: record.lineage,
            created_at_ms: started_at_ms,
            origin: ModelOrigin::Retrain,
            path: format!("models/v{version}.json"),
            validation: out.validation,
            feedback_cursor: cursor,
        };
        self.commit_model(&mut state, new_record, new_bundle)?;
        drop(state);
        self.record_retrain(RetrainReport {
            status: RetrainOutcome::Completed,
            message: format!("v{} -> v{version}", record.version),
            run_id: Some(out.run_id),
            old_version: Some(record.version),
            new_version: Some(version),
            corrected: out.corrected,
            replayed: out.replayed,
            before,
            after: out.validation,
            started_at_ms,
            finished_at_ms: now_ms(),
        })
    }

    fn record_retrain(&self, report: RetrainReport) -> Result<RetrainReport> {
        let mut state = self.state();
        state.retrain_log.append(std::slice::from_ref(&report))?;
        state.retrains.push(report.clone());
        Ok(report)
    }

    pub fn retrain_status(&self) -> RetrainStatus {
        let running = matches!(self.retrain_lock.try_lock(), Err(std::sync::TryLockError::WouldBlock));
        let state = self.state();
        RetrainStatus {
            running,
            pending_feedback: state.pending_feedback(),
            last: state.retrains.last().cloned(),
        }
    }

    pub fn models(&self) -> ModelsView {
        let state = self.state();
        ModelsView {
            active: state.active.as_ref().map(|(m, _)| m.version),
            versions: state.models.clone(),
            pending_feedback: state.pending_feedback(),
            last_retrain: state.retrains.last().cloned(),
        }
    }

    /// Orchestrator journal of one of the service DAGs.
    pub fn runs(&self, dag_id: &str) -> Result<Vec<crate::orchestrator::RunReport>> {
        let journal = match dag_id {
            TRAIN_DAG => &self.train_runs,
            INFER_DAG => &self.infer_runs,
            RETRAIN_DAG => &self.retrain_runs,
            other => return Err(Error::NotFound(format!("dag {other}"))),
        };
        Ok(journal.lock().unwrap_or_else(|p| p.into_inner()).reports())
    }
}

fn load_replay(dir: &Path, lineage: u64) -> Result<Replay> {
    Ok(Replay {
        training: Arc::new(read_jsonl(dir.join(format!("replay/v{lineage}.train.jsonl")))?),
        validation: Arc::new(read_jsonl(dir.join(format!("replay/v{lineage}.validation.jsonl")))?),
    })
}
