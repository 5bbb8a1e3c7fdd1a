use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use logfuse::config::ServiceConfig;
use logfuse::io::{evaluate_files, parse_raw_lines, write_events_csv};
use logfuse::orchestrator::{self, Clock, DagSpec, Journal, Registry, RunOptions, RunOutcome, RunReport, Scheduler, SystemClock, TaskDag, WorkerPool};
use logfuse::parse::parse_batch;
use logfuse::profile::HeaderProfile;
use logfuse::service::{AlertFilter, AlertStatus, Service};
use logfuse::synth;
use logfuse_core::feedback::Verdict;
use logfuse_core::{DrainConfig, MetricReport};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "logfuse", version, about = "Log anomaly detection: parsing, dual-model scoring, analyst feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse JSON Lines logs into structured events.
    Parse(ParseArgs),
    /// Score JSON Lines logs with a saved model bundle, one row per record.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "hdfs")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        partitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a prediction file against labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Row label in the table.
        #[arg(long, default_value = "model")]
        name: String,
        /// Print the full report as JSON instead of a table row.
        #[arg(long)]
        json: bool,
    },
    /// Run and inspect task DAGs built from the built-in payloads.
    Dag {
        #[command(subcommand)]
        command: DagCommand,
    },
    /// Generate synthetic JSON Lines logs.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
        #[arg(long, global = true, default_value_t = 1)]
        seed: u64,
    },
    /// Operate on a service data directory. These mirror the HTTP API.
    #[command(flatten)]
    Service(ServiceCommand),
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "hdfs")]
    profile: String,
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    /// Events as JSON Lines.
    #[arg(long)]
    out: PathBuf,
    /// Also write the structured CSV export.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Unparseable lines go here instead of being dropped.
    #[arg(long)]
    quarantine: Option<PathBuf>,
    /// Similarity threshold θ.
    #[arg(long)]
    theta: Option<f64>,
    /// Tree depth D.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Subcommand)]
enum DagCommand {
    /// Run a DAG definition file once.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value = "runs")]
        journal_dir: PathBuf,
        #[arg(long, default_value_t = orchestrator::DEFAULT_MAX_ATTEMPTS)]
        max_attempts: u32,
    },
    /// Finish a run that stopped part way.
    Resume {
        dag_id: String,
        run_id: String,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value = "runs")]
        journal_dir: PathBuf,
    },
    /// Print the run reports of a DAG.
    ListRuns {
        dag_id: String,
        #[arg(long, default_value = "runs")]
        journal_dir: PathBuf,
    },
    /// Run DAG files on their `schedule_seconds` for a while.
    Schedule {
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value = "runs")]
        journal_dir: PathBuf,
        #[arg(long)]
        for_seconds: u64,
    },
    /// List the built-in payload names.
    Payloads,
}

#[derive(Subcommand)]
enum SynthKind {
    /// HDFS-style lines with labeled anomaly templates.
    Hdfs {
        #[arg(long, default_value_t = 2000)]
        records: usize,
        #[arg(long, default_value_t = 0.05)]
        anomaly_rate: f64,
    },
    /// Parameter- and context-driven anomalies.
    Mixed {
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        /// Moves the parameter vocabularies.
        #[arg(long, default_value_t = 0)]
        shift: usize,
    },
    /// Known templates with distinct parameters, unlabeled.
    Templates {
        #[arg(long, default_value_t = 50)]
        templates: usize,
        #[arg(long, default_value_t = 200)]
        per_template: usize,
    },
}

#[derive(Args)]
struct ServiceOpts {
    #[arg(long, default_value = "logfuse-data", global = true)]
    data_dir: PathBuf,
    /// JSON service configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ServiceCommand {
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        opts: ServiceOpts,
        /// Overrides the configured address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Train a new model from labeled JSON Lines and activate it.
    Train {
        #[command(flatten)]
        opts: ServiceOpts,
        #[arg(long)]
        input: PathBuf,
    },
    /// Store a batch of JSON Lines logs.
    Ingest {
        #[command(flatten)]
        opts: ServiceOpts,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        source: Option<String>,
    },
    /// Score a stored batch and record alerts.
    Infer {
        #[command(flatten)]
        opts: ServiceOpts,
        #[arg(long)]
        batch: String,
        /// Model version; the active one by default.
        #[arg(long)]
        version: Option<u64>,
    },
    /// List alerts, newest first.
    Alerts {
        #[command(flatten)]
        opts: ServiceOpts,
        #[arg(long, value_enum)]
        status: Option<StatusArg>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        since: Option<i64>,
        #[arg(long)]
        page: Option<usize>,
        #[arg(long)]
        page_size: Option<usize>,
    },
    /// Show one alert.
    Alert {
        #[command(flatten)]
        opts: ServiceOpts,
        id: String,
    },
    /// Record an analyst verdict on an open alert.
    Feedback {
        #[command(flatten)]
        opts: ServiceOpts,
        id: String,
        #[arg(long, value_enum)]
        verdict: VerdictArg,
        #[arg(long)]
        analyst: String,
    },
    /// Fine-tune the active model on flagged false positives.
    Retrain {
        #[command(flatten)]
        opts: ServiceOpts,
    },
    /// Model versions and retrain status.
    Models {
        #[command(flatten)]
        opts: ServiceOpts,
    },
    /// Make a stored model version active.
    Activate {
        #[command(flatten)]
        opts: ServiceOpts,
        version: u64,
    },
    /// Run reports of the service DAGs: train, infer or retrain.
    Runs {
        #[command(flatten)]
        opts: ServiceOpts,
        dag: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatusArg {
    Open,
    FalsePositive,
    Confirmed,
}

impl From<StatusArg> for AlertStatus {
    fn from(s: StatusArg) -> Self {
        match s {
            StatusArg::Open => AlertStatus::Open,
            StatusArg::FalsePositive => AlertStatus::FalsePositive,
            StatusArg::Confirmed => AlertStatus::Confirmed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VerdictArg {
    FalsePositive,
    Confirmed,
}

impl From<VerdictArg> for Verdict {
    fn from(v: VerdictArg) -> Self {
        match v {
            VerdictArg::FalsePositive => Verdict::FalsePositive,
            VerdictArg::Confirmed => Verdict::Confirmed,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Parse(args) => parse(args),
        Command::Score {
            model,
            input,
            profile,
            partitions,
            out,
        } => score(&model, &input, &profile, partitions, out.as_deref()),
        Command::Evaluate { pred, labels, name, json } => {
            let report = evaluate_files(&pred, &labels)?;
            if json {
                print_json(&report)
            } else {
                println!("{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}", "", "Accuracy", "Precision", "Recall", "F1", "FPR");
                println!("{}", table_row(&name, &report));
                Ok(())
            }
        }
        Command::Dag { command } => dag(command),
        Command::Synth { kind, out, seed } => {
            let lines = match kind {
                SynthKind::Hdfs { records, anomaly_rate } => synth::hdfs_corpus(records, anomaly_rate, seed),
                SynthKind::Mixed { records, shift } => synth::mixed_corpus(&synth::MixedConfig {
                    records,
                    shift,
                    seed,
                    ..Default::default()
                }),
                SynthKind::Templates { templates, per_template } => synth::template_corpus(templates, per_template, seed).lines,
            };
            write_lines(out.as_deref(), &lines)
        }
        Command::Service(cmd) => service(cmd),
    }
}

fn table_row(name: &str, m: &MetricReport) -> String {
    let precision = if m.precision_undefined { "n/a".to_string() } else { format!("{:.4}", m.precision) };
    format!("{name:<10} {:>9.4} {precision:>9} {:>9.4} {:>9.4} {:>9.4}", m.accuracy, m.recall, m.f1, m.fpr)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_lines<T: Serialize>(path: Option<&Path>, items: &[T]) -> Result<()> {
    match path {
        Some(p) => logfuse::io::write_jsonl(p, items)?,
        None => {
            let stdout = std::io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            for item in items {
                serde_json::to_writer(&mut out, item)?;
                writeln!(out)?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    let mut text = String::new();
    if path == Path::new("-") {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(text)
}

fn parse(args: ParseArgs) -> Result<()> {
    let profile = HeaderProfile::builtin(&args.profile)?;
    let mut config = DrainConfig::default();
    if let Some(t) = args.theta {
        config.similarity_threshold = t;
    }
    if let Some(d) = args.depth {
        config.depth = d;
    }
    config.validate()?;
    if args.partitions == 0 {
        bail!("--partitions must be positive");
    }
    let (lines, mut quarantine) = parse_raw_lines(&read_input(&args.input)?);
    let out = parse_batch(&lines, args.partitions, &profile, &config)?;
    quarantine.extend(out.quarantine);
    logfuse::io::write_jsonl(&args.out, &out.events)?;
    if let Some(csv) = &args.csv {
        let file = File::create(csv).with_context(|| format!("creating {}", csv.display()))?;
        write_events_csv(BufWriter::new(file), &out.events)?;
    }
    if let Some(q) = &args.quarantine {
        logfuse::io::write_jsonl(q, &quarantine)?;
    }
    log::info!("{} events, {} templates, {} quarantined", out.events.len(), out.tree.len(), quarantine.len());
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    line_id: u64,
    event_id: logfuse_core::TemplateId,
    #[serde(flatten)]
    fused: &'a logfuse_core::FusedPrediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<logfuse_core::Label>,
}

fn score(model: &Path, input: &Path, profile: &str, partitions: usize, out: Option<&Path>) -> Result<()> {
    let bundle = Arc::new(logfuse::io::load_bundle(model)?);
    let profile = HeaderProfile::builtin(profile)?;
    let (lines, _) = parse_raw_lines(&read_input(input)?);
    let pool = WorkerPool::new(1);
    let scored = logfuse::pipeline::infer(bundle, Arc::new(lines), &profile, partitions.max(1), &pool, &mut Journal::in_memory())?.scored;
    let rows: Vec<ScoreRow<'_>> = scored
        .iter()
        .map(|s| ScoreRow {
            line_id: s.event.line_id,
            event_id: s.event.event_id,
            fused: &s.fused,
            label: s.event.label,
        })
        .collect();
    write_lines(out, &rows)
}

fn load_dag(path: &Path) -> Result<TaskDag> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: DagSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(TaskDag::new(spec)?)
}

fn print_report(report: &RunReport) -> Result<()> {
    print_json(report)?;
    if let Some((task, message)) = report.first_failure() {
        bail!("task `{task}` failed: {message}");
    }
    Ok(())
}

fn dag(command: DagCommand) -> Result<()> {
    let registry = Registry::builtins();
    match command {
        DagCommand::Run {
            file,
            workers,
            journal_dir,
            max_attempts,
        } => {
            let dag = load_dag(&file)?;
            let pool = WorkerPool::new(workers.max(1));
            let mut journal = Journal::for_dag(&journal_dir, dag.id())?;
            let options = RunOptions {
                max_attempts,
                ..RunOptions::default()
            };
            match orchestrator::run(&dag, &registry, &pool, &mut journal, &options)? {
                RunOutcome::Completed(report) => print_report(&report),
                RunOutcome::Halted { run_id } => bail!("run {run_id} halted"),
            }
        }
        DagCommand::Resume {
            dag_id,
            run_id,
            workers,
            journal_dir,
        } => {
            let pool = WorkerPool::new(workers.max(1));
            let mut journal = Journal::for_dag(&journal_dir, &dag_id)?;
            match orchestrator::resume(&run_id, &registry, &pool, &mut journal, &RunOptions::default())? {
                RunOutcome::Completed(report) => print_report(&report),
                RunOutcome::Halted { run_id } => bail!("run {run_id} halted"),
            }
        }
        DagCommand::ListRuns { dag_id, journal_dir } => {
            let journal = Journal::for_dag(&journal_dir, &dag_id)?;
            write_lines(None, &journal.reports())
        }
        DagCommand::Schedule {
            files,
            workers,
            journal_dir,
            for_seconds,
        } => {
            let dags = files.iter().map(|f| load_dag(f)).collect::<Result<Vec<_>>>()?;
            let clock = SystemClock::default();
            let mut scheduler = Scheduler::new(&dags, clock.now());
            if scheduler.is_empty() {
                bail!("none of the DAGs has schedule_seconds");
            }
            let pool = WorkerPool::new(workers.max(1));
            let firings = scheduler.run_until(&clock, for_seconds, |dag_id| {
                let Some(dag) = dags.iter().find(|d| d.id() == dag_id) else { return };
                let outcome = Journal::for_dag(&journal_dir, dag_id)
                    .and_then(|mut j| orchestrator::run(dag, &registry, &pool, &mut j, &RunOptions::default()));
                match outcome {
                    Ok(RunOutcome::Completed(r)) => log::info!("{dag_id} run {} succeeded: {}", r.run_id, r.succeeded()),
                    Ok(RunOutcome::Halted { run_id }) => log::warn!("{dag_id} run {run_id} halted"),
                    Err(e) => log::error!("{dag_id}: {e}"),
                }
            });
            log::info!("{} runs fired", firings.len());
            Ok(())
        }
        DagCommand::Payloads => {
            for name in registry.names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn open_service(opts: &ServiceOpts) -> Result<Service> {
    let config = match &opts.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    Ok(Service::open(&opts.data_dir, config)?)
}

fn service(command: ServiceCommand) -> Result<()> {
    match command {
        ServiceCommand::Serve { opts, bind } => serve(open_service(&opts)?, bind),
        ServiceCommand::Train { opts, input } => {
            let svc = open_service(&opts)?;
            let (lines, quarantine) = parse_raw_lines(&read_input(&input)?);
            if !quarantine.is_empty() {
                log::warn!("{} input lines quarantined", quarantine.len());
            }
            print_json(&svc.train(lines)?)
        }
        ServiceCommand::Ingest { opts, input, source } => {
            let svc = open_service(&opts)?;
            print_json(&svc.ingest(&read_input(&input)?, source.as_deref())?)
        }
        ServiceCommand::Infer { opts, batch, version } => print_json(&open_service(&opts)?.infer(&batch, version)?),
        ServiceCommand::Alerts {
            opts,
            status,
            batch,
            since,
            page,
            page_size,
        } => {
            let filter = AlertFilter {
                status: status.map(Into::into),
                since,
                batch_id: batch,
                page,
                page_size,
            };
            print_json(&open_service(&opts)?.list_alerts(&filter)?)
        }
        ServiceCommand::Alert { opts, id } => print_json(&open_service(&opts)?.alert(&id)?),
        ServiceCommand::Feedback { opts, id, verdict, analyst } => print_json(&open_service(&opts)?.submit_feedback(&id, verdict.into(), &analyst)?),
        ServiceCommand::Retrain { opts } => print_json(&open_service(&opts)?.trigger_retrain()?),
        ServiceCommand::Models { opts } => print_json(&open_service(&opts)?.models()),
        ServiceCommand::Activate { opts, version } => print_json(&open_service(&opts)?.activate(version)?),
        ServiceCommand::Runs { opts, dag } => write_lines(None, &open_service(&opts)?.runs(&dag)?),
    }
}

fn serve(svc: Service, bind: Option<String>) -> Result<()> {
    let bind = bind.unwrap_or_else(|| svc.config().bind.clone());
    let svc = Arc::new(svc);
    if let Some(every) = svc.config().retrain_every_seconds.filter(|&s| s > 0) {
        let svc = Arc::clone(&svc);
        std::thread::spawn(move || loop {
            std::thread::sleep(Duration::from_secs(every));
            match svc.trigger_retrain() {
                Ok(r) => log::info!("scheduled retrain: {}", r.message),
                Err(e) => log::warn!("scheduled retrain: {e}"),
            }
        });
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(logfuse::http::serve(svc, &bind))?;
    Ok(())
}
