//! Append-only JSON Lines status journal and the run reports folded from it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dag::DagSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Success,
    Failed,
    Skipped,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Success | TaskState::Failed | TaskState::Skipped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    RunStarted {
        run_id: String,
        dag: DagSpec,
        at_us: u64,
    },
    Task {
        run_id: String,
        task: String,
        state: TaskState,
        attempt: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        worker: Option<usize>,
        at_us: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    RunFinished {
        run_id: String,
        at_us: u64,
    },
}

impl Record {
    pub fn run_id(&self) -> &str {
        match self {
            Record::RunStarted { run_id, .. } | Record::Task { run_id, .. } | Record::RunFinished { run_id, .. } => run_id,
        }
    }
}

/// Journal of one DAG. Every append is written through to the file before
/// it returns.
#[derive(Debug, Default)]
pub struct Journal {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<Record>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a journal file and loads its records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let records = if path.exists() { read_records(&path)? } else { Vec::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Error::io(&path))?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            records,
        })
    }

    /// Journal of `dag_id` under `dir`.
    pub fn for_dag(dir: impl AsRef<Path>, dag_id: &str) -> Result<Self> {
        Self::open(dir.as_ref().join(format!("{dag_id}.jsonl")))
    }

    pub fn append(&mut self, record: Record) -> Result<()> {
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(&record).map_err(Error::json("journal record"))?;
            line.push(b'\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(&line).map_err(Error::io(&path))?;
            file.flush().map_err(Error::io(&path))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn run_records<'a>(&'a self, run_id: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.run_id() == run_id)
    }

    /// Run ids in the order they started.
    pub fn run_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::RunStarted { run_id, .. } => Some(run_id.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn report(&self, run_id: &str) -> Option<RunReport> {
        RunReport::fold(self.run_records(run_id))
    }

    pub fn reports(&self) -> Vec<RunReport> {
        self.run_ids().iter().filter_map(|id| self.report(id)).collect()
    }
}

/// Loads the records of an existing journal. A torn last line from an
/// interrupted write is cut off so later appends start on a fresh line.
fn read_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(Error::io(path))?;
        f.set_len(keep as u64).map_err(Error::io(path))?;
    }
    bytes[..keep]
        .split(|&b| b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .map(|l| serde_json::from_slice(l).map_err(Error::json(format!("journal {}", path.display()))))
        .collect()
}

/// One delivery of a task to a worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub attempt: u32,
    pub worker: Option<usize>,
    pub started_at_us: u64,
    pub finished_at_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task: String,
    pub state: TaskState,
    pub attempts: Vec<Attempt>,
    pub queued_at_us: Option<u64>,
    pub finished_at_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub dag_id: String,
    pub tasks: Vec<TaskRun>,
    pub started_at_us: u64,
    pub finished_at_us: Option<u64>,
}

impl RunReport {
    /// Rebuilds a report from one run's records. `None` without a start record.
    pub fn fold<'a>(records: impl IntoIterator<Item = &'a Record>) -> Option<Self> {
        let mut report: Option<RunReport> = None;
        let mut by_name: BTreeMap<String, usize> = BTreeMap::new();
        for r in records {
            match r {
                Record::RunStarted { run_id, dag, at_us } => {
                    by_name = dag.tasks.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
                    report = Some(RunReport {
                        run_id: run_id.clone(),
                        dag_id: dag.dag_id.clone(),
                        tasks: dag
                            .tasks
                            .iter()
                            .map(|t| TaskRun {
                                task: t.name.clone(),
                                state: TaskState::Queued,
                                attempts: Vec::new(),
                                queued_at_us: None,
                                finished_at_us: None,
                                error: None,
                            })
                            .collect(),
                        started_at_us: *at_us,
                        finished_at_us: None,
                    });
                }
                Record::Task {
                    task,
                    state,
                    attempt,
                    worker,
                    at_us,
                    error,
                    ..
                } => {
                    let (Some(rep), Some(&i)) = (report.as_mut(), by_name.get(task)) else {
                        continue;
                    };
                    let t = &mut rep.tasks[i];
                    t.state = *state;
                    match state {
                        TaskState::Queued => {
                            t.queued_at_us.get_or_insert(*at_us);
                        }
                        TaskState::Running => t.attempts.push(Attempt {
                            attempt: *attempt,
                            worker: *worker,
                            started_at_us: *at_us,
                            finished_at_us: None,
                        }),
                        _ => {
                            if let Some(a) = t.attempts.iter_mut().rev().find(|a| a.attempt == *attempt) {
                                a.finished_at_us.get_or_insert(*at_us);
                            }
                            if state.is_terminal() {
                                t.finished_at_us = Some(*at_us);
                            }
                        }
                    }
                    if error.is_some() {
                        t.error = error.clone();
                    }
                }
                Record::RunFinished { at_us, .. } => {
                    if let Some(rep) = report.as_mut() {
                        rep.finished_at_us = Some(*at_us);
                    }
                }
            }
        }
        report
    }

    pub fn task(&self, name: &str) -> Option<&TaskRun> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn state(&self, name: &str) -> Option<TaskState> {
        self.task(name).map(|t| t.state)
    }

    pub fn is_complete(&self) -> bool {
        self.tasks.iter().all(|t| t.state.is_terminal())
    }

    pub fn succeeded(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Success)
    }

    /// First failed task and its error.
    pub fn first_failure(&self) -> Option<(&str, &str)> {
        self.tasks
            .iter()
            .find(|t| t.state == TaskState::Failed)
            .map(|t| (t.task.as_str(), t.error.as_deref().unwrap_or("")))
    }
}
