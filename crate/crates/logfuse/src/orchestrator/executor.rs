//! Worker pool and the run loop that feeds it.
//!
//! The run loop is the only writer of task state. It journals every
//! transition before acting on it, hands ready tasks to the pool over a
//! channel and waits for workers to report back. A task whose payload
//! panics counts as a crashed worker and is redelivered until the attempt
//! limit; a payload that returns an error fails immediately.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{SystemTime, UNIX_EPOCH};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::dag::{DagError, TaskDag};
use super::journal::{Journal, Record, RunReport, TaskState};
use crate::error::Result;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 2;

/// What a payload sees.
#[derive(Clone, Debug)]
pub struct TaskContext {
    pub run_id: String,
    pub dag_id: String,
    pub task: String,
    pub params: serde_json::Value,
    pub attempt: u32,
}

pub type Payload = Arc<dyn Fn(&TaskContext) -> std::result::Result<(), String> + Send + Sync>;

/// Payloads by name. DAG files refer to these names.
#[derive(Clone, Default)]
pub struct Registry {
    payloads: HashMap<String, Payload>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&TaskContext) -> std::result::Result<(), String> + Send + Sync + 'static,
    {
        self.payloads.insert(name.into(), Arc::new(f));
        self
    }

    /// Payloads available to DAG files run from the command line:
    /// `noop`, `sleep` (`params.ms`), `fail` (`params.message`), `panic` and
    /// `echo` (logs `params`).
    pub fn builtins() -> Self {
        let mut r = Self::new();
        r.register("noop", |_| Ok(()))
            .register("sleep", |ctx| {
                thread::sleep(std::time::Duration::from_millis(ctx.params["ms"].as_u64().unwrap_or(100)));
                Ok(())
            })
            .register("fail", |ctx| Err(ctx.params["message"].as_str().unwrap_or("failed").to_string()))
            .register("panic", |ctx| panic!("task {} panicked", ctx.task))
            .register("echo", |ctx| {
                log::info!("{}/{}: {}", ctx.dag_id, ctx.task, ctx.params);
                Ok(())
            });
        r
    }

    pub fn get(&self, name: &str) -> Option<Payload> {
        self.payloads.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.payloads.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

enum Outcome {
    Done,
    Error(String),
    Crashed(String),
}

enum Event {
    Started { task: usize, attempt: u32, worker: usize, at_us: u64 },
    Finished { task: usize, attempt: u32, worker: usize, at_us: u64, outcome: Outcome },
}

struct Job {
    task: usize,
    payload: Payload,
    ctx: TaskContext,
    reply: Sender<Event>,
}

/// Fixed set of worker threads pulling jobs from one queue. Each job goes to
/// exactly one worker.
pub struct WorkerPool {
    size: usize,
    jobs: Option<Sender<Job>>,
    threads: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn new(size: usize) -> Self {
        let size = size.max(1);
        let (tx, rx) = unbounded::<Job>();
        let threads = (0..size)
            .map(|worker| {
                let rx = rx.clone();
                thread::Builder::new()
                    .name(format!("worker-{worker}"))
                    .spawn(move || work(worker, rx))
                    .expect("spawn worker thread")
            })
            .collect();
        Self {
            size,
            jobs: Some(tx),
            threads,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn submit(&self, job: Job) {
        self.jobs
            .as_ref()
            .expect("pool is running")
            .send(job)
            .expect("workers outlive the pool handle");
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.jobs.take();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn work(worker: usize, jobs: Receiver<Job>) {
    for job in jobs {
        let (task, attempt) = (job.task, job.ctx.attempt);
        // the run loop may have gone away (halted run); nothing to report to
        let _ = job.reply.send(Event::Started {
            task,
            attempt,
            worker,
            at_us: now_us(),
        });
        let result = panic::catch_unwind(AssertUnwindSafe(|| (job.payload)(&job.ctx)));
        let outcome = match result {
            Ok(Ok(())) => Outcome::Done,
            Ok(Err(e)) => Outcome::Error(e),
            Err(p) => Outcome::Crashed(super::panic_message(&*p)),
        };
        let _ = job.reply.send(Event::Finished {
            task,
            attempt,
            worker,
            at_us: now_us(),
            outcome,
        });
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub max_attempts: u32,
    pub run_id: Option<String>,
    /// Fault injection: stop the run loop abruptly after this many journal
    /// records, as if the process had died.
    pub halt_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            run_id: None,
            halt_after: None,
        }
    }
}

/// How a call to [`run`] or [`resume`] ended.
#[derive(Clone, Debug)]
pub enum RunOutcome {
    Completed(RunReport),
    /// Stopped by `halt_after`; the journal holds the partial run.
    Halted { run_id: String },
}

impl RunOutcome {
    pub fn report(self) -> Option<RunReport> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Halted { .. } => None,
        }
    }
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn fresh_run_id(dag_id: &str) -> String {
    format!("{dag_id}-{}-{}", now_us(), RUN_COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// Why the run loop stopped early.
enum Stop {
    Halted,
    Failed(crate::error::Error),
}

impl From<crate::error::Error> for Stop {
    fn from(e: crate::error::Error) -> Self {
        Stop::Failed(e)
    }
}

type Step<T = ()> = std::result::Result<T, Stop>;

struct RunLoop<'a> {
    dag: &'a TaskDag,
    payloads: Vec<Payload>,
    pool: &'a WorkerPool,
    journal: &'a mut Journal,
    options: &'a RunOptions,
    run_id: String,
    state: Vec<Option<TaskState>>,
    attempts: Vec<u32>,
    waiting_on: Vec<usize>,
    in_flight: usize,
    written: usize,
    reply_tx: Sender<Event>,
    reply_rx: Receiver<Event>,
}

impl<'a> RunLoop<'a> {
    fn new(dag: &'a TaskDag, registry: &Registry, pool: &'a WorkerPool, journal: &'a mut Journal, options: &'a RunOptions, run_id: String) -> Result<Self> {
        let payloads = (0..dag.len())
            .map(|i| {
                let name = &dag.task(i).payload;
                registry.get(name).ok_or_else(|| DagError::UnknownPayload(name.clone()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (reply_tx, reply_rx) = unbounded();
        Ok(Self {
            dag,
            payloads,
            pool,
            journal,
            options,
            run_id,
            state: vec![None; dag.len()],
            attempts: vec![0; dag.len()],
            waiting_on: (0..dag.len()).map(|i| dag.upstream(i).len()).collect(),
            in_flight: 0,
            written: 0,
            reply_tx,
            reply_rx,
        })
    }

    fn write(&mut self, record: Record) -> Step {
        if self.options.halt_after.is_some_and(|n| self.written >= n) {
            return Err(Stop::Halted);
        }
        self.written += 1;
        Ok(self.journal.append(record)?)
    }

    fn transition(&mut self, task: usize, state: TaskState, worker: Option<usize>, at_us: u64, error: Option<String>) -> Step {
        self.write(Record::Task {
            run_id: self.run_id.clone(),
            task: self.dag.name(task).to_string(),
            state,
            attempt: self.attempts[task],
            worker,
            at_us,
            error,
        })?;
        self.state[task] = Some(state);
        Ok(())
    }

    /// Queues the next attempt of `task`.
    fn enqueue(&mut self, task: usize) -> Step {
        self.attempts[task] += 1;
        self.transition(task, TaskState::Queued, None, now_us(), None)?;
        let spec = self.dag.task(task);
        self.pool.submit(Job {
            task,
            payload: self.payloads[task].clone(),
            ctx: TaskContext {
                run_id: self.run_id.clone(),
                dag_id: self.dag.id().to_string(),
                task: spec.name.clone(),
                params: spec.params.clone(),
                attempt: self.attempts[task],
            },
            reply: self.reply_tx.clone(),
        });
        self.in_flight += 1;
        Ok(())
    }

    fn fail(&mut self, task: usize, worker: Option<usize>, at_us: u64, error: String) -> Step {
        self.transition(task, TaskState::Failed, worker, at_us, Some(error))?;
        for d in self.dag.descendants(task) {
            if self.state[d].is_none() {
                self.transition(d, TaskState::Skipped, None, at_us, None)?;
            }
        }
        Ok(())
    }

    fn succeed(&mut self, task: usize, worker: usize, at_us: u64) -> Step {
        self.transition(task, TaskState::Success, Some(worker), at_us, None)?;
        for &d in self.dag.downstream(task) {
            self.waiting_on[d] -= 1;
            if self.waiting_on[d] == 0 && self.state[d].is_none() {
                self.enqueue(d)?;
            }
        }
        Ok(())
    }

    fn drive(&mut self) -> Step {
        while self.in_flight > 0 {
            match self.reply_rx.recv().expect("the loop holds a sender") {
                Event::Started { task, attempt, worker, at_us } => {
                    if attempt == self.attempts[task] {
                        self.transition(task, TaskState::Running, Some(worker), at_us, None)?;
                    }
                }
                Event::Finished {
                    task,
                    attempt,
                    worker,
                    at_us,
                    outcome,
                } => {
                    self.in_flight -= 1;
                    if attempt != self.attempts[task] {
                        continue;
                    }
                    match outcome {
                        Outcome::Done => self.succeed(task, worker, at_us)?,
                        Outcome::Error(e) => self.fail(task, Some(worker), at_us, e)?,
                        Outcome::Crashed(e) if attempt < self.options.max_attempts => {
                            log::warn!("task `{}` crashed on attempt {attempt}: {e}", self.dag.name(task));
                            self.enqueue(task)?;
                        }
                        Outcome::Crashed(e) => self.fail(task, Some(worker), at_us, format!("crashed: {e}"))?,
                    }
                }
            }
        }
        Ok(())
    }

    fn complete(mut self, start: Vec<usize>) -> Result<RunOutcome> {
        let steps = (|| -> Step {
            for t in start {
                self.enqueue(t)?;
            }
            self.drive()?;
            let run_id = self.run_id.clone();
            self.write(Record::RunFinished { run_id, at_us: now_us() })
        })();
        self.outcome(steps)
    }

    fn outcome(&self, steps: Step) -> Result<RunOutcome> {
        match steps {
            Ok(()) => Ok(RunOutcome::Completed(
                self.journal.report(&self.run_id).expect("run was journaled"),
            )),
            Err(Stop::Halted) => Ok(RunOutcome::Halted {
                run_id: self.run_id.clone(),
            }),
            Err(Stop::Failed(e)) => Err(e),
        }
    }
}

/// Executes `dag` on `pool`, journaling every state change.
pub fn run(dag: &TaskDag, registry: &Registry, pool: &WorkerPool, journal: &mut Journal, options: &RunOptions) -> Result<RunOutcome> {
    let run_id = options.run_id.clone().unwrap_or_else(|| fresh_run_id(dag.id()));
    let mut lp = RunLoop::new(dag, registry, pool, journal, options, run_id)?;
    let started = lp.write(Record::RunStarted {
        run_id: lp.run_id.clone(),
        dag: dag.spec().clone(),
        at_us: now_us(),
    });
    if started.is_err() {
        return lp.outcome(started);
    }
    let start: Vec<usize> = (0..dag.len()).filter(|&i| dag.upstream(i).is_empty()).collect();
    lp.complete(start)
}

/// Continues an interrupted run from its journal. Finished tasks keep their
/// state. A task that was running when the run stopped has used up that
/// attempt and is redelivered if attempts remain; a queued one that never
/// started is delivered again under the same attempt number.
pub fn resume(run_id: &str, registry: &Registry, pool: &WorkerPool, journal: &mut Journal, options: &RunOptions) -> Result<RunOutcome> {
    let spec = journal
        .run_records(run_id)
        .find_map(|r| match r {
            Record::RunStarted { dag, .. } => Some(dag.clone()),
            _ => None,
        })
        .ok_or_else(|| DagError::UnknownRun(run_id.to_string()))?;
    let dag = TaskDag::new(spec)?;
    let report = journal.report(run_id).expect("start record found above");
    if report.finished_at_us.is_some() {
        return Ok(RunOutcome::Completed(report));
    }

    let mut lp = RunLoop::new(&dag, registry, pool, journal, options, run_id.to_string())?;
    let mut crashed = Vec::new();
    let mut start = Vec::new();
    for (i, t) in report.tasks.iter().enumerate() {
        let started = t.attempts.iter().map(|a| a.attempt).max().unwrap_or(0);
        lp.attempts[i] = started;
        match t.state {
            s if s.is_terminal() => lp.state[i] = Some(s),
            TaskState::Running => crashed.push(i),
            TaskState::Queued if t.queued_at_us.is_some() => start.push(i),
            _ => {}
        }
    }
    for i in 0..dag.len() {
        if lp.state[i] == Some(TaskState::Success) {
            for &d in dag.downstream(i) {
                lp.waiting_on[d] -= 1;
            }
        }
    }
    let steps = (|| -> Step {
        // the stopped loop may have died part way through skipping the
        // descendants of a failure
        for i in 0..dag.len() {
            if matches!(lp.state[i], Some(TaskState::Failed | TaskState::Skipped)) {
                for d in dag.descendants(i) {
                    if lp.state[d].is_none() && !start.contains(&d) {
                        lp.transition(d, TaskState::Skipped, None, now_us(), None)?;
                    }
                }
            }
        }
        for i in crashed {
            if lp.attempts[i] >= options.max_attempts {
                lp.fail(i, None, now_us(), "crashed: worker lost".into())?;
            } else {
                start.push(i);
            }
        }
        // ready tasks the stopped loop never got to
        for i in 0..dag.len() {
            if lp.state[i].is_none() && lp.waiting_on[i] == 0 && !start.contains(&i) {
                start.push(i);
            }
        }
        Ok(())
    })();
    if steps.is_err() {
        return lp.outcome(steps);
    }
    start.sort_unstable();
    lp.complete(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::dag::{DagSpec, TaskSpec};
    use std::sync::atomic::AtomicUsize;
    use std::time::Duration;

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register("noop", |_| Ok(()));
        r.register("fail", |_| Err("nope".into()));
        r.register("sleep", |ctx| {
            thread::sleep(Duration::from_millis(ctx.params["ms"].as_u64().unwrap_or(30)));
            Ok(())
        });
        r
    }

    #[test]
    fn chain_failure_skips_downstream() {
        let dag = TaskDag::chain("c", &[("a", "noop"), ("b", "fail"), ("c", "noop")]).unwrap();
        let pool = WorkerPool::new(2);
        let mut j = Journal::in_memory();
        let rep = run(&dag, &registry(), &pool, &mut j, &RunOptions::default()).unwrap().report().unwrap();
        assert_eq!(rep.state("a"), Some(TaskState::Success));
        assert_eq!(rep.state("b"), Some(TaskState::Failed));
        assert_eq!(rep.state("c"), Some(TaskState::Skipped));
        assert_eq!(rep.first_failure(), Some(("b", "nope")));
        assert!(rep.finished_at_us.is_some());
    }

    #[test]
    fn resume_finishes_an_interrupted_skip_cascade() {
        let dag = TaskDag::chain("k", &[("a", "noop"), ("b", "fail"), ("c", "noop"), ("d", "noop")]).unwrap();
        let pool = WorkerPool::new(1);
        let mut j = Journal::in_memory();
        // start, a queued/running/success, b queued/running, one retry-free
        // failure; the loop dies before c and d are skipped
        let halted = run(&dag, &registry(), &pool, &mut j, &RunOptions { halt_after: Some(7), ..RunOptions::default() }).unwrap();
        let RunOutcome::Halted { run_id } = halted else { panic!("expected a halt") };
        let partial = j.report(&run_id).unwrap();
        assert_eq!(partial.state("b"), Some(TaskState::Failed));
        assert!(!partial.state("c").unwrap().is_terminal());
        let rep = resume(&run_id, &registry(), &pool, &mut j, &RunOptions::default()).unwrap().report().unwrap();
        assert_eq!(rep.state("c"), Some(TaskState::Skipped));
        assert_eq!(rep.state("d"), Some(TaskState::Skipped));
        assert!(rep.is_complete());
    }

    #[test]
    fn empty_dag_succeeds() {
        let dag = TaskDag::new(DagSpec {
            dag_id: "e".into(),
            tasks: vec![],
            edges: vec![],
            schedule_seconds: None,
        })
        .unwrap();
        let pool = WorkerPool::new(1);
        let rep = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default())
            .unwrap()
            .report()
            .unwrap();
        assert!(rep.tasks.is_empty() && rep.succeeded());
    }

    #[test]
    fn independent_tasks_overlap_on_two_workers() {
        let dag = TaskDag::new(DagSpec {
            dag_id: "p".into(),
            tasks: vec![TaskSpec::new("x", "sleep"), TaskSpec::new("y", "sleep")],
            edges: vec![],
            schedule_seconds: None,
        })
        .unwrap();
        let pool = WorkerPool::new(2);
        let rep = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default())
            .unwrap()
            .report()
            .unwrap();
        let x = &rep.task("x").unwrap().attempts[0];
        let y = &rep.task("y").unwrap().attempts[0];
        assert!(x.started_at_us < y.finished_at_us.unwrap() && y.started_at_us < x.finished_at_us.unwrap());
        assert_ne!(x.worker, y.worker);
    }

    #[test]
    fn crash_is_retried_then_fails() {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut r = registry();
        let c = calls.clone();
        r.register("flaky", move |_| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                panic!("worker died");
            }
            Ok(())
        });
        r.register("doomed", |_| panic!("always"));
        let pool = WorkerPool::new(1);
        let dag = TaskDag::chain("f", &[("a", "flaky"), ("b", "doomed"), ("c", "noop")]).unwrap();
        let rep = run(&dag, &r, &pool, &mut Journal::in_memory(), &RunOptions::default())
            .unwrap()
            .report()
            .unwrap();
        assert_eq!(rep.state("a"), Some(TaskState::Success));
        assert_eq!(rep.task("a").unwrap().attempts.len(), 2);
        assert_eq!(rep.state("b"), Some(TaskState::Failed));
        assert_eq!(rep.task("b").unwrap().attempts.len(), DEFAULT_MAX_ATTEMPTS as usize);
        assert_eq!(rep.state("c"), Some(TaskState::Skipped));
    }

    #[test]
    fn unknown_payload_rejected() {
        let dag = TaskDag::chain("u", &[("a", "missing")]).unwrap();
        let pool = WorkerPool::new(1);
        let err = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
