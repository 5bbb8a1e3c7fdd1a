//! Interval scheduling over an injectable clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use super::dag::TaskDag;

/// Time source in abstract ticks.
pub trait Clock {
    fn now(&self) -> u64;
    /// Blocks until `now() >= tick`.
    fn sleep_until(&self, tick: u64);
}

/// Wall clock counting seconds since it was created.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        self.origin.elapsed().as_secs()
    }

    fn sleep_until(&self, tick: u64) {
        let target = self.origin + Duration::from_secs(tick);
        let now = Instant::now();
        if target > now {
            thread::sleep(target - now);
        }
    }
}

/// Clock that only moves when told to. Sleeping jumps straight to the target.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start: u64) -> Self {
        Self { now: AtomicU64::new(start) }
    }

    pub fn advance(&self, ticks: u64) {
        self.now.fetch_add(ticks, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, tick: u64) {
        self.now.fetch_max(tick, Ordering::SeqCst);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Firing {
    pub dag_id: String,
    /// Tick the run was due.
    pub due: u64,
    pub started: u64,
    pub finished: u64,
}

#[derive(Clone, Debug)]
struct Entry {
    dag_id: String,
    interval: u64,
    next_due: u64,
    /// Due ticks waiting for the previous run to finish.
    backlog: Vec<u64>,
}

/// Fires each scheduled DAG every `interval` ticks, starting one interval
/// after the origin. Runs happen one at a time on the caller's thread, so a
/// run that overruns its interval delays the next one instead of
/// overlapping it.
#[derive(Clone, Debug)]
pub struct Scheduler {
    entries: Vec<Entry>,
}

impl Scheduler {
    /// DAGs without a schedule are ignored.
    pub fn new<'a>(dags: impl IntoIterator<Item = &'a TaskDag>, origin: u64) -> Self {
        let entries = dags
            .into_iter()
            .filter_map(|d| {
                d.spec().schedule_seconds.filter(|&i| i > 0).map(|interval| Entry {
                    dag_id: d.id().to_string(),
                    interval,
                    next_due: origin + interval,
                    backlog: Vec::new(),
                })
            })
            .collect();
        Self { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn collect_due(&mut self, now: u64) {
        for e in &mut self.entries {
            while e.next_due <= now {
                e.backlog.push(e.next_due);
                e.next_due += e.interval;
            }
        }
    }

    fn next_ready(&mut self) -> Option<(String, u64)> {
        self.entries
            .iter_mut()
            .filter(|e| !e.backlog.is_empty())
            .min_by_key(|e| e.backlog[0])
            .map(|e| (e.dag_id.clone(), e.backlog.remove(0)))
    }

    /// Runs due DAGs through `fire` until the clock passes `until`. Runs due
    /// at or before `until` are all executed, even if earlier runs push the
    /// clock past it.
    pub fn run_until<C: Clock>(&mut self, clock: &C, until: u64, mut fire: impl FnMut(&str)) -> Vec<Firing> {
        let mut log = Vec::new();
        loop {
            self.collect_due(clock.now().min(until));
            if let Some((dag_id, due)) = self.next_ready() {
                let started = clock.now();
                fire(&dag_id);
                log.push(Firing {
                    dag_id,
                    due,
                    started,
                    finished: clock.now(),
                });
                continue;
            }
            let Some(next) = self.entries.iter().map(|e| e.next_due).min() else {
                break;
            };
            if next > until {
                break;
            }
            clock.sleep_until(next);
        }
        log
    }
}
