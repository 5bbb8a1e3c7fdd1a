//! Embedded task orchestration: DAG definitions, a worker pool fed by an
//! in-process queue, a file-backed status journal, partition-parallel map and
//! an interval scheduler.

mod dag;
mod executor;
mod journal;
mod partition;
mod scheduler;

pub use dag::{DagError, DagSpec, TaskDag, TaskSpec};
pub use executor::{now_us, resume, run, Payload, Registry, RunOptions, RunOutcome, TaskContext, WorkerPool, DEFAULT_MAX_ATTEMPTS};
pub use journal::{Attempt, Journal, Record, RunReport, TaskRun, TaskState};
pub use partition::{map_partitions, partition_bounds};
pub use scheduler::{Clock, Firing, ManualClock, Scheduler, SystemClock};

pub(crate) fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

#[cfg(test)]
mod tests {
    #[test]
    fn message_comes_from_the_boxed_payload() {
        let p = std::panic::catch_unwind(|| panic!("lost {}", 7)).unwrap_err();
        assert_eq!(super::panic_message(&*p), "lost 7");
        let p = std::panic::catch_unwind(|| panic!("static")).unwrap_err();
        assert_eq!(super::panic_message(&*p), "static");
    }
}
