use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use logfuse::orchestrator::{
    map_partitions, resume, run, Clock, DagError, DagSpec, Journal, ManualClock, Registry, RunOptions, RunOutcome, Scheduler, TaskDag, TaskSpec, TaskState,
    WorkerPool,
};
use logfuse::Error;
use proptest::prelude::*;

fn registry() -> Registry {
    let mut r = Registry::builtins();
    r.register("ok", |_| Ok(()));
    r
}

/// Tasks `t0..tn`, edges only from lower to higher index.
fn dag_from(failing: &[bool], edges: &[(usize, usize)]) -> TaskDag {
    TaskDag::new(DagSpec {
        dag_id: "prop".into(),
        tasks: failing
            .iter()
            .enumerate()
            .map(|(i, &f)| TaskSpec::new(format!("t{i}"), if f { "fail" } else { "ok" }))
            .collect(),
        edges: edges.iter().map(|&(a, b)| (format!("t{a}"), format!("t{b}"))).collect(),
        schedule_seconds: None,
    })
    .unwrap()
}

/// Reference semantics: skipped if anything upstream did not succeed.
fn oracle(failing: &[bool], edges: &[(usize, usize)]) -> Vec<TaskState> {
    let mut out: Vec<TaskState> = Vec::with_capacity(failing.len());
    for (j, &fails) in failing.iter().enumerate() {
        let blocked = edges.iter().any(|&(a, b)| b == j && out[a] != TaskState::Success);
        out.push(match (blocked, fails) {
            (true, _) => TaskState::Skipped,
            (false, true) => TaskState::Failed,
            (false, false) => TaskState::Success,
        });
    }
    out
}

fn dag_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<(usize, usize)>)> {
    (1usize..=20).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        let m = pairs.len();
        (
            prop::collection::vec(prop::bool::weighted(0.15), n),
            prop::collection::vec(prop::bool::weighted(0.2), m).prop_map(move |keep| pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn failure_propagation_matches_reachability((failing, edges) in dag_strategy()) {
        let dag = dag_from(&failing, &edges);
        let pool = WorkerPool::new(3);
        let report = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap().report().unwrap();
        let expected = oracle(&failing, &edges);
        for (i, want) in expected.iter().enumerate() {
            prop_assert_eq!(report.state(&format!("t{i}")), Some(*want), "task t{}", i);
        }
        prop_assert!(report.is_complete());
        prop_assert_eq!(report.succeeded(), expected.iter().all(|s| *s == TaskState::Success));
    }

    #[test]
    fn halted_runs_resume_to_the_same_states((failing, edges) in dag_strategy(), cut in 1usize..60) {
        let dag = dag_from(&failing, &edges);
        let pool = WorkerPool::new(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let options = RunOptions { halt_after: Some(cut), ..RunOptions::default() };
        let outcome = run(&dag, &registry(), &pool, &mut Journal::open(&path).unwrap(), &options).unwrap();
        let run_id = match outcome {
            RunOutcome::Halted { run_id } => run_id,
            RunOutcome::Completed(r) => r.run_id,
        };
        // a fresh process reads the file back
        let mut journal = Journal::open(&path).unwrap();
        let report = resume(&run_id, &registry(), &pool, &mut journal, &RunOptions::default()).unwrap().report().unwrap();
        let expected = oracle(&failing, &edges);
        for (i, want) in expected.iter().enumerate() {
            prop_assert_eq!(report.state(&format!("t{i}")), Some(*want), "task t{}", i);
        }
        prop_assert!(report.is_complete());
        prop_assert_eq!(Journal::open(&path).unwrap().report(&run_id), Some(report));
    }

    #[test]
    fn map_partitions_equals_sequential_map(data in prop::collection::vec(any::<i32>(), 0..300), n in 1usize..12) {
        let seen = Mutex::new(Vec::new());
        let out = map_partitions(&data, n, |i, part| {
            seen.lock().unwrap().push((i, part.len()));
            Ok::<_, String>(part.iter().map(|x| i64::from(*x) * 3).collect())
        })
        .unwrap();
        let expected: Vec<i64> = data.iter().map(|x| i64::from(*x) * 3).collect();
        prop_assert_eq!(out, expected);
        let seen = seen.into_inner().unwrap();
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(seen.iter().map(|s| s.1).sum::<usize>(), data.len());
        let sizes: Vec<usize> = seen.iter().map(|s| s.1).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn scheduler_fires_floor_of_horizon_over_interval(interval in 1u64..50, horizon in 0u64..500, cost in 0u64..10) {
        let dag = TaskDag::new(DagSpec {
            dag_id: "tick".into(),
            tasks: vec![TaskSpec::new("a", "ok")],
            edges: vec![],
            schedule_seconds: Some(interval),
        })
        .unwrap();
        let clock = ManualClock::new(0);
        let mut scheduler = Scheduler::new([&dag], clock.now());
        let firings = scheduler.run_until(&clock, horizon, |_| clock.advance(cost));
        prop_assert_eq!(firings.len() as u64, horizon / interval);
        for w in firings.windows(2) {
            prop_assert!(w[0].finished <= w[1].started, "runs overlap");
            prop_assert!(w[0].due < w[1].due);
        }
    }
}

#[test]
fn failing_partition_fails_the_call() {
    let data: Vec<u32> = (0..100).collect();
    let err = map_partitions(&data, 4, |i, part| if i == 2 { Err("bad slice") } else { Ok(part.to_vec()) }).unwrap_err();
    assert!(matches!(err, Error::Partition { index: 2, .. }), "{err}");
    assert!(map_partitions(&data, 0, |_, p| Ok::<_, String>(p.to_vec())).is_err());
}

#[test]
fn diamond_runs_join_after_both_branches() {
    let dag = TaskDag::new(DagSpec {
        dag_id: "diamond".into(),
        tasks: vec![
            TaskSpec::new("a", "ok"),
            TaskSpec::new("b", "sleep").with_params(serde_json::json!({"ms": 30})),
            TaskSpec::new("c", "sleep").with_params(serde_json::json!({"ms": 10})),
            TaskSpec::new("d", "ok"),
        ],
        edges: vec![("a".into(), "b".into()), ("a".into(), "c".into()), ("b".into(), "d".into()), ("c".into(), "d".into())],
        schedule_seconds: None,
    })
    .unwrap();
    let pool = WorkerPool::new(2);
    let report = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap().report().unwrap();
    assert!(report.succeeded());
    let start = |t: &str| report.task(t).unwrap().attempts[0].started_at_us;
    let end = |t: &str| report.task(t).unwrap().finished_at_us.unwrap();
    assert!(start("b") >= end("a") && start("c") >= end("a"));
    assert!(start("d") >= end("b") && start("d") >= end("c"));
}

#[test]
fn no_task_starts_before_its_upstream_finishes() {
    let pool = WorkerPool::new(4);
    let mut r = registry();
    let running = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    {
        let (running, peak) = (Arc::clone(&running), Arc::clone(&peak));
        r.register("busy", move |_| {
            let now = running.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            running.fetch_sub(1, Ordering::SeqCst);
            Ok(())
        });
    }
    let n = 12;
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).filter(move |i| (i + j) % 3 == 0).map(move |i| (i, j))).collect();
    let dag = TaskDag::new(DagSpec {
        dag_id: "overlap".into(),
        tasks: (0..n).map(|i| TaskSpec::new(format!("t{i}"), "busy")).collect(),
        edges: edges.iter().map(|&(a, b)| (format!("t{a}"), format!("t{b}"))).collect(),
        schedule_seconds: None,
    })
    .unwrap();
    let report = run(&dag, &r, &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap().report().unwrap();
    assert!(report.succeeded());
    for (a, b) in edges {
        let up = report.task(&format!("t{a}")).unwrap();
        let down = report.task(&format!("t{b}")).unwrap();
        assert!(down.attempts[0].started_at_us >= up.finished_at_us.unwrap(), "t{b} started before t{a} finished");
    }
    assert!(peak.load(Ordering::SeqCst) <= pool.size());
}

#[test]
fn panicking_payload_is_retried_then_failed() {
    let dag = TaskDag::chain("p", &[("boom", "panic"), ("after", "ok")]).unwrap();
    let pool = WorkerPool::new(1);
    let report = run(&dag, &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap().report().unwrap();
    let boom = report.task("boom").unwrap();
    assert_eq!(boom.state, TaskState::Failed);
    assert_eq!(boom.attempts.len(), 2);
    assert!(boom.error.as_deref().unwrap().contains("panicked"));
    assert_eq!(report.state("after"), Some(TaskState::Skipped));

    // the pool survives the panic
    let again = run(&TaskDag::chain("q", &[("x", "ok")]).unwrap(), &registry(), &pool, &mut Journal::in_memory(), &RunOptions::default()).unwrap();
    assert!(again.report().unwrap().succeeded());
}

#[test]
fn flaky_task_succeeds_on_redelivery() {
    let dag = TaskDag::chain("f", &[("flaky", "flaky"), ("next", "ok")]).unwrap();
    let mut r = registry();
    let calls = Arc::new(AtomicUsize::new(0));
    {
        let calls = Arc::clone(&calls);
        r.register("flaky", move |_| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                panic!("first delivery dies");
            }
            Ok(())
        });
    }
    let report = run(&dag, &r, &WorkerPool::new(1), &mut Journal::in_memory(), &RunOptions::default()).unwrap().report().unwrap();
    assert!(report.succeeded());
    assert_eq!(report.task("flaky").unwrap().attempts.len(), 2);
}

#[test]
fn dag_files_are_validated() {
    let cycle: DagSpec = serde_json::from_str(r#"{"dag_id":"c","tasks":[{"name":"a","payload":"ok"},{"name":"b","payload":"ok"}],"edges":[["a","b"],["b","a"]]}"#).unwrap();
    assert!(matches!(TaskDag::new(cycle), Err(DagError::Cycle(_))));
    let dangling: DagSpec = serde_json::from_str(r#"{"dag_id":"d","tasks":[{"name":"a","payload":"ok"}],"edges":[["a","zz"]]}"#).unwrap();
    assert!(matches!(TaskDag::new(dangling), Err(DagError::UnknownTask(_))));
    let unknown = TaskDag::chain("u", &[("a", "no-such-payload")]).unwrap();
    let err = run(&unknown, &registry(), &WorkerPool::new(1), &mut Journal::in_memory(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dag(DagError::UnknownPayload(_))));
}

#[test]
fn journal_lists_runs_per_dag_file() {
    let dir = tempfile::tempdir().unwrap();
    let dag = TaskDag::chain("listed", &[("a", "ok"), ("b", "ok")]).unwrap();
    let pool = WorkerPool::new(1);
    let mut ids = HashSet::new();
    for _ in 0..3 {
        let mut j = Journal::for_dag(dir.path(), "listed").unwrap();
        ids.insert(run(&dag, &registry(), &pool, &mut j, &RunOptions::default()).unwrap().report().unwrap().run_id);
    }
    let reports = Journal::for_dag(dir.path(), "listed").unwrap().reports();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports.iter().map(|r| r.run_id.clone()).collect::<HashSet<_>>(), ids);
    assert!(reports.iter().all(|r| r.succeeded() && r.dag_id == "listed"));
}
