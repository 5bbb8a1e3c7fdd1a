//! Holds the `acceptance` test target, which prints one PASS, FAIL or SKIP
//! line per criterion. Run it alone with `cargo test -p logfuse-testsuite`.
//!
//! It lives in its own package so that a failing criterion does not stop
//! cargo before the other crates' tests have run.
