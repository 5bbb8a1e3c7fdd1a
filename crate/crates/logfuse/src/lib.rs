//! Log anomaly detection as a service.
//!
//! The models and algorithms live in `logfuse_core`. This crate adds what
//! needs an operating system: header profiles and batch parsing, file
//! formats, the task orchestrator, the pipelines built on it, the HTTP API
//! and synthetic data generators used by the CLI and the tests.

pub mod config;
pub mod error;
pub mod http;
pub mod io;
pub mod orchestrator;
pub mod parse;
pub mod pipeline;
pub mod profile;
pub mod service;
pub mod sink;
pub mod synth;

pub use error::{Error, Result};
