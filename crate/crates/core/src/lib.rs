//! Evaluation and feedback harness for LLM-generated compute kernels.
//!
//! The crate is organized along the life of a benchmark run:
//!
//! - [`tasks`] loads the hierarchical task suite and materializes test data
//!   and golden references.
//! - [`prompt`] assembles generation prompts and extracts candidate code from
//!   raw model output.
//! - [`generator`] obtains raw outputs, either from a chat-completion
//!   endpoint or from scripted fixtures.
//! - [`toolchain`] compiles, executes and times candidates behind a
//!   pluggable backend.
//! - [`verdicts`] holds the element-wise precision oracle and speedup
//!   normalization.
//! - [`orchestrator`] drives the staged pipeline over every task and sample.
//! - [`scoreboard`] aggregates records into task, level and total scores
//!   and pass@k tables.
//! - [`feedback`] turns a finished run into training signals.

pub mod config;
pub mod feedback;
pub mod generator;
pub mod orchestrator;
pub mod prompt;
pub mod scoreboard;
pub mod tasks;
pub mod toolchain;
pub mod verdicts;

pub use orchestrator::{run_suite, RunConfig, RunSummary};
pub use tasks::{load_manifest, DType, Level, TaskSpec, TaskSuite, TensorData};
