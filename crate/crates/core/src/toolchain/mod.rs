//! Backends that compile, run and time candidate code.
//!
//! [`LocalCc`] builds candidates with the system C compiler against the
//! harness shim; [`MockBackend`] replays a script and never touches a
//! compiler. Both implement [`Backend`].

mod local_cc;
mod mock;
pub mod process;
pub mod wire;

pub use local_cc::{LocalCc, SHIM_DRIVER, SHIM_HEADER, SHIM_TILING_DEFAULT};
pub use mock::{MockBackend, MockEntry, OutputRule, ScriptedRun};
pub use process::ProcessRegistry;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Candidate;
use crate::tasks::{Attrs, TaskSpec, TensorData, TensorSpec};

#[derive(Debug, Error)]
pub enum ToolchainError {
    #[error("compiler `{0}` not found; set toolchain.cc to an installed C compiler")]
    CompilerNotFound(String),
    #[error("mock script line {line}: {message}")]
    MalformedScript { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileVerdict {
    pub success: bool,
    pub log_text: String,
    pub log_path: PathBuf,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    RuntimeError,
    Timeout,
    Crashed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::RuntimeError => "runtime_error",
            RunStatus::Timeout => "timeout",
            RunStatus::Crashed => "crashed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunVerdict {
    pub status: RunStatus,
    pub outputs: Option<Vec<TensorData>>,
    pub diagnostics: String,
}

impl RunVerdict {
    pub fn ok(outputs: Vec<TensorData>) -> Self {
        RunVerdict {
            status: RunStatus::Ok,
            outputs: Some(outputs),
            diagnostics: String::new(),
        }
    }

    pub fn failed(status: RunStatus, diagnostics: impl Into<String>) -> Self {
        debug_assert!(status != RunStatus::Ok);
        RunVerdict {
            status,
            outputs: None,
            diagnostics: diagnostics.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub warmup: u32,
    pub runs: u32,
    pub per_run_ms: Vec<f64>,
    pub mean_ms: f64,
}

impl LatencyStats {
    pub fn from_runs(warmup: u32, per_run_ms: Vec<f64>) -> Self {
        let mean_ms = if per_run_ms.is_empty() {
            0.0
        } else {
            per_run_ms.iter().sum::<f64>() / per_run_ms.len() as f64
        };
        LatencyStats {
            warmup,
            runs: per_run_ms.len() as u32,
            per_run_ms,
            mean_ms,
        }
    }
}

/// Where a backend may write while evaluating one candidate.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Candidate directory; everything the backend writes goes below it.
    pub dir: PathBuf,
    /// Destination of the compile log.
    pub log_path: PathBuf,
    /// TMPDIR handed to candidate processes; scanned for leftovers after a run.
    pub tmp_root: PathBuf,
    pub procs: ProcessRegistry,
    pub compile_limit: Duration,
}

/// A successfully compiled candidate. Only backends can create one, so
/// execution without a passing compile is unrepresentable.
#[derive(Debug, Clone)]
pub struct Artifact {
    dir: PathBuf,
    binary: Option<PathBuf>,
    task_id: String,
    sample_index: usize,
    reference_op: String,
    tmp_root: PathBuf,
    procs: ProcessRegistry,
}

impl Artifact {
    fn new(ws: &Workspace, binary: Option<PathBuf>, c: &Candidate, t: &TaskSpec) -> Self {
        Artifact {
            dir: ws.dir.clone(),
            binary,
            task_id: t.task_id.clone(),
            sample_index: c.sample_index,
            reference_op: t.reference_op.clone(),
            tmp_root: ws.tmp_root.clone(),
            procs: ws.procs.clone(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn sample_index(&self) -> usize {
        self.sample_index
    }
}

/// One test case to run through an artifact.
#[derive(Debug, Clone)]
pub struct ExecRequest {
    pub case_id: String,
    pub inputs: Vec<TensorData>,
    pub attrs: Attrs,
    /// Declared output dtypes and shapes.
    pub outputs: Vec<TensorSpec>,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Candidate-induced failures are `success = false` verdicts; only
    /// harness misconfiguration is an error.
    fn compile(
        &self,
        ws: &Workspace,
        c: &Candidate,
        t: &TaskSpec,
    ) -> Result<(CompileVerdict, Option<Artifact>), ToolchainError>;

    fn execute(&self, a: &Artifact, req: &ExecRequest, limit: Duration) -> RunVerdict;

    /// `warmup` unrecorded runs followed by `runs` timed runs. Any failure
    /// is returned as a message and becomes a performance-stage failure.
    fn measure(
        &self,
        a: &Artifact,
        req: &ExecRequest,
        warmup: u32,
        runs: u32,
        limit: Duration,
    ) -> Result<LatencyStats, String>;
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ToolchainError + '_ {
    move |source| ToolchainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_mean() {
        let s = LatencyStats::from_runs(2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean_ms, 2.5);
        assert_eq!(s.runs, 4);
        let s = LatencyStats::from_runs(0, vec![0.7]);
        assert_eq!(s.mean_ms, 0.7);
    }
}
