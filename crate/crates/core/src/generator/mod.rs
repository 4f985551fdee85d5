//! Sources of raw candidate text: a chat-completion endpoint or scripted
//! fixtures on disk.

mod endpoint;
mod scripted;

pub use endpoint::{
    request_samples, request_samples_with, Backoff, ChatMessage, ChatRequest, ChatTransport, SamplingParams,
    EndpointConfig, EndpointGenerator, HttpTransport, Sleeper, ThreadSleeper, TransportError,
    API_KEY_ENV,
};
pub use scripted::{scripted_generate, ScriptedGenerator};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptBundle;
use crate::tasks::TaskSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("no generation fixtures for task `{0}`")]
    NoFixtures(String),
    #[error("endpoint exhausted after {attempts} attempts: {last}")]
    EndpointExhausted { attempts: u32, last: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone)]
pub struct GenRequest {
    pub prompt: PromptBundle,
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenFailure {
    pub sample: usize,
    pub attempt: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenResult {
    /// One slot per requested sample; `None` marks a sample that never arrived.
    pub raw_outputs: Vec<Option<String>>,
    /// Attempts spent on each sample.
    pub attempts: Vec<u32>,
    pub failures: Vec<GenFailure>,
}

impl GenResult {
    pub fn all_succeeded(&self) -> bool {
        self.raw_outputs.iter().all(Option::is_some)
    }
}

/// Outcome of generating a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGen {
    pub output: Result<String, GenError>,
    pub attempts: u32,
    pub failures: Vec<GenFailure>,
}

/// Per-sample generation used by the orchestrator.
pub trait Generator: Send + Sync {
    fn generate(&self, task: &TaskSpec, prompt: &PromptBundle, sample_index: usize) -> SampleGen;
}
