//! Training signals derived from a finished run: error taxonomy, compile
//! diagnostics, reconstruction prompts, preference pairs and reward traces.

mod correction;
mod signals;
mod taxonomy;

pub use correction::{
    build_diagnostic_report, build_reconstruction_prompt, error_excerpt, harvest_precision_failures,
    relevant_api_section, synthesize_correction, CorrectionSample, ReconstructionSample, SampleStatus,
    Synthesis, EXCERPT_FALLBACK_LINES, SYNTHESIS_INSTRUCTION,
};
pub use signals::{
    balance_samples, build_preference_pairs, is_negative, is_positive, parse_tiling_summary, reward_trace,
    verify_tiling_summary, Completion, Milestone, PreferencePair, RewardConfig, RewardTrace,
};
pub use taxonomy::{classify_error, error_distribution, ErrorCategory, ErrorDistribution};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::orchestrator::{read_records, EvalRecord, Stage};
use crate::prompt::Candidate;
use crate::tasks::TaskSpec;

pub const FEEDBACK_DIR: &str = "feedback";

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    pub pairs_per_task: usize,
    /// Must be configured explicitly; reward traces are skipped without it.
    pub rewards: Option<RewardConfig>,
    pub perf_threshold: f64,
    /// Per-key sample quota; no balancing when absent.
    pub quota: Option<usize>,
    pub augment: bool,
    /// Only tasks failing at least this share of candidates feed correction
    /// and reconstruction samples.
    pub min_failure_rate: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            pairs_per_task: 4,
            rewards: None,
            perf_threshold: 1.0,
            quota: None,
            augment: false,
            min_failure_rate: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("{task_id} sample {sample} did not fail compilation")]
    NotAFailure { task_id: String, sample: usize },
    #[error("task `{0}` ships no ground-truth implementation")]
    NoGroundTruth(String),
    #[error("records reference unknown task `{0}`")]
    UnknownTask(String),
    #[error("{0}")]
    Records(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Rebuild a candidate from the files the orchestrator left in its sample
/// directory.
pub fn load_candidate(run_dir: &Path, r: &EvalRecord) -> Candidate {
    let dir = run_dir.join(&r.sample_dir);
    let read = |p: PathBuf| fs::read_to_string(p).ok();
    let ext = dir.join("extracted");
    Candidate {
        task_id: r.task_id.clone(),
        sample_index: r.sample_index,
        raw_output: read(dir.join("raw_output.txt")).unwrap_or_default(),
        think: read(ext.join("think.md")),
        host_code: read(ext.join("host.c")),
        kernel_code: read(ext.join("kernel.c")),
        tiling_code: read(ext.join("tiling.h")),
        extraction_ok: r.passed(Stage::Extract),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExportSummary {
    pub correction_samples: usize,
    pub reconstruction_prompts: usize,
    pub preference_pairs: usize,
    pub reward_traces: Option<usize>,
    pub compile_failures: usize,
    pub skipped: Vec<String>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FeedbackError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("feedback items serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| FeedbackError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn failure_rates(records: &[EvalRecord]) -> BTreeMap<&str, f64> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.task_id.as_str()).or_default();
        e.1 += 1;
        if !r.passed(Stage::Precision) {
            e.0 += 1;
        }
    }
    counts.into_iter().map(|(k, (f, n))| (k, f as f64 / n as f64)).collect()
}

/// Write every feedback artifact under `<run_dir>/feedback/`.
pub fn export_feedback(
    run_dir: &Path,
    suite: &[TaskSpec],
    cfg: &FeedbackConfig,
    seed: u64,
    synth: Option<&Synthesis>,
) -> Result<ExportSummary, FeedbackError> {
    let records = read_records(&run_dir.join(crate::orchestrator::RECORDS_FILE))
        .map_err(|e| FeedbackError::Records(e.to_string()))?;
    let task = |id: &str| {
        suite
            .iter()
            .find(|t| t.task_id == id)
            .ok_or_else(|| FeedbackError::UnknownTask(id.to_string()))
    };
    let out_dir = run_dir.join(FEEDBACK_DIR);
    fs::create_dir_all(&out_dir).map_err(|source| FeedbackError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let mut summary = ExportSummary::default();
    let rates = failure_rates(&records);
    let challenging = |r: &EvalRecord| rates.get(r.task_id.as_str()).copied().unwrap_or(0.0) >= cfg.min_failure_rate;

    let dist = error_distribution(run_dir, &records);
    summary.compile_failures = dist.total;
    fs::write(out_dir.join("error_distribution.txt"), dist.render()).map_err(|source| FeedbackError::Io {
        path: out_dir.join("error_distribution.txt"),
        source,
    })?;

    let mut corrections = Vec::new();
    for r in records.iter().filter(|r| r.status(Stage::Compile) == crate::orchestrator::StageStatus::Fail) {
        if !challenging(r) {
            continue;
        }
        let t = task(&r.task_id)?;
        let sample = build_diagnostic_report(run_dir, r, t)?;
        let sample = match synth {
            None => sample,
            Some(s) => match synthesize_correction(&sample, t, s) {
                Ok(done) => done,
                Err(e) => {
                    summary.skipped.push(format!("{} sample {}: {e}", r.task_id, r.sample_index));
                    continue;
                }
            },
        };
        corrections.push(sample);
    }
    if let Some(q) = cfg.quota {
        corrections = balance_samples(&corrections, q, |s| s.category.as_str().to_string(), cfg.augment, seed);
    }
    summary.correction_samples = corrections.len();
    write_jsonl(&out_dir.join("correction_samples.jsonl"), &corrections)?;

    let mut reconstructions = Vec::new();
    for (r, c) in harvest_precision_failures(run_dir, &records) {
        if !challenging(&r) {
            continue;
        }
        match build_reconstruction_prompt(task(&r.task_id)?, &c) {
            Ok(prompt) => reconstructions.push(ReconstructionSample {
                task_id: r.task_id.clone(),
                sample_index: r.sample_index,
                prompt,
            }),
            Err(e) => summary.skipped.push(e.to_string()),
        }
    }
    if let Some(q) = cfg.quota {
        reconstructions = balance_samples(&reconstructions, q, |s| s.task_id.clone(), cfg.augment, seed);
    }
    summary.reconstruction_prompts = reconstructions.len();
    write_jsonl(&out_dir.join("reconstruction_prompts.jsonl"), &reconstructions)?;

    let pairs = build_preference_pairs(run_dir, &records, cfg.pairs_per_task);
    summary.preference_pairs = pairs.len();
    write_jsonl(&out_dir.join("preference_pairs.jsonl"), &pairs)?;

    let traces_path = out_dir.join("reward_traces.jsonl");
    match &cfg.rewards {
        Some(rc) => {
            let traces: Vec<RewardTrace> = records.iter().map(|r| reward_trace(r, rc, cfg.perf_threshold)).collect();
            summary.reward_traces = Some(traces.len());
            write_jsonl(&traces_path, &traces)?;
        }
        None => {
            let _ = fs::remove_file(&traces_path);
            summary
                .skipped
                .push("reward traces: feedback.reward.* is not configured".into());
        }
    }
    Ok(summary)
}
