//! Compile-failure diagnostic reports and precision-failure reconstruction.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::taxonomy::{classify_error, ErrorCategory};
use super::{load_candidate, FeedbackError};
use crate::generator::{ChatMessage, ChatRequest, ChatTransport, GenError, TransportError};
use crate::orchestrator::{EvalRecord, Stage, StageStatus};
use crate::prompt::{extract_candidate, render_tagged, strip_reasoning, Candidate};
use crate::tasks::TaskSpec;

/// Lines kept when a log has no recognizable error block.
pub const EXCERPT_FALLBACK_LINES: usize = 40;

pub const SYNTHESIS_INSTRUCTION: &str = "You are reviewing a failed compilation of a compute kernel. \
Read the diagnostic report below. Explain the root cause step by step inside <think></think>, \
then give the complete corrected kernel inside <kernel_impl></kernel_impl> \
(and the corrected host code inside <host_impl></host_impl> if it also needs changes).";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    /// No endpoint was used; only the report is available.
    ReportOnly,
    Synthesized,
    /// The endpoint answered but the reply had no reasoning or code.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSample {
    pub task_id: String,
    pub sample_index: usize,
    pub category: ErrorCategory,
    pub error_excerpt: String,
    pub code_context: String,
    pub api_reference: String,
    pub report_md: String,
    pub reasoning: Option<String>,
    pub corrected_code: Option<String>,
    pub status: SampleStatus,
}

/// From the first line mentioning "error" up to the next blank line, or the
/// head of the log when there is no such line.
pub fn error_excerpt(log: &str) -> String {
    let lines: Vec<&str> = log.lines().collect();
    match lines.iter().position(|l| l.to_lowercase().contains("error")) {
        Some(start) => lines[start..]
            .iter()
            .take_while(|l| !l.trim().is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join("\n"),
        None => lines.iter().take(EXCERPT_FALLBACK_LINES).copied().collect::<Vec<_>>().join("\n"),
    }
}

const STOPWORDS: &[&str] = &[
    "error", "warning", "note", "the", "and", "for", "with", "this", "that", "from", "function", "in",
    "of", "to", "is", "not", "was", "int", "float", "void", "const", "char", "return", "kernel", "host",
];

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| t.len() >= 3 && !t.chars().next().unwrap().is_ascii_digit())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// The API description section whose heading shares the most symbols with
/// the error, or the whole description when none does.
pub fn relevant_api_section(api_description: &str, excerpt: &str) -> String {
    let wanted = tokens(excerpt);
    let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
    for line in api_description.lines() {
        if line.trim_start().starts_with('#') {
            sections.push((line.to_string(), vec![line]));
        } else if let Some(last) = sections.last_mut() {
            last.1.push(line);
        }
    }
    let mut best: Option<(usize, &Vec<&str>)> = None;
    for (heading, body) in &sections {
        let overlap = tokens(heading).intersection(&wanted).count();
        if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, body));
        }
    }
    match best {
        Some((_, body)) => body.join("\n").trim_end().to_string(),
        None => api_description.trim_end().to_string(),
    }
}

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{}\n```", body.trim_end())
}

fn code_context(c: &Candidate) -> String {
    let mut out = Vec::new();
    if let Some(k) = &c.kernel_code {
        out.push(format!("### Kernel\n\n{}", fenced("c", k)));
    }
    if let Some(h) = &c.host_code {
        out.push(format!("### Host\n\n{}", fenced("c", h)));
    }
    if let Some(t) = &c.tiling_code {
        out.push(format!("### Tiling header\n\n{}", fenced("c", t)));
    }
    if out.is_empty() {
        out.push("(no code was extracted)".into());
    }
    out.join("\n\n")
}

pub fn build_diagnostic_report(
    run_dir: &Path,
    record: &EvalRecord,
    task: &TaskSpec,
) -> Result<CorrectionSample, FeedbackError> {
    let compile = record
        .stage(Stage::Compile)
        .filter(|s| s.status == StageStatus::Fail)
        .ok_or_else(|| FeedbackError::NotAFailure {
            task_id: record.task_id.clone(),
            sample: record.sample_index,
        })?;
    let log = std::fs::read_to_string(run_dir.join(&compile.log_path)).unwrap_or_else(|_| compile.detail.clone());
    let candidate = load_candidate(run_dir, record);
    let excerpt = error_excerpt(&log);
    let category = classify_error(&log);
    let context = code_context(&candidate);
    let api = relevant_api_section(&task.api_description, &excerpt);
    let report_md = format!(
        "# Compilation Diagnostic Report\n\n\
         Task: {} (Level {}, {}), sample {}\n\
         Error category: {}\n\n\
         ## Error Log Excerpt\n\n{}\n\n\
         ## Code Context\n\n{}\n\n\
         ## API Reference\n\n{}\n",
        task.task_id,
        task.level.number(),
        task.category,
        record.sample_index,
        category,
        fenced("text", &excerpt),
        context,
        api
    );
    Ok(CorrectionSample {
        task_id: record.task_id.clone(),
        sample_index: record.sample_index,
        category,
        error_excerpt: excerpt,
        code_context: context,
        api_reference: api,
        report_md,
        reasoning: None,
        corrected_code: None,
        status: SampleStatus::ReportOnly,
    })
}

/// Endpoint settings for filling in reasoning and corrected code.
pub struct Synthesis {
    pub transport: Box<dyn ChatTransport>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
}

pub fn synthesize_correction(
    sample: &CorrectionSample,
    task: &TaskSpec,
    synth: &Synthesis,
) -> Result<CorrectionSample, GenError> {
    let req = ChatRequest {
        model: synth.model.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: SYNTHESIS_INSTRUCTION.into(),
            },
            ChatMessage {
                role: "user".into(),
                content: sample.report_md.clone(),
            },
        ],
        temperature: 0.0,
        top_p: 1.0,
        max_tokens: 4096,
    };
    let mut attempts = 0;
    let reply = loop {
        attempts += 1;
        match synth.transport.complete(&req, synth.timeout) {
            Ok(text) => break text,
            Err(TransportError::Retryable(e)) if attempts <= synth.max_retries => {
                tracing::warn!(task = %sample.task_id, attempts, error = %e, "synthesis attempt failed");
            }
            Err(TransportError::Retryable(last) | TransportError::Fatal(last)) => {
                return Err(GenError::EndpointExhausted { attempts, last })
            }
        }
    };
    let parsed = extract_candidate(&reply, task, sample.sample_index);
    let mut out = sample.clone();
    match (parsed.think, parsed.kernel_code) {
        (Some(think), Some(kernel)) if !think.is_empty() && !kernel.trim().is_empty() => {
            out.reasoning = Some(think);
            out.corrected_code = Some(render_tagged(
                None,
                parsed.host_code.as_deref(),
                Some(&kernel),
                parsed.tiling_code.as_deref(),
            ));
            out.status = SampleStatus::Synthesized;
        }
        _ => out.status = SampleStatus::Rejected,
    }
    Ok(out)
}

/// Records whose code compiled but produced wrong results.
pub fn harvest_precision_failures(run_dir: &Path, records: &[EvalRecord]) -> Vec<(EvalRecord, Candidate)> {
    records
        .iter()
        .filter(|r| r.passed(Stage::Compile) && r.status(Stage::Precision) == StageStatus::Fail)
        .map(|r| (r.clone(), load_candidate(run_dir, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSample {
    pub task_id: String,
    pub sample_index: usize,
    pub prompt: String,
}

pub fn build_reconstruction_prompt(task: &TaskSpec, c: &Candidate) -> Result<String, FeedbackError> {
    let gt = task
        .ground_truth
        .as_ref()
        .ok_or_else(|| FeedbackError::NoGroundTruth(task.task_id.clone()))?;
    let strip = |s: &Option<String>| s.as_deref().map(strip_reasoning);
    let (host, kernel, tiling) = (strip(&c.host_code), strip(&c.kernel_code), strip(&c.tiling_code));
    let erroneous = render_tagged(None, host.as_deref(), kernel.as_deref(), tiling.as_deref());
    let reference = render_tagged(None, gt.host.as_deref(), Some(&gt.kernel), gt.tiling.as_deref());
    Ok(format!(
        "# Kernel Reconstruction\n\n\
         The code below compiles but fails the precision check for task {} \
         (Level {}, {}). A correct reference implementation is provided. \
         Reconstruct a correct kernel: reason about what the erroneous code gets wrong \
         inside <think></think>, then emit the full kernel inside <kernel_impl></kernel_impl>.\n\n\
         ## Problem Description\n\n{}\n\n\
         ## Erroneous Code\n\n{}\n\
         ## Reference Implementation\n\n{}",
        task.task_id,
        task.level.number(),
        task.category,
        task.api_description.trim_end(),
        erroneous,
        reference
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpt_runs_to_blank_line() {
        let log = "$ cc -o x\nkernel.c: In function 'run_kernel':\nkernel.c:4:3: error: 'n' undeclared\n    4 | n = 1;\n\nmore noise\n";
        assert_eq!(error_excerpt(log), "kernel.c:4:3: error: 'n' undeclared\n    4 | n = 1;");
    }

    #[test]
    fn excerpt_fallback_is_head() {
        let log: String = (0..100).map(|i| format!("line {i}\n")).collect();
        let e = error_excerpt(&log);
        assert_eq!(e.lines().count(), EXCERPT_FALLBACK_LINES);
        assert!(e.starts_with("line 0"));
    }

    #[test]
    fn section_by_heading_overlap() {
        let api = "# Overview\nshim basics\n\n## kb_attr\nReads an attribute.\n\n## kb_compute_tiling\nFills tiling.\n";
        let s = relevant_api_section(api, "kernel.c:3: error: too few arguments to function 'kb_attr'");
        assert!(s.starts_with("## kb_attr"), "{s}");
        assert!(!s.contains("kb_compute_tiling"));
        assert_eq!(relevant_api_section(api, "segfault"), api.trim_end());
    }
}
