use std::fmt;

use serde::{Deserialize, Serialize};

use crate::toolchain::LatencyStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Extract,
    Compile,
    Precision,
    Performance,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Generate,
        Stage::Extract,
        Stage::Compile,
        Stage::Precision,
        Stage::Performance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Extract => "extract",
            Stage::Compile => "compile",
            Stage::Precision => "precision",
            Stage::Performance => "performance",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    pub duration_ms: f64,
    /// Relative to the run directory; empty for skipped stages.
    pub log_path: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLatency {
    pub case_id: String,
    pub stats: LatencyStats,
    pub reference_ms: Option<f64>,
}

/// Everything the pipeline learned about one (task, sample) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub level: u8,
    pub category: String,
    pub sample_index: usize,
    pub started_at_ms: u64,
    pub stages: Vec<StageOutcome>,
    pub case_ids: Vec<String>,
    pub case_pass: Vec<bool>,
    pub latency: Vec<CaseLatency>,
    pub speedup: Option<f64>,
    /// Candidate directory relative to the run directory.
    pub sample_dir: String,
}

impl EvalRecord {
    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .map_or(StageStatus::Skip, |s| s.status)
    }

    pub fn passed(&self, stage: Stage) -> bool {
        self.status(stage) == StageStatus::Pass
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn cases_passed(&self) -> usize {
        self.case_pass.iter().filter(|&&p| p).count()
    }

    /// Passed cases over total cases, the candidate's share of its task score.
    pub fn task_score_contribution(&self) -> f64 {
        if self.case_pass.is_empty() {
            return 0.0;
        }
        100.0 * self.cases_passed() as f64 / self.case_pass.len() as f64
    }

    pub fn key(&self) -> (String, usize) {
        (self.task_id.clone(), self.sample_index)
    }

    /// Statuses must read `pass* (fail skip*)?` over the fixed stage order.
    pub fn is_well_formed(&self) -> bool {
        if self.stages.len() != Stage::ALL.len()
            || self.stages.iter().zip(Stage::ALL).any(|(s, want)| s.stage != want)
        {
            return false;
        }
        let mut seen_fail = false;
        for s in &self.stages {
            match (seen_fail, s.status) {
                (false, StageStatus::Pass) => {}
                (false, StageStatus::Fail) => seen_fail = true,
                (true, StageStatus::Skip) => {}
                _ => return false,
            }
        }
        self.speedup.is_none() || self.passed(Stage::Performance)
    }
}

/// Serialize a record with timestamps and durations zeroed and keys sorted,
/// so that runs can be compared byte for byte.
pub fn normalize_record(r: &EvalRecord) -> String {
    let mut r = r.clone();
    r.started_at_ms = 0;
    for s in &mut r.stages {
        s.duration_ms = 0.0;
    }
    let v = serde_json::to_value(&r).expect("records serialize");
    serde_json::to_string(&v).expect("values serialize")
}

/// Normalize every line of a `records.jsonl` body.
pub fn normalize_records_text(text: &str) -> Result<String, (usize, String)> {
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
        out.push_str(&normalize_record(&r));
        out.push('\n');
    }
    Ok(out)
}
