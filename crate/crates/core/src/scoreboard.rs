//! Task, level and total scores, CR/ER pass@k and speedup summaries.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{EvalRecord, Stage, RECORDS_FILE};

pub const DEFAULT_WEIGHTS: [f64; 3] = [0.2, 0.3, 0.5];

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("task has no records")]
    EmptyTask,
    #[error("level has no tasks")]
    EmptyLevel,
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})")]
    Domain { n: usize, c: usize, k: usize },
    #[error("{path}: line {line}: {message}")]
    CorruptRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: no records")]
    NoRecords(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassAtKMode {
    Unbiased,
    FirstK,
    /// Unbiased when n > k, first-k when n = k.
    Auto,
}

impl PassAtKMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unbiased" => Some(PassAtKMode::Unbiased),
            "first_k" => Some(PassAtKMode::FirstK),
            "auto" => Some(PassAtKMode::Auto),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PassAtKMode::Unbiased => "unbiased",
            PassAtKMode::FirstK => "first_k",
            PassAtKMode::Auto => "auto",
        }
    }

    fn resolve(self, n: usize, k: usize) -> PassAtKMode {
        match self {
            PassAtKMode::Auto if n > k => PassAtKMode::Unbiased,
            PassAtKMode::Auto => PassAtKMode::FirstK,
            m => m,
        }
    }
}

impl fmt::Display for PassAtKMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PassAtKMode::Auto => f.write_str("auto (unbiased when n > k, first_k when n = k)"),
            m => f.write_str(m.as_str()),
        }
    }
}

/// 100 x passed / total for the best candidate: most passing cases, ties to
/// the lowest sample index.
pub fn score_task(records: &[&EvalRecord]) -> Result<f64, ScoreError> {
    best_record(records)
        .map(|r| r.task_score_contribution())
        .ok_or(ScoreError::EmptyTask)
}

fn best_record<'a>(records: &[&'a EvalRecord]) -> Option<&'a EvalRecord> {
    records
        .iter()
        .copied()
        .min_by_key(|r| (std::cmp::Reverse(r.cases_passed()), r.sample_index))
}

pub fn score_level(task_scores: &[f64]) -> Result<f64, ScoreError> {
    if task_scores.is_empty() {
        return Err(ScoreError::EmptyLevel);
    }
    Ok(task_scores.iter().sum::<f64>() / task_scores.len() as f64)
}

pub fn score_total(l1: f64, l2: f64, l3: f64, weights: [f64; 3]) -> f64 {
    weights[0] * l1 + weights[1] * l2 + weights[2] * l3
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        // c * (n - i) is divisible by (i + 1) at every step.
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// x / y correctly rounded to f64, for 0 <= x <= y < 2^120. Rounding the
/// exact quotient once keeps pass@k monotone in k and c.
fn ratio(x: u128, y: u128) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if x == y {
        return 1.0;
    }
    let mut r = x;
    let mut exp: i32 = 0;
    while r < y {
        r <<= 1;
        exp -= 1;
    }
    // 53 significand bits plus one guard bit.
    let mut m: u64 = 0;
    for _ in 0..54 {
        if r >= y {
            m = (m << 1) | 1;
            r -= y;
        } else {
            m <<= 1;
        }
        r <<= 1;
    }
    let guard = m & 1;
    let mut mant = m >> 1;
    if guard == 1 && (r != 0 || mant & 1 == 1) {
        mant += 1;
    }
    mant as f64 * 2f64.powi(exp - 52)
}

/// Probability that at least one of k samples passes, given c of n passed.
/// `passed` is consulted only in first-k mode.
pub fn pass_at_k(
    n: usize,
    c: usize,
    k: usize,
    mode: PassAtKMode,
    passed: &[bool],
) -> Result<f64, ScoreError> {
    if c > n || k < 1 || k > n {
        return Err(ScoreError::Domain { n, c, k });
    }
    match mode.resolve(n, k) {
        PassAtKMode::FirstK => Ok(if passed.iter().take(k).any(|&p| p) { 1.0 } else { 0.0 }),
        _ => {
            if n - c < k {
                return Ok(1.0);
            }
            match (binomial(n, k), binomial(n - c, k)) {
                (Some(all), Some(none)) if all < 1 << 120 => Ok(ratio(all - none, all)),
                // Too large for exact integers: 1 - prod (1 - k/i).
                _ => Ok(1.0 - ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product::<f64>()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub level: u8,
    pub category: String,
    pub n: usize,
    pub best_sample: usize,
    pub score: f64,
    pub compiled: usize,
    pub precise: usize,
    pub cr: BTreeMap<usize, f64>,
    pub er: BTreeMap<usize, f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    /// 0 for the pooled row over all tasks.
    pub level: u8,
    pub tasks: usize,
    pub mean_score: f64,
    pub mean_cr: BTreeMap<usize, f64>,
    pub mean_er: BTreeMap<usize, f64>,
    /// Tasks without a precision-passing candidate count as 0.
    pub mean_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tasks: Vec<TaskScore>,
    pub levels: Vec<LevelScore>,
    pub mean: LevelScore,
    pub total_score: f64,
    pub weights: [f64; 3],
    pub n: usize,
    pub k_list: Vec<usize>,
    pub mode: PassAtKMode,
}

impl ScoreReport {
    pub fn level(&self, level: u8) -> Option<&LevelScore> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskScore> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

fn summarize(level: u8, tasks: &[&TaskScore], k_list: &[usize]) -> LevelScore {
    let count = tasks.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TaskScore) -> f64| tasks.iter().map(|t| f(t)).sum::<f64>() / count;
    LevelScore {
        level,
        tasks: tasks.len(),
        mean_score: mean(&|t| t.score),
        mean_cr: k_list.iter().map(|&k| (k, mean(&|t| t.cr[&k]))).collect(),
        mean_er: k_list.iter().map(|&k| (k, mean(&|t| t.er[&k]))).collect(),
        mean_speedup: mean(&|t| t.speedup.unwrap_or(0.0)),
    }
}

/// Score a record set. Records must cover samples 0..n of each task once.
pub fn score_records(
    records: &[EvalRecord],
    weights: [f64; 3],
    k_list: &[usize],
    mode: PassAtKMode,
) -> Result<ScoreReport, ScoreError> {
    let mut by_task: BTreeMap<(u8, &str, &str), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_task
            .entry((r.level, r.category.as_str(), r.task_id.as_str()))
            .or_default()
            .push(r);
    }
    let mut tasks = Vec::new();
    let mut n_max = 0;
    for ((level, category, task_id), mut recs) in by_task {
        recs.sort_by_key(|r| r.sample_index);
        let n = recs.len();
        n_max = n_max.max(n);
        let compiled_bits: Vec<bool> = recs.iter().map(|r| r.passed(Stage::Compile)).collect();
        let precise_bits: Vec<bool> = recs.iter().map(|r| r.passed(Stage::Precision)).collect();
        let compiled = compiled_bits.iter().filter(|&&b| b).count();
        let precise = precise_bits.iter().filter(|&&b| b).count();
        let mut cr = BTreeMap::new();
        let mut er = BTreeMap::new();
        for &k in k_list {
            cr.insert(k, pass_at_k(n, compiled, k, mode, &compiled_bits)?);
            er.insert(k, pass_at_k(n, precise, k, mode, &precise_bits)?);
        }
        let best = best_record(&recs).ok_or(ScoreError::EmptyTask)?;
        let speedup = recs
            .iter()
            .filter(|r| r.passed(Stage::Precision))
            .filter_map(|r| r.speedup)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
        tasks.push(TaskScore {
            task_id: task_id.to_string(),
            level,
            category: category.to_string(),
            n,
            best_sample: best.sample_index,
            score: best.task_score_contribution(),
            compiled,
            precise,
            cr,
            er,
            speedup,
        });
    }
    let levels: Vec<LevelScore> = [1u8, 2, 3]
        .into_iter()
        .filter_map(|l| {
            let in_level: Vec<&TaskScore> = tasks.iter().filter(|t| t.level == l).collect();
            (!in_level.is_empty()).then(|| summarize(l, &in_level, k_list))
        })
        .collect();
    let level_score = |l: u8| levels.iter().find(|s| s.level == l).map_or(0.0, |s| s.mean_score);
    let total_score = score_total(level_score(1), level_score(2), level_score(3), weights);
    let all: Vec<&TaskScore> = tasks.iter().collect();
    let mean = summarize(0, &all, k_list);
    Ok(ScoreReport {
        tasks,
        levels,
        mean,
        total_score,
        weights,
        n: n_max,
        k_list: k_list.to_vec(),
        mode,
    })
}

/// Read `records.jsonl` from a run directory and score it.
pub fn aggregate(
    run_dir: &Path,
    weights: [f64; 3],
    k_list: &[usize],
    mode: PassAtKMode,
) -> Result<ScoreReport, ScoreError> {
    let path = run_dir.join(RECORDS_FILE);
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|source| ScoreError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| ScoreError::CorruptRecord {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let r: EvalRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if !r.is_well_formed() {
            return Err(corrupt("stage statuses are inconsistent".into()));
        }
        if !seen.insert(r.key()) {
            return Err(corrupt(format!("duplicate record for {} sample {}", r.task_id, r.sample_index)));
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(ScoreError::NoRecords(shown));
    }
    score_records(&records, weights, k_list, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Records,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    mean: LevelScore,
    total_score: f64,
    weights: [f64; 3],
    n: usize,
    k_list: Vec<usize>,
    mode: PassAtKMode,
}

fn tagged<T: Serialize>(kind: &str, item: &T) -> String {
    let mut v = serde_json::to_value(item).expect("reports serialize");
    v.as_object_mut()
        .expect("report lines are objects")
        .insert("kind".into(), serde_json::Value::String(kind.into()));
    serde_json::to_string(&v).expect("values serialize")
}

pub fn render_records(report: &ScoreReport) -> String {
    let mut lines: Vec<String> = Vec::new();
    lines.extend(report.tasks.iter().map(|t| tagged("task", t)));
    lines.extend(report.levels.iter().map(|l| tagged("level", l)));
    lines.push(tagged(
        "summary",
        &SummaryLine {
            mean: report.mean.clone(),
            total_score: report.total_score,
            weights: report.weights,
            n: report.n,
            k_list: report.k_list.clone(),
            mode: report.mode,
        },
    ));
    lines.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_records(text: &str) -> Result<ScoreReport, ScoreError> {
    let mut tasks = Vec::new();
    let mut levels = Vec::new();
    let mut summary: Option<SummaryLine> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let corrupt = |message: String| ScoreError::CorruptRecord {
            path: "score report".into(),
            line: i + 1,
            message,
        };
        let mut v: serde_json::Value = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        let kind = v
            .as_object_mut()
            .and_then(|o| o.remove("kind"))
            .and_then(|k| k.as_str().map(str::to_string))
            .ok_or_else(|| corrupt("missing `kind`".into()))?;
        let err = |e: serde_json::Error| corrupt(e.to_string());
        match kind.as_str() {
            "task" => tasks.push(serde_json::from_value(v).map_err(err)?),
            "level" => levels.push(serde_json::from_value(v).map_err(err)?),
            "summary" => summary = Some(serde_json::from_value(v).map_err(err)?),
            other => return Err(corrupt(format!("unknown kind `{other}`"))),
        }
    }
    let s = summary.ok_or(ScoreError::CorruptRecord {
        path: "score report".into(),
        line: 0,
        message: "missing summary line".into(),
    })?;
    Ok(ScoreReport {
        tasks,
        levels,
        mean: s.mean,
        total_score: s.total_score,
        weights: s.weights,
        n: s.n,
        k_list: s.k_list,
        mode: s.mode,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pass@k mode: {}", report.mode);
    let _ = writeln!(
        out,
        "samples per task: n = {}; weights: L1 {}, L2 {}, L3 {}",
        report.n, report.weights[0], report.weights[1], report.weights[2]
    );
    out.push('\n');

    let mut header = format!("{:<8}{:>6}", "Level", "Tasks");
    for k in &report.k_list {
        header.push_str(&format!("{:>9}", format!("CR@{k}")));
    }
    for k in &report.k_list {
        header.push_str(&format!("{:>9}", format!("ER@{k}")));
    }
    header.push_str(&format!("{:>9}{:>9}", "Speedup", "Score"));
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    let row = |label: String, l: &LevelScore| {
        let mut s = format!("{label:<8}{:>6}", l.tasks);
        for v in l.mean_cr.values() {
            s.push_str(&format!("{:>9}", pct(*v)));
        }
        for v in l.mean_er.values() {
            s.push_str(&format!("{:>9}", pct(*v)));
        }
        s.push_str(&format!("{:>9.2}{:>9.2}", l.mean_speedup, l.mean_score));
        s
    };
    for l in &report.levels {
        let _ = writeln!(out, "{}", row(format!("L{}", l.level), l));
    }
    let _ = writeln!(out, "{}", row("Mean".into(), &report.mean));
    out.push('\n');
    let _ = writeln!(out, "Total score: {:.2}", report.total_score);
    out.push('\n');

    let _ = writeln!(
        out,
        "{:<6}{:<22}{:<20}{:>7}{:>9}{:>9}{:>9}",
        "Level", "Category", "Task", "Best", "Compiled", "Precise", "Speedup"
    );
    for t in &report.tasks {
        let _ = writeln!(
            out,
            "{:<6}{:<22}{:<20}{:>7}{:>9}{:>9}{:>9}  score {:.2}",
            format!("L{}", t.level),
            t.category,
            t.task_id,
            t.best_sample,
            format!("{}/{}", t.compiled, t.n),
            format!("{}/{}", t.precise, t.n),
            t.speedup.map_or("-".to_string(), |s| format!("{s:.2}")),
            t.score
        );
    }
    out
}

pub fn emit_report(report: &ScoreReport, format: ReportFormat, path: &Path) -> Result<(), ScoreError> {
    let text = match format {
        ReportFormat::TableText => render_table(report),
        ReportFormat::Records => render_records(report),
    };
    std::fs::write(path, text).map_err(|source| ScoreError::Io {
        path: path.display().to_string(),
        source,
    })
}
