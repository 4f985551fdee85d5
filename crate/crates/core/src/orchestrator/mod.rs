//! Staged evaluation of every (task, sample) pair.
//!
//! Each candidate moves through generate, extract, compile, precision and
//! performance; the first failing stage skips the rest. Candidates run on a
//! pool of worker threads, while untrusted code only ever runs in child
//! processes owned by the backend. Records are appended to `records.jsonl`
//! in canonical (task, sample) order regardless of completion order.

mod cleanup;
mod config;
mod record;

pub use cleanup::{cleanup_guard, LeakDetected, LeakReport};
pub use config::{BackendKind, GenConfig, GeneratorKind, PerfConfig, RunConfig, ScoreConfig, Timeouts};
pub use record::{
    normalize_record, normalize_records_text, CaseLatency, EvalRecord, Stage, StageOutcome,
    StageStatus,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::config::{invalid, ConfigError};
use crate::generator::{
    EndpointConfig, EndpointGenerator, GenError, Generator, SamplingParams, ScriptedGenerator,
};
use crate::prompt::{assemble_prompt, assemble_prompt_with, extract_candidate, Candidate};
use crate::tasks::{load_manifest, resolve_test_data, ManifestError, TaskSpec, TaskSuite};
use crate::toolchain::{
    Artifact, Backend, ExecRequest, LocalCc, MockBackend, ProcessRegistry, RunStatus,
    ToolchainError, Workspace,
};
use crate::verdicts::{check_precision, select_tolerance, speedup};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Suite(#[from] ManifestError),
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
    #[error("run directory {0} is in use by process {1} (remove {LOCK_FILE} if that process is gone)")]
    Locked(PathBuf, u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    /// Problems the user can fix in their configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RunError::Config(_) | RunError::Suite(_) | RunError::Toolchain(_) | RunError::Locked(..)
        )
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub records: usize,
    /// Records carried over from an earlier invocation by `--resume`.
    pub resumed: usize,
    pub stage_pass: BTreeMap<Stage, usize>,
    pub leaks: LeakReport,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run directory: {}", self.run_dir.display())?;
        writeln!(f, "records: {} ({} resumed)", self.records, self.resumed)?;
        for stage in Stage::ALL {
            writeln!(
                f,
                "  {:<12} {:>5} / {}",
                stage.as_str(),
                self.stage_pass.get(&stage).copied().unwrap_or(0),
                self.records
            )?;
        }
        if self.leaks.is_empty() {
            write!(f, "cleanup: clean")
        } else {
            write!(f, "cleanup: LEAKS {}", self.leaks)
        }
    }
}

/// Shared state of one invocation.
struct RunCtx {
    tmp_root: PathBuf,
    procs: ProcessRegistry,
    /// Compile and precision work hold it shared; timing holds it exclusive.
    perf_lock: RwLock<()>,
}

impl RunCtx {
    fn new() -> Result<Self, RunError> {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let tmp_root = std::env::temp_dir().join(format!(
            "kbench-tmp-{}-{nanos}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        fs::create_dir_all(&tmp_root).map_err(io(&tmp_root))?;
        Ok(RunCtx {
            tmp_root,
            procs: ProcessRegistry::default(),
            perf_lock: RwLock::new(()),
        })
    }
}

struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self, RunError> {
        let path = run_dir.join(LOCK_FILE);
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(RunLock(path));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if Path::new(&format!("/proc/{pid}")).exists() => {
                            return Err(RunError::Locked(run_dir.to_path_buf(), pid))
                        }
                        // Stale lock from a process that no longer exists.
                        _ => fs::remove_file(&path).map_err(io(&path))?,
                    }
                }
                Err(e) => return Err(io(&path)(e)),
            }
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn rel(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Builds the stage list, enforcing skip-after-fail.
struct Stages {
    list: Vec<StageOutcome>,
}

impl Stages {
    fn new() -> Self {
        Stages { list: Vec::new() }
    }

    fn failed(&self) -> bool {
        self.list.iter().any(|s| s.status == StageStatus::Fail)
    }

    fn push(&mut self, stage: Stage, pass: bool, t0: Instant, log: &Path, detail: impl Into<String>) {
        debug_assert!(!self.failed());
        self.list.push(StageOutcome {
            stage,
            status: if pass { StageStatus::Pass } else { StageStatus::Fail },
            duration_ms: t0.elapsed().as_secs_f64() * 1e3,
            log_path: rel(log),
            detail: detail.into(),
        });
    }

    fn skip_rest(&mut self) {
        for stage in Stage::ALL.into_iter().skip(self.list.len()) {
            self.list.push(StageOutcome {
                stage,
                status: StageStatus::Skip,
                duration_ms: 0.0,
                log_path: String::new(),
                detail: String::new(),
            });
        }
    }
}

/// Paths of one candidate's directory, absolute and run-relative.
struct SampleDir {
    abs: PathBuf,
    rel: PathBuf,
    stem: String,
}

impl SampleDir {
    fn log(&self, stage: Stage) -> (PathBuf, PathBuf) {
        let name = format!("{}_{}.log", self.stem, stage.as_str());
        (self.abs.join("log").join(&name), self.rel.join("log").join(name))
    }
}

fn write(path: &Path, text: &str) {
    if let Some(dir) = path.parent() {
        let _ = fs::create_dir_all(dir);
    }
    if let Err(e) = fs::write(path, text) {
        tracing::warn!(path = %path.display(), error = %e, "could not write run artifact");
    }
}

pub struct Orchestrator {
    cfg: RunConfig,
    suite: TaskSuite,
    instructions: Option<String>,
    backend: Arc<dyn Backend>,
    generator: Arc<dyn Generator>,
}

impl Orchestrator {
    /// Validate the configuration, load the suite and set up the backend and
    /// generator it names. Every error here happens before any work starts.
    pub fn new(cfg: RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let suite = load_manifest(&cfg.suite_root)?;
        if suite.is_empty() {
            return Err(invalid("suite.root", cfg.suite_root.display(), "no tasks found").into());
        }
        let instructions = match &cfg.instructions {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| {
                invalid("suite.instructions", p.display(), e.to_string())
            })?),
            None => None,
        };
        let backend: Arc<dyn Backend> = match cfg.backend {
            BackendKind::LocalCc => Arc::new(LocalCc::new(&cfg.cc, &cfg.cflags)?),
            BackendKind::Mock => Arc::new(MockBackend::load(cfg.mock_script.as_ref().unwrap())?),
        };
        let generator: Arc<dyn Generator> = match cfg.generator {
            GeneratorKind::Scripted => Arc::new(ScriptedGenerator::new(cfg.gen.fixtures.clone().unwrap())),
            GeneratorKind::Endpoint => {
                let endpoint = EndpointConfig::from_env(
                    cfg.gen.endpoint_url.clone().unwrap(),
                    cfg.gen.endpoint_model.clone().unwrap(),
                );
                let params = SamplingParams {
                    temperature: cfg.gen.temperature,
                    top_p: cfg.gen.top_p,
                    max_tokens: cfg.gen.max_tokens,
                    timeout_ms: cfg.timeouts.gen_ms,
                    max_retries: cfg.gen.max_retries,
                };
                Arc::new(EndpointGenerator::http(&endpoint, params, cfg.seed))
            }
        };
        Ok(Orchestrator {
            cfg,
            suite,
            instructions,
            backend,
            generator,
        })
    }

    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_generator(mut self, generator: Arc<dyn Generator>) -> Self {
        self.generator = generator;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn suite(&self) -> &TaskSuite {
        &self.suite
    }

    pub fn run(&self) -> Result<RunSummary, RunError> {
        let run_dir = &self.cfg.run_dir;
        fs::create_dir_all(run_dir).map_err(io(run_dir))?;
        let _lock = RunLock::acquire(run_dir)?;
        let records_path = run_dir.join(RECORDS_FILE);

        let done = if self.cfg.resume {
            completed_keys(&records_path)?
        } else {
            wipe_run_dir(run_dir)?;
            BTreeSet::new()
        };
        let items: Vec<(usize, usize)> = self
            .suite
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..self.cfg.n_samples).map(move |s| (ti, s)).filter(|&(_, s)| !done.contains(&(t.task_id.clone(), s))))
            .collect();
        tracing::info!(
            tasks = self.suite.len(),
            samples = self.cfg.n_samples,
            pending = items.len(),
            resumed = done.len(),
            "starting run"
        );

        let ctx = RunCtx::new()?;
        let mut out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(io(&records_path))?;
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, EvalRecord)>();
        let mut write_err = None;
        std::thread::scope(|s| {
            let workers = self.cfg.parallelism.min(items.len()).max(1);
            for _ in 0..workers {
                let tx = tx.clone();
                let (items, next, ctx) = (&items, &next, &ctx);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(ti, si)) = items.get(i) else { break };
                    let rec = self.evaluate_guarded(ctx, &self.suite[ti], si);
                    if tx.send((i, rec)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // Reorder buffer: emit strictly in canonical order.
            let mut pending = BTreeMap::new();
            let mut want = 0;
            for (i, rec) in rx {
                pending.insert(i, rec);
                while let Some(rec) = pending.remove(&want) {
                    let line = serde_json::to_string(&rec).expect("records serialize");
                    if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                        write_err.get_or_insert(e);
                    }
                    want += 1;
                }
            }
        });
        if let Some(e) = write_err {
            return Err(io(&records_path)(e));
        }

        let leaks = match cleanup_guard(&ctx.procs, &ctx.tmp_root) {
            Ok(()) => LeakReport::default(),
            Err(LeakDetected(report)) => {
                tracing::error!(%report, "run leaked resources");
                report
            }
        };
        let _ = fs::remove_dir_all(&ctx.tmp_root);

        let records = read_records(&records_path)?;
        let mut stage_pass = BTreeMap::new();
        for r in &records {
            for s in &r.stages {
                if s.status == StageStatus::Pass {
                    *stage_pass.entry(s.stage).or_insert(0) += 1;
                }
            }
        }
        Ok(RunSummary {
            run_dir: run_dir.clone(),
            records: records.len(),
            resumed: done.len(),
            stage_pass,
            leaks,
        })
    }

    fn evaluate_guarded(&self, ctx: &RunCtx, t: &TaskSpec, i: usize) -> EvalRecord {
        match catch_unwind(AssertUnwindSafe(|| self.evaluate(ctx, t, i))) {
            Ok(r) => r,
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                tracing::error!(task = %t.task_id, sample = i, %msg, "candidate evaluation panicked");
                let mut stages = Stages::new();
                stages.list.push(StageOutcome {
                    stage: Stage::Generate,
                    status: StageStatus::Fail,
                    duration_ms: 0.0,
                    log_path: String::new(),
                    detail: format!("internal error: {msg}"),
                });
                stages.skip_rest();
                self.record(t, i, now_ms(), stages, vec![false; t.test_cases.len()], vec![], None)
            }
        }
    }

    fn sample_dir(&self, t: &TaskSpec, i: usize) -> SampleDir {
        let rel = t.run_subdir().join(format!("sample{i}"));
        SampleDir {
            abs: self.cfg.run_dir.join(&rel),
            rel,
            stem: format!("{}_sample{i}", t.log_stem()),
        }
    }

    fn evaluate(&self, ctx: &RunCtx, t: &TaskSpec, i: usize) -> EvalRecord {
        let started = now_ms();
        let dir = self.sample_dir(t, i);
        if dir.abs.exists() {
            let _ = fs::remove_dir_all(&dir.abs);
        }
        let _ = fs::create_dir_all(dir.abs.join("log"));

        let prompt = match &self.instructions {
            Some(text) => assemble_prompt_with(t, text),
            None => assemble_prompt(t),
        };
        write(&dir.abs.join("prompt.md"), &prompt.rendered);

        let mut stages = Stages::new();
        let t0 = Instant::now();
        let g = self.generator.generate(t, &prompt, i);
        let (log_abs, log_rel) = dir.log(Stage::Generate);
        let mut log = format!("attempts: {}\n", g.attempts);
        for f in &g.failures {
            log.push_str(&format!("attempt {} failed: {}\n", f.attempt, f.reason));
        }
        let candidate = match g.output {
            Ok(raw) => {
                log.push_str(&format!("received {} bytes\n", raw.len()));
                write(&log_abs, &log);
                write(&dir.abs.join("raw_output.txt"), &raw);
                stages.push(Stage::Generate, true, t0, &log_rel, format!("{} attempt(s)", g.attempts));
                extract_candidate(&raw, t, i)
            }
            Err(e) => {
                let detail = match &e {
                    GenError::NoFixtures(_) | GenError::Other(_) => e.to_string(),
                    GenError::EndpointExhausted { .. } => e.to_string(),
                };
                log.push_str(&format!("generation failed: {detail}\n"));
                write(&log_abs, &log);
                stages.push(Stage::Generate, false, t0, &log_rel, detail);
                stages.skip_rest();
                return self.record(t, i, started, stages, vec![false; t.test_cases.len()], vec![], None);
            }
        };
        self.continue_candidate(ctx, t, &candidate, &dir, started, stages)
    }

    /// Evaluate an already generated candidate: extraction outcome, then
    /// compile, precision and performance.
    pub fn run_candidate(&self, t: &TaskSpec, c: &Candidate) -> Result<EvalRecord, RunError> {
        let ctx = RunCtx::new()?;
        let dir = self.sample_dir(t, c.sample_index);
        let _ = fs::create_dir_all(dir.abs.join("log"));
        let mut stages = Stages::new();
        let (_, log_rel) = dir.log(Stage::Generate);
        stages.push(Stage::Generate, true, Instant::now(), &log_rel, "candidate supplied");
        let rec = self.continue_candidate(&ctx, t, c, &dir, now_ms(), stages);
        let _ = fs::remove_dir_all(&ctx.tmp_root);
        Ok(rec)
    }

    fn continue_candidate(
        &self,
        ctx: &RunCtx,
        t: &TaskSpec,
        c: &Candidate,
        dir: &SampleDir,
        started: u64,
        mut stages: Stages,
    ) -> EvalRecord {
        let n_cases = t.test_cases.len();

        // Extract.
        let t0 = Instant::now();
        let (log_abs, log_rel) = dir.log(Stage::Extract);
        let ext = dir.abs.join("extracted");
        let mut found = Vec::new();
        for (name, part) in [
            ("think.md", &c.think),
            ("host.c", &c.host_code),
            ("kernel.c", &c.kernel_code),
            ("tiling.h", &c.tiling_code),
        ] {
            if let Some(text) = part {
                write(&ext.join(name), text);
                found.push(name);
            }
        }
        let detail = if c.extraction_ok {
            format!("extracted {}", found.join(", "))
        } else {
            format!(
                "missing required code for {} (found: {})",
                t.eval_path.as_str(),
                if found.is_empty() { "nothing".to_string() } else { found.join(", ") }
            )
        };
        write(&log_abs, &format!("{detail}\n"));
        stages.push(Stage::Extract, c.extraction_ok, t0, &log_rel, detail);
        if !c.extraction_ok {
            stages.skip_rest();
            return self.record(t, c.sample_index, started, stages, vec![false; n_cases], vec![], None);
        }

        // Compile.
        let t0 = Instant::now();
        let (log_abs, log_rel) = dir.log(Stage::Compile);
        let ws = Workspace {
            dir: dir.abs.clone(),
            log_path: log_abs.clone(),
            tmp_root: ctx.tmp_root.clone(),
            procs: ctx.procs.clone(),
            compile_limit: self.cfg.timeouts.compile(),
        };
        let compiled = {
            let _shared = ctx.perf_lock.read().unwrap_or_else(|p| p.into_inner());
            self.backend.compile(&ws, c, t)
        };
        let artifact: Option<Artifact> = match compiled {
            Ok((v, artifact)) => {
                let flag = if v.success { "True" } else { "False" };
                tracing::info!(
                    "Task {} compile result:\n==========\nCompileResult:\nsuccess = {flag}\nlog_file:\n{}\n==========",
                    dir.stem,
                    log_rel.display()
                );
                stages.push(
                    Stage::Compile,
                    v.success,
                    t0,
                    &log_rel,
                    format!("CompileResult: success = {flag}"),
                );
                artifact
            }
            Err(e) => {
                write(&log_abs, &format!("toolchain error: {e}\n"));
                stages.push(Stage::Compile, false, t0, &log_rel, format!("toolchain error: {e}"));
                None
            }
        };
        let Some(artifact) = artifact else {
            stages.skip_rest();
            return self.record(t, c.sample_index, started, stages, vec![false; n_cases], vec![], None);
        };

        // Precision: every case runs, each one recorded.
        let t0 = Instant::now();
        let (log_abs, log_rel) = dir.log(Stage::Precision);
        let mut case_pass = vec![false; n_cases];
        let mut log = String::new();
        let mut requests = Vec::with_capacity(n_cases);
        for (ci, case) in t.test_cases.iter().enumerate() {
            let resolved = match resolve_test_data(t, case, self.cfg.seed) {
                Ok(r) => r,
                Err(e) => {
                    log.push_str(&format!("case {}: FAIL reference evaluation: {e}\n", case.case_id));
                    requests.push(None);
                    continue;
                }
            };
            let req = ExecRequest {
                case_id: case.case_id.clone(),
                inputs: resolved.inputs.clone(),
                attrs: case.attrs.clone(),
                outputs: resolved.golden.iter().map(|g| g.spec()).collect(),
            };
            let v = {
                let _shared = ctx.perf_lock.read().unwrap_or_else(|p| p.into_inner());
                self.backend.execute(&artifact, &req, self.cfg.timeouts.exec())
            };
            let line = match (v.status, v.outputs) {
                (RunStatus::Ok, Some(outputs)) => {
                    let dtype = case.dtype().unwrap_or(resolved.golden[0].dtype());
                    match select_tolerance(dtype, &t.tolerance_policy, &case.case_id) {
                        Err(e) => format!("FAIL {e}"),
                        Ok(tol) => match check_precision(&resolved.golden, &outputs, tol.max_abs, tol.max_rel) {
                            Ok(r) => {
                                case_pass[ci] = r.is_accurate;
                                format!(
                                    "{} is_accurate={} max_abs={:.3e} max_rel={:.3e} mean_abs={:.3e} failing={}/{} (max_abs_error={:e}, max_rel_error={:e})",
                                    if r.is_accurate { "PASS" } else { "FAIL" },
                                    u8::from(r.is_accurate),
                                    r.max_abs(),
                                    r.max_rel(),
                                    r.mean_abs(),
                                    r.failing(tol.max_abs, tol.max_rel),
                                    r.abs_diffs.len(),
                                    tol.max_abs,
                                    tol.max_rel
                                )
                            }
                            Err(e) => format!("FAIL {e}"),
                        },
                    }
                }
                (status, _) => format!("FAIL {}: {}", status.as_str(), v.diagnostics),
            };
            log.push_str(&format!("case {}: {line}\n", case.case_id));
            requests.push(Some(req));
        }
        write(&log_abs, &log);
        let passed = case_pass.iter().filter(|&&p| p).count();
        let precise = passed == n_cases && n_cases > 0;
        stages.push(
            Stage::Precision,
            precise,
            t0,
            &log_rel,
            format!("{passed}/{n_cases} cases passed"),
        );
        if !precise {
            stages.skip_rest();
            return self.record(t, c.sample_index, started, stages, case_pass, vec![], None);
        }

        // Performance, alone on the machine for timing fidelity.
        let _guard = ctx.perf_lock.write().unwrap_or_else(|p| p.into_inner());
        let t0 = Instant::now();
        let (log_abs, log_rel) = dir.log(Stage::Performance);
        let mut latency = Vec::new();
        let mut log = String::new();
        let mut failure = None;
        for (case, req) in t.test_cases.iter().zip(&requests) {
            let req = req.as_ref().expect("precise candidates resolved every case");
            match self.backend.measure(
                &artifact,
                req,
                self.cfg.perf.warmup,
                self.cfg.perf.runs,
                self.cfg.timeouts.exec(),
            ) {
                Ok(stats) => {
                    log.push_str(&format!(
                        "case {}: mean {:.6} ms over {} runs (warmup {}), reference {}\n",
                        case.case_id,
                        stats.mean_ms,
                        stats.runs,
                        stats.warmup,
                        case.reference_latency_ms.map_or("n/a".into(), |r| format!("{r:.6} ms"))
                    ));
                    latency.push(CaseLatency {
                        case_id: case.case_id.clone(),
                        stats,
                        reference_ms: case.reference_latency_ms,
                    });
                }
                Err(e) => {
                    log.push_str(&format!("case {}: FAIL {e}\n", case.case_id));
                    failure = Some(format!("case {}: {e}", case.case_id));
                    break;
                }
            }
        }
        let speed = if failure.is_none() && latency.iter().all(|l| l.reference_ms.is_some()) {
            let t_ref: f64 = latency.iter().filter_map(|l| l.reference_ms).sum();
            let t_gen: f64 = latency.iter().map(|l| l.stats.mean_ms).sum();
            speedup(t_ref, t_gen).ok()
        } else {
            None
        };
        let detail = match (&failure, speed) {
            (Some(f), _) => f.clone(),
            (None, Some(s)) => format!("speedup {s:.3}x"),
            (None, None) => "no reference latency".into(),
        };
        log.push_str(&format!("{detail}\n"));
        write(&log_abs, &log);
        stages.push(Stage::Performance, failure.is_none(), t0, &log_rel, detail);
        let latency = if failure.is_none() { latency } else { Vec::new() };
        stages.skip_rest();
        self.record(t, c.sample_index, started, stages, case_pass, latency, speed)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        t: &TaskSpec,
        i: usize,
        started: u64,
        stages: Stages,
        case_pass: Vec<bool>,
        latency: Vec<CaseLatency>,
        speedup: Option<f64>,
    ) -> EvalRecord {
        let dir = self.sample_dir(t, i);
        let rec = EvalRecord {
            task_id: t.task_id.clone(),
            level: t.level.number(),
            category: t.category.clone(),
            sample_index: i,
            started_at_ms: started,
            stages: stages.list,
            case_ids: t.test_cases.iter().map(|c| c.case_id.clone()).collect(),
            case_pass,
            latency,
            speedup,
            sample_dir: rel(&dir.rel),
        };
        debug_assert!(rec.is_well_formed(), "{rec:?}");
        write(
            &dir.abs.join("record.json"),
            &serde_json::to_string_pretty(&rec).expect("records serialize"),
        );
        rec
    }
}

pub fn run_suite(cfg: RunConfig) -> Result<RunSummary, RunError> {
    Orchestrator::new(cfg)?.run()
}

/// Remove the outputs of a previous run, leaving unrelated files alone.
fn wipe_run_dir(run_dir: &Path) -> Result<(), RunError> {
    for e in fs::read_dir(run_dir).map_err(io(run_dir))?.filter_map(Result::ok) {
        let name = e.file_name().to_string_lossy().into_owned();
        let path = e.path();
        let ours = name.starts_with("lvl")
            || name == "feedback"
            || name == RECORDS_FILE
            || name.starts_with("score_report.");
        if !ours {
            continue;
        }
        if path.is_dir() {
            fs::remove_dir_all(&path).map_err(io(&path))?;
        } else {
            fs::remove_file(&path).map_err(io(&path))?;
        }
    }
    Ok(())
}

/// Keys already in `records.jsonl`. A trailing partial line (an interrupted
/// write) is cut off so appending can resume cleanly.
fn completed_keys(path: &Path) -> Result<BTreeSet<(String, usize)>, RunError> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(BTreeSet::new());
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() != text.len() {
        fs::write(path, complete).map_err(io(path))?;
    }
    let mut keys = BTreeSet::new();
    for (i, line) in complete.lines().enumerate() {
        let r: EvalRecord = serde_json::from_str(line).map_err(|e| {
            RunError::Internal(format!("{}: line {} is not a record: {e}", path.display(), i + 1))
        })?;
        keys.insert(r.key());
    }
    Ok(keys)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, RunError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                RunError::Internal(format!("{}: line {} is not a record: {e}", path.display(), i + 1))
            })
        })
        .collect()
}
