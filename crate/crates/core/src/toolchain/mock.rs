//! Scripted backend for hermetic pipeline tests.
//!
//! One line per candidate, keyed `task_id/sampleN`, followed by
//! `field=value` pairs:
//!
//! ```text
//! # comment
//! Add/sample0   compile_ok=true run=ok outputs=golden per_run_ms=1.0,1.2
//! Add/sample1   compile_ok=false compile_log="error: use of undeclared identifier 'x'"
//! Sqrt/sample2  run=hang cases=c1
//! Gelu/sample0  outputs=golden+1e6@0
//! ```
//!
//! | field        | values                                               | default  |
//! |--------------|------------------------------------------------------|----------|
//! | `compile_ok` | `true`, `false`                                      | `true`   |
//! | `compile_log`| quoted string (`\n`, `\"` escapes)                   | generic  |
//! | `run`        | `ok`, `runtime_error`, `crash`, `hang`               | `ok`     |
//! | `outputs`    | `golden`, `golden+D@I`, `golden*F`, `nan@I`          | `golden` |
//! | `cases`      | comma-separated case ids `run`/`outputs` apply to    | all      |
//! | `per_run_ms` | comma-separated timings replayed by `measure`        | `1.0`    |
//! | `perf`       | `ok`, `fail`                                         | `ok`     |
//!
//! Perturbations apply to element `I` of the first output. Keys without a
//! line fail to compile.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use super::{
    Artifact, Backend, CompileVerdict, ExecRequest, LatencyStats, RunStatus, RunVerdict,
    ToolchainError, Workspace,
};
use crate::prompt::Candidate;
use crate::tasks::{reference_eval, TaskSpec, TensorData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputRule {
    Golden,
    Add { delta: f64, index: usize },
    Scale(f64),
    Nan { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedRun {
    Ok,
    RuntimeError,
    Crash,
    Hang,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockEntry {
    pub compile_ok: bool,
    pub compile_log: Option<String>,
    pub run: ScriptedRun,
    pub outputs: OutputRule,
    pub cases: Option<Vec<String>>,
    pub per_run_ms: Vec<f64>,
    pub perf_ok: bool,
}

impl Default for MockEntry {
    fn default() -> Self {
        MockEntry {
            compile_ok: true,
            compile_log: None,
            run: ScriptedRun::Ok,
            outputs: OutputRule::Golden,
            cases: None,
            per_run_ms: vec![1.0],
            perf_ok: true,
        }
    }
}

impl MockEntry {
    fn applies_to(&self, case_id: &str) -> bool {
        self.cases.as_ref().is_none_or(|c| c.iter().any(|x| x == case_id))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    entries: BTreeMap<(String, usize), MockEntry>,
}

fn malformed(line: usize, message: impl Into<String>) -> ToolchainError {
    ToolchainError::MalformedScript {
        line,
        message: message.into(),
    }
}

/// Split on whitespace, keeping double-quoted runs together.
fn tokens(line: &str, no: usize) -> Result<Vec<String>, ToolchainError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars();
    let mut quoted = false;
    while let Some(ch) = chars.next() {
        match ch {
            '"' => quoted = !quoted,
            '\\' if quoted => match chars.next() {
                Some('n') => cur.push('\n'),
                Some('t') => cur.push('\t'),
                Some(c) => cur.push(c),
                None => return Err(malformed(no, "dangling escape")),
            },
            c if c.is_whitespace() && !quoted => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if quoted {
        return Err(malformed(no, "unterminated quote"));
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

fn parse_outputs(v: &str, no: usize) -> Result<OutputRule, ToolchainError> {
    let bad = || malformed(no, format!("bad outputs rule `{v}`"));
    if v == "golden" {
        return Ok(OutputRule::Golden);
    }
    if let Some(rest) = v.strip_prefix("golden+") {
        let (d, i) = rest.split_once('@').ok_or_else(bad)?;
        return Ok(OutputRule::Add {
            delta: d.parse().map_err(|_| bad())?,
            index: i.parse().map_err(|_| bad())?,
        });
    }
    if let Some(f) = v.strip_prefix("golden*") {
        return Ok(OutputRule::Scale(f.parse().map_err(|_| bad())?));
    }
    if let Some(i) = v.strip_prefix("nan@") {
        return Ok(OutputRule::Nan {
            index: i.parse().map_err(|_| bad())?,
        });
    }
    Err(bad())
}

impl MockBackend {
    pub fn load(path: &Path) -> Result<Self, ToolchainError> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ToolchainError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks = tokens(line, no)?;
            let key = &toks[0];
            let (task, sample) = key
                .rsplit_once("/sample")
                .and_then(|(t, s)| Some((t.to_string(), s.parse::<usize>().ok()?)))
                .ok_or_else(|| malformed(no, format!("key `{key}` is not task_id/sampleN")))?;
            let mut e = MockEntry::default();
            for tok in &toks[1..] {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| malformed(no, format!("expected field=value, got `{tok}`")))?;
                match k {
                    "compile_ok" => {
                        e.compile_ok = v.parse().map_err(|_| malformed(no, "compile_ok must be true/false"))?
                    }
                    "compile_log" => e.compile_log = Some(v.to_string()),
                    "run" => {
                        e.run = match v {
                            "ok" => ScriptedRun::Ok,
                            "runtime_error" => ScriptedRun::RuntimeError,
                            "crash" => ScriptedRun::Crash,
                            "hang" => ScriptedRun::Hang,
                            _ => return Err(malformed(no, format!("unknown run status `{v}`"))),
                        }
                    }
                    "outputs" => e.outputs = parse_outputs(v, no)?,
                    "cases" => e.cases = Some(v.split(',').map(str::to_string).collect()),
                    "per_run_ms" => {
                        e.per_run_ms = v
                            .split(',')
                            .map(|x| x.parse::<f64>().ok().filter(|t| *t > 0.0))
                            .collect::<Option<Vec<_>>>()
                            .filter(|l| !l.is_empty())
                            .ok_or_else(|| malformed(no, "per_run_ms must be positive numbers"))?
                    }
                    "perf" => {
                        e.perf_ok = match v {
                            "ok" => true,
                            "fail" => false,
                            _ => return Err(malformed(no, "perf must be ok/fail")),
                        }
                    }
                    _ => return Err(malformed(no, format!("unknown field `{k}`"))),
                }
            }
            if entries.insert((task, sample), e).is_some() {
                return Err(malformed(no, format!("duplicate key `{key}`")));
            }
        }
        Ok(MockBackend { entries })
    }

    pub fn entry(&self, task_id: &str, sample: usize) -> Option<&MockEntry> {
        self.entries.get(&(task_id.to_string(), sample))
    }

    fn golden(&self, a: &Artifact, req: &ExecRequest) -> Result<Vec<TensorData>, String> {
        reference_eval(&a.reference_op, &req.inputs, &req.attrs).map_err(|e| e.to_string())
    }
}

fn perturb(mut outs: Vec<TensorData>, rule: OutputRule) -> Vec<TensorData> {
    let Some(first) = outs.first_mut() else {
        return outs;
    };
    let mut v = first.values().to_vec();
    match rule {
        OutputRule::Golden => return outs,
        OutputRule::Add { delta, index } => {
            if let Some(x) = v.get_mut(index) {
                *x += delta;
            }
        }
        OutputRule::Scale(f) => v.iter_mut().for_each(|x| *x *= f),
        OutputRule::Nan { index } => {
            if let Some(x) = v.get_mut(index) {
                *x = f64::NAN;
            }
        }
    }
    *first = TensorData::new(first.dtype(), first.shape().to_vec(), v).expect("same shape");
    outs
}

impl Backend for MockBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn compile(
        &self,
        ws: &Workspace,
        c: &Candidate,
        t: &TaskSpec,
    ) -> Result<(CompileVerdict, Option<Artifact>), ToolchainError> {
        let entry = self.entry(&t.task_id, c.sample_index);
        let (success, log_text) = match entry {
            None => (
                false,
                format!("mock: no script entry for {}/sample{}\n", t.task_id, c.sample_index),
            ),
            Some(e) if !e.compile_ok => (
                false,
                e.compile_log
                    .clone()
                    .unwrap_or_else(|| "error: scripted compile failure\n".into()),
            ),
            Some(e) => (true, e.compile_log.clone().unwrap_or_else(|| "mock: compiled\n".into())),
        };
        if let Some(dir) = ws.log_path.parent() {
            std::fs::create_dir_all(dir).map_err(super::io_err(dir))?;
        }
        std::fs::write(&ws.log_path, &log_text).map_err(super::io_err(&ws.log_path))?;
        let verdict = CompileVerdict {
            success,
            log_text,
            log_path: ws.log_path.clone(),
            duration_ms: 0.0,
        };
        Ok((verdict, success.then(|| Artifact::new(ws, None, c, t))))
    }

    fn execute(&self, a: &Artifact, req: &ExecRequest, limit: Duration) -> RunVerdict {
        let Some(e) = self.entry(&a.task_id, a.sample_index) else {
            return RunVerdict::failed(RunStatus::RuntimeError, "mock: no script entry");
        };
        if !e.applies_to(&req.case_id) {
            return match self.golden(a, req) {
                Ok(g) => RunVerdict::ok(g),
                Err(msg) => RunVerdict::failed(RunStatus::RuntimeError, msg),
            };
        }
        match e.run {
            ScriptedRun::Ok => match self.golden(a, req) {
                Ok(g) => RunVerdict::ok(perturb(g, e.outputs)),
                Err(msg) => RunVerdict::failed(RunStatus::RuntimeError, msg),
            },
            ScriptedRun::RuntimeError => {
                RunVerdict::failed(RunStatus::RuntimeError, "mock: scripted runtime error (exit status 3)")
            }
            ScriptedRun::Crash => {
                RunVerdict::failed(RunStatus::Crashed, "mock: scripted crash (SIGSEGV)")
            }
            ScriptedRun::Hang => {
                let start = Instant::now();
                std::thread::sleep(limit);
                RunVerdict::failed(
                    RunStatus::Timeout,
                    format!("mock: hung, stopped after {} ms", start.elapsed().as_millis()),
                )
            }
        }
    }

    fn measure(
        &self,
        a: &Artifact,
        req: &ExecRequest,
        warmup: u32,
        _runs: u32,
        limit: Duration,
    ) -> Result<LatencyStats, String> {
        let e = self
            .entry(&a.task_id, a.sample_index)
            .ok_or("mock: no script entry")?;
        if !e.perf_ok {
            return Err("mock: scripted performance failure".into());
        }
        let v = self.execute(a, req, limit);
        if v.status != RunStatus::Ok {
            return Err(format!("timed run not ok: {}", v.diagnostics));
        }
        Ok(LatencyStats::from_runs(warmup, e.per_run_ms.clone()))
    }
}
