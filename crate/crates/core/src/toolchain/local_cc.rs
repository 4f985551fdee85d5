use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::process::{run_with_limit, signal_name, WaitOutcome};
use super::{
    io_err, wire, Artifact, Backend, CompileVerdict, ExecRequest, LatencyStats, RunStatus,
    RunVerdict, ToolchainError, Workspace,
};
use crate::prompt::Candidate;
use crate::tasks::{EvalPath, TaskSpec};

pub const SHIM_HEADER: &str = include_str!("../../shim/kb_shim.h");
pub const SHIM_DRIVER: &str = include_str!("../../shim/kb_driver.c");
pub const SHIM_TILING_DEFAULT: &str = include_str!("../../shim/kb_tiling_default.h");

/// Builds candidates with a host C compiler and runs them as child processes.
#[derive(Debug, Clone)]
pub struct LocalCc {
    cc: String,
    cflags: Vec<String>,
}

impl LocalCc {
    /// Fails with `CompilerNotFound` unless `cc --version` runs.
    pub fn new(cc: &str, cflags: &[String]) -> Result<Self, ToolchainError> {
        let probe = Command::new(cc)
            .arg("--version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
        match probe {
            Ok(_) => Ok(LocalCc {
                cc: cc.to_string(),
                cflags: cflags.to_vec(),
            }),
            Err(_) => Err(ToolchainError::CompilerNotFound(cc.to_string())),
        }
    }

    fn fail(ws: &Workspace, start: Instant, log: String) -> Result<CompileVerdict, ToolchainError> {
        write_file(&ws.log_path, &log)?;
        Ok(CompileVerdict {
            success: false,
            log_text: log,
            log_path: ws.log_path.clone(),
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ToolchainError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn nonempty(s: &Option<String>) -> Option<&str> {
    s.as_deref().filter(|s| !s.trim().is_empty())
}

fn tail(path: &Path, max: usize) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let start = text.len().saturating_sub(max);
    let start = (start..text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(text.len());
    text[start..].trim().to_string()
}

impl Backend for LocalCc {
    fn name(&self) -> &'static str {
        "local_cc"
    }

    fn compile(
        &self,
        ws: &Workspace,
        c: &Candidate,
        t: &TaskSpec,
    ) -> Result<(CompileVerdict, Option<Artifact>), ToolchainError> {
        let start = Instant::now();
        let Some(kernel) = nonempty(&c.kernel_code) else {
            return Ok((Self::fail(ws, start, "kernel_code is empty; nothing to compile\n".into())?, None));
        };
        let (host, tiling) = match t.eval_path {
            EvalPath::DeviceOnly => (Some(t.host_template.as_str()), t.tiling_header_template.as_deref()),
            EvalPath::HostDevice => (
                nonempty(&c.host_code),
                nonempty(&c.tiling_code).or(t.tiling_header_template.as_deref()),
            ),
        };
        let Some(host) = host else {
            return Ok((Self::fail(ws, start, "host_code is empty; nothing to compile\n".into())?, None));
        };

        let build = ws.dir.join("build");
        if build.exists() {
            fs::remove_dir_all(&build).map_err(io_err(&build))?;
        }
        let tmp = build.join("tmp");
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        for (name, text) in [
            ("kb_shim.h", SHIM_HEADER),
            ("kb_tiling.h", tiling.unwrap_or(SHIM_TILING_DEFAULT)),
            ("kb_driver.c", SHIM_DRIVER),
            ("host.c", host),
            ("kernel.c", kernel),
        ] {
            write_file(&build.join(name), text)?;
        }

        let binary = build.join("artifact");
        let mut args: Vec<String> = self.cflags.clone();
        args.extend(
            ["-I", "build", "-o", "build/artifact", "build/kb_driver.c", "build/host.c", "build/kernel.c", "-lm"]
                .map(String::from),
        );
        let header = format!("$ {} {}\n", self.cc, args.join(" "));
        write_file(&ws.log_path, &header)?;
        let log = OpenOptions::new()
            .append(true)
            .open(&ws.log_path)
            .map_err(io_err(&ws.log_path))?;
        let log_err = log.try_clone().map_err(io_err(&ws.log_path))?;

        let mut cmd = Command::new(&self.cc);
        cmd.args(&args)
            .current_dir(&ws.dir)
            .env("TMPDIR", &tmp)
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(log_err);
        let outcome = match run_with_limit(&mut cmd, ws.compile_limit, &ws.procs, "compile") {
            Ok(o) => o,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ToolchainError::CompilerNotFound(self.cc.clone()))
            }
            Err(e) => return Err(ToolchainError::Io { path: ws.dir.clone(), source: e }),
        };
        let _ = fs::remove_dir_all(&tmp);

        let mut log_text = fs::read_to_string(&ws.log_path).unwrap_or_default();
        let success = match outcome {
            WaitOutcome::Exited(s) => s.success() && binary.is_file(),
            WaitOutcome::TimedOut => {
                let note = format!(
                    "compiler killed after exceeding the {} ms limit\n",
                    ws.compile_limit.as_millis()
                );
                log_text.push_str(&note);
                let _ = OpenOptions::new()
                    .append(true)
                    .open(&ws.log_path)
                    .and_then(|mut f| f.write_all(note.as_bytes()));
                false
            }
        };
        let verdict = CompileVerdict {
            success,
            log_text,
            log_path: ws.log_path.clone(),
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        let artifact = success.then(|| Artifact::new(ws, Some(binary), c, t));
        Ok((verdict, artifact))
    }

    fn execute(&self, a: &Artifact, req: &ExecRequest, limit: Duration) -> RunVerdict {
        let (dir, input) = match stage_case(a, req) {
            Ok(v) => v,
            Err(e) => return RunVerdict::failed(RunStatus::RuntimeError, e),
        };
        let output = dir.join("output.bin");
        let _ = fs::remove_file(&output);
        let args = ["run".to_string(), path_arg(&input), path_arg(&output)];
        match spawn(a, &dir, &args, limit) {
            Err(e) => RunVerdict::failed(RunStatus::RuntimeError, e),
            Ok(Outcome::TimedOut) => RunVerdict::failed(
                RunStatus::Timeout,
                format!("killed after {} ms wall-clock limit", limit.as_millis()),
            ),
            Ok(Outcome::Finished { code, signal }) => {
                if let Some(diag) = failure(code, signal, &dir) {
                    return diag;
                }
                match fs::read(&output)
                    .map_err(|e| format!("reading {}: {e}", output.display()))
                    .and_then(|bytes| wire::decode_output(&bytes, &req.outputs))
                {
                    Ok(outputs) => RunVerdict::ok(outputs),
                    Err(e) => RunVerdict::failed(RunStatus::RuntimeError, e),
                }
            }
        }
    }

    fn measure(
        &self,
        a: &Artifact,
        req: &ExecRequest,
        warmup: u32,
        runs: u32,
        limit: Duration,
    ) -> Result<LatencyStats, String> {
        let (dir, input) = stage_case(a, req)?;
        let args = ["bench".to_string(), path_arg(&input), warmup.to_string(), runs.to_string()];
        match spawn(a, &dir, &args, limit)? {
            Outcome::TimedOut => Err(format!("benchmark exceeded {} ms", limit.as_millis())),
            Outcome::Finished { code, signal } => {
                if let Some(v) = failure(code, signal, &dir) {
                    return Err(v.diagnostics);
                }
                let stdout = fs::read_to_string(dir.join("stdout.txt")).map_err(|e| e.to_string())?;
                let per_run: Vec<f64> = stdout
                    .lines()
                    .map(|l| l.trim().parse::<f64>().map_err(|e| format!("bad timing line {l:?}: {e}")))
                    .collect::<Result<_, _>>()?;
                if per_run.len() != runs as usize {
                    return Err(format!("expected {runs} timings, driver printed {}", per_run.len()));
                }
                // Sub-resolution runs would make speedups divide by zero.
                let per_run = per_run.into_iter().map(|t| t.max(1e-6)).collect();
                Ok(LatencyStats::from_runs(warmup, per_run))
            }
        }
    }
}

fn path_arg(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

/// Write the case input file into the artifact's per-case directory.
fn stage_case(a: &Artifact, req: &ExecRequest) -> Result<(PathBuf, PathBuf), String> {
    if a.binary.is_none() {
        return Err("artifact has no binary".into());
    }
    let dir = a.dir.join("cases").join(&req.case_id);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let input = dir.join("input.bin");
    fs::write(&input, wire::encode_input(&req.inputs, &req.outputs, &req.attrs))
        .map_err(|e| format!("{}: {e}", input.display()))?;
    Ok((dir, input))
}

enum Outcome {
    Finished { code: Option<i32>, signal: Option<i32> },
    TimedOut,
}

fn spawn(a: &Artifact, dir: &Path, args: &[String], limit: Duration) -> Result<Outcome, String> {
    let binary = a.binary.as_ref().ok_or("artifact has no binary")?;
    let open = |name: &str| File::create(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let mut cmd = Command::new(binary);
    cmd.args(args)
        .current_dir(dir)
        .env("TMPDIR", &a.tmp_root)
        .stdin(Stdio::null())
        .stdout(open("stdout.txt")?)
        .stderr(open("stderr.txt")?);
    let label = format!("{}/sample{} {}", a.task_id, a.sample_index, args[0]);
    match run_with_limit(&mut cmd, limit, &a.procs, &label) {
        Ok(WaitOutcome::TimedOut) => Ok(Outcome::TimedOut),
        Ok(WaitOutcome::Exited(s)) => Ok(Outcome::Finished {
            code: s.code(),
            signal: s.signal(),
        }),
        Err(e) => Err(format!("spawning {}: {e}", binary.display())),
    }
}

fn failure(code: Option<i32>, signal: Option<i32>, dir: &Path) -> Option<RunVerdict> {
    let stderr = tail(&dir.join("stderr.txt"), 2000);
    if let Some(sig) = signal {
        let mut d = format!("terminated by signal {sig} ({})", signal_name(sig));
        if !stderr.is_empty() {
            d.push('\n');
            d.push_str(&stderr);
        }
        return Some(RunVerdict::failed(RunStatus::Crashed, d));
    }
    match code {
        Some(0) => None,
        other => {
            let mut d = format!("exit status {}", other.map_or("unknown".into(), |c| c.to_string()));
            if !stderr.is_empty() {
                d.push('\n');
                d.push_str(&stderr);
            }
            Some(RunVerdict::failed(RunStatus::RuntimeError, d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::extract_candidate;
    use crate::prompt::render_tagged;
    use crate::tasks::{testutil, DType, TensorData, TensorSpec};
    use crate::toolchain::ProcessRegistry;

    const ADD: &str = r#"#include "kb_shim.h"
int run_kernel(const KbTensor *in, int n_in, KbTensor *out, int n_out,
               const KbAttrs *attrs, const KbTiling *tiling) {
    const float *x = in[0].data, *y = in[1].data;
    float *z = out[0].data;
    for (int64_t i = 0; i < out[0].numel; i++) z[i] = x[i] + y[i];
    return 0;
}
"#;
    const HOST: &str = r#"#include "kb_shim.h"
int kb_compute_tiling(const KbTensor *in, int n_in, const KbAttrs *attrs, KbTiling *t) {
    t->total_length = in[0].numel;
    t->tile_length = in[0].numel;
    return 0;
}
"#;

    struct Fixture {
        _dir: tempfile::TempDir,
        ws: Workspace,
        task: TaskSpec,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let tmp_root = dir.path().join("sentinel");
        fs::create_dir_all(&tmp_root).unwrap();
        let mut task = testutil::task(
            "add",
            vec![testutil::literal_case("c0", DType::F32, &[(&[2], &[1., 2.]), (&[2], &[3., 4.])])],
        );
        task.host_template = HOST.into();
        let ws = Workspace {
            dir: dir.path().join("sample0"),
            log_path: dir.path().join("sample0/log/T_sample0_compile.log"),
            tmp_root,
            procs: ProcessRegistry::default(),
            compile_limit: Duration::from_secs(60),
        };
        Fixture { _dir: dir, ws, task }
    }

    fn candidate(t: &TaskSpec, kernel: &str) -> Candidate {
        extract_candidate(&render_tagged(None, None, Some(kernel), None), t, 0)
    }

    fn add_request() -> ExecRequest {
        let v = |x: &[f64]| TensorData::new(DType::F32, vec![2], x.to_vec()).unwrap();
        ExecRequest {
            case_id: "c0".into(),
            inputs: vec![v(&[1., 2.]), v(&[3., 4.])],
            attrs: Default::default(),
            outputs: vec![TensorSpec { dtype: DType::F32, shape: vec![2] }],
        }
    }

    fn cc() -> LocalCc {
        LocalCc::new("cc", &["-O2".into(), "-std=c11".into()]).unwrap()
    }

    #[test]
    fn add_compiles_and_runs() {
        let f = fixture();
        let (v, art) = cc().compile(&f.ws, &candidate(&f.task, ADD), &f.task).unwrap();
        assert!(v.success, "{}", v.log_text);
        assert!(v.log_path.is_file());
        let art = art.unwrap();
        let r = cc().execute(&art, &add_request(), Duration::from_secs(10));
        assert_eq!(r.status, RunStatus::Ok, "{}", r.diagnostics);
        assert_eq!(r.outputs.unwrap()[0].values(), &[4.0, 6.0]);
        let stats = cc().measure(&art, &add_request(), 1, 3, Duration::from_secs(10)).unwrap();
        assert_eq!(stats.per_run_ms.len(), 3);
        assert!(f.ws.procs.strays().is_empty());
    }

    #[test]
    fn undeclared_identifier_fails_with_log() {
        let f = fixture();
        let bad = ADD.replace("return 0;", "return missing_helper_fn(z);");
        let (v, art) = cc().compile(&f.ws, &candidate(&f.task, &bad), &f.task).unwrap();
        assert!(!v.success);
        assert!(art.is_none());
        assert!(v.log_text.contains("missing_helper_fn"), "{}", v.log_text);
    }

    #[test]
    fn empty_kernel_fails() {
        let f = fixture();
        let c = candidate(&f.task, "   ");
        let (v, art) = cc().compile(&f.ws, &c, &f.task).unwrap();
        assert!(!v.success && art.is_none());
        assert!(!v.log_text.is_empty());
    }

    #[test]
    fn infinite_loop_times_out() {
        let f = fixture();
        let spin = ADD.replace("return 0;", "for (volatile int k = 0;; k++) {}\n    return 0;");
        let (v, art) = cc().compile(&f.ws, &candidate(&f.task, &spin), &f.task).unwrap();
        assert!(v.success, "{}", v.log_text);
        let t0 = Instant::now();
        let r = cc().execute(&art.unwrap(), &add_request(), Duration::from_millis(300));
        assert_eq!(r.status, RunStatus::Timeout);
        assert!(t0.elapsed() < Duration::from_secs(3));
        assert!(f.ws.procs.strays().is_empty());
    }

    #[test]
    fn null_dereference_crashes() {
        let f = fixture();
        let crash = ADD.replace("return 0;", "*(volatile int *)0 = 1;\n    return 0;");
        let (v, art) = cc().compile(&f.ws, &candidate(&f.task, &crash), &f.task).unwrap();
        assert!(v.success, "{}", v.log_text);
        let r = cc().execute(&art.unwrap(), &add_request(), Duration::from_secs(10));
        assert_eq!(r.status, RunStatus::Crashed);
        assert!(r.diagnostics.contains("SIGSEGV"), "{}", r.diagnostics);
    }

    #[test]
    fn missing_compiler() {
        assert!(matches!(
            LocalCc::new("/nonexistent/cc-kbench", &[]),
            Err(ToolchainError::CompilerNotFound(_))
        ));
    }
}
