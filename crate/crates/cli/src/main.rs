use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use kernelbench::config::{ConfigError, FlatConfig};
use kernelbench::feedback::{classify_error, export_feedback, ErrorDistribution, Synthesis};
use kernelbench::generator::{EndpointConfig, HttpTransport};
use kernelbench::orchestrator::{Orchestrator, RunConfig, RunError, Stage};
use kernelbench::prompt::Candidate;
use kernelbench::scoreboard::{aggregate, emit_report, render_table, ReportFormat};
use kernelbench::tasks::{load_manifest, ManifestError, MANIFEST_FILE};
use kernelbench::toolchain::ToolchainError;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "kbench", version, about = "Evaluate generated compute kernels and derive feedback signals")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand. Each one overrides a config key.
#[derive(Args)]
struct Common {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// run.dir
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// gen.n_samples
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    /// run.backend (local_cc | mock)
    #[arg(long, global = true)]
    backend: Option<String>,
    /// run.generator (endpoint | scripted)
    #[arg(long, global = true)]
    generator: Option<String>,
    /// run.parallelism
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// run.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// score.k; repeat for several values.
    #[arg(long = "k", global = true)]
    k: Vec<usize>,
    /// Skip (task, sample) pairs already recorded in the run directory.
    #[arg(long, global = true)]
    resume: bool,
    /// score.pass_at_k_mode (unbiased | first_k | auto)
    #[arg(long, global = true)]
    pass_at_k_mode: Option<String>,
    /// Any other config key.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More logging; repeat for debug output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the suite, one task per line.
    ListTasks,
    /// Generate and evaluate every (task, sample) pair.
    Run,
    /// Aggregate records.jsonl into score_report.txt and score_report.jsonl.
    Score,
    /// Classify compiler logs, or the compile failures of a run.
    Classify {
        /// Log files; without any, the run directory's failures are summarized.
        files: Vec<PathBuf>,
    },
    /// Write training signals under <run_dir>/feedback.
    ExportFeedback {
        /// Ask the endpoint for reasoning and corrected code.
        #[arg(long)]
        synthesize: bool,
    },
    /// Compile and check every shipped ground truth, timing each case.
    VerifyFixtures {
        /// Rewrite reference_latency_ms in the task manifests.
        #[arg(long)]
        update_latencies: bool,
        /// Passes over the suite; each case keeps the median of its means.
        #[arg(long, default_value_t = 3)]
        repeat: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("kbench: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for problems in the configuration or suite, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(r) = cause.downcast_ref::<RunError>() {
            return if r.is_config() { 1 } else { 2 };
        }
        if cause.is::<ConfigError>() || cause.is::<ManifestError>() || cause.is::<ToolchainError>() {
            return 1;
        }
    }
    2
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let Some(path) = &c.config else {
        return Err(ConfigError::Missing("--config".into()).into());
    };
    let mut flat = FlatConfig::load(path)?;
    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flat.set(key, v);
        }
    };
    set("run.dir", c.run_dir.as_ref().map(|p| p.display().to_string()));
    set("gen.n_samples", c.n_samples.map(|v| v.to_string()));
    set("run.backend", c.backend.clone());
    set("run.generator", c.generator.clone());
    set("run.parallelism", c.parallelism.map(|v| v.to_string()));
    set("run.seed", c.seed.map(|v| v.to_string()));
    set("score.pass_at_k_mode", c.pass_at_k_mode.clone());
    if !c.k.is_empty() {
        let ks: Vec<String> = c.k.iter().map(|k| k.to_string()).collect();
        set("score.k", Some(ks.join(",")));
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid {
                key: "--set".into(),
                value: kv.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
        flat.set(k.trim(), v.trim());
    }
    let mut cfg = RunConfig::from_flat(&flat)?;
    cfg.resume = c.resume;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::ListTasks => {
            let cfg = load_config(&cli.common)?;
            for t in load_manifest(&cfg.suite_root)? {
                println!(
                    "lvl{}\t{}\t{}\t{}\t{}\t{} cases",
                    t.level.number(),
                    t.category,
                    t.task_id,
                    t.eval_path.as_str(),
                    match t.shape_mode {
                        kernelbench::tasks::ShapeMode::Static => "static",
                        kernelbench::tasks::ShapeMode::Dynamic => "dynamic",
                    },
                    t.test_cases.len()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run => {
            let cfg = load_config(&cli.common)?;
            let summary = Orchestrator::new(cfg)?.run()?;
            println!("{summary}");
            if summary.leaks.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("kbench: run leaked resources: {}", summary.leaks);
                Ok(ExitCode::from(2))
            }
        }
        Cmd::Score => {
            let cfg = load_config(&cli.common)?;
            let report = aggregate(&cfg.run_dir, cfg.score.weights, &cfg.score.k_list, cfg.score.mode)?;
            emit_report(&report, ReportFormat::TableText, &cfg.run_dir.join("score_report.txt"))?;
            emit_report(&report, ReportFormat::Records, &cfg.run_dir.join("score_report.jsonl"))?;
            print!("{}", render_table(&report));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Classify { files } if !files.is_empty() => {
            let mut logs = Vec::new();
            for f in files {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                println!("{}\t{}", f.display(), classify_error(&text));
                logs.push(text);
            }
            if files.len() > 1 {
                print!("\n{}", ErrorDistribution::from_logs(logs.iter().map(String::as_str)).render());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Classify { .. } => {
            let cfg = load_config(&cli.common)?;
            let records = kernelbench::orchestrator::read_records(&cfg.run_dir.join("records.jsonl"))?;
            print!("{}", kernelbench::feedback::error_distribution(&cfg.run_dir, &records).render());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ExportFeedback { synthesize } => {
            let cfg = load_config(&cli.common)?;
            let suite = load_manifest(&cfg.suite_root)?;
            let synth = if *synthesize {
                let url = cfg.gen.endpoint_url.clone().ok_or_else(|| ConfigError::Missing("endpoint.url".into()))?;
                let model = cfg
                    .gen
                    .endpoint_model
                    .clone()
                    .ok_or_else(|| ConfigError::Missing("endpoint.model".into()))?;
                let endpoint = EndpointConfig::from_env(url, model.clone());
                Some(Synthesis {
                    transport: Box::new(HttpTransport::new(&endpoint)),
                    model,
                    timeout: Duration::from_millis(cfg.timeouts.gen_ms),
                    max_retries: cfg.gen.max_retries,
                })
            } else {
                None
            };
            let summary = export_feedback(&cfg.run_dir, &suite, &cfg.feedback, cfg.seed, synth.as_ref())?;
            println!("correction samples:     {}", summary.correction_samples);
            println!("reconstruction prompts: {}", summary.reconstruction_prompts);
            println!("preference pairs:       {}", summary.preference_pairs);
            match summary.reward_traces {
                Some(n) => println!("reward traces:          {n}"),
                None => println!("reward traces:          skipped"),
            }
            for s in &summary.skipped {
                println!("skipped: {s}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::VerifyFixtures { update_latencies, repeat } => verify_fixtures(&cli.common, *update_latencies, *repeat),
    }
}

fn verify_fixtures(common: &Common, update: bool, repeat: usize) -> Result<ExitCode> {
    let mut cfg = load_config(common)?;
    let scratch = tempfile::tempdir().context("creating scratch run directory")?;
    cfg.run_dir = scratch.path().to_path_buf();
    cfg.backend = kernelbench::orchestrator::BackendKind::LocalCc;
    let orch = Orchestrator::new(cfg)?;
    let mut failed = BTreeMap::new();
    // Passes run over the whole suite so one slow spell does not land on a
    // single task's every sample.
    let mut means: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for _ in 0..repeat.max(1) {
        for (ti, t) in orch.suite().iter().enumerate() {
            if failed.contains_key(&ti) {
                continue;
            }
            let Some(gt) = &t.ground_truth else {
                failed.insert(ti, "no ground truth".to_string());
                continue;
            };
            let c = Candidate {
                task_id: t.task_id.clone(),
                sample_index: 0,
                raw_output: String::new(),
                think: None,
                host_code: gt.host.clone(),
                kernel_code: Some(gt.kernel.clone()),
                tiling_code: gt.tiling.clone(),
                extraction_ok: true,
            };
            let rec = orch.run_candidate(t, &c)?;
            if !rec.passed(Stage::Performance) {
                let why = rec.stages.last().map_or(String::new(), |s| format!("{:?}: {}", s.stage, s.detail));
                failed.insert(ti, why);
                continue;
            }
            for l in &rec.latency {
                means.entry((ti, l.case_id.clone())).or_default().push(l.stats.mean_ms);
            }
        }
    }
    for (ti, t) in orch.suite().iter().enumerate() {
        if let Some(why) = failed.get(&ti) {
            println!("{:<14} FAIL {why}", t.task_id);
            continue;
        }
        let mut text = String::new();
        if update {
            text = std::fs::read_to_string(t.dir.join(MANIFEST_FILE))?;
        }
        for case in &t.test_cases {
            let Some(v) = means.get_mut(&(ti, case.case_id.clone())) else {
                continue;
            };
            v.sort_by(f64::total_cmp);
            let median = v[v.len() / 2];
            println!(
                "{:<14} {:<10} ok  median mean {:.6} ms over {}  shipped {}",
                t.task_id,
                case.case_id,
                median,
                v.len(),
                case.reference_latency_ms.map_or("-".to_string(), |r| format!("{r:.6} ms"))
            );
            if update {
                text = set_reference_latency(&text, &case.case_id, median);
            }
        }
        if update {
            let path = t.dir.join(MANIFEST_FILE);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if !failed.is_empty() {
        bail!("{} task(s) failed verification", failed.len());
    }
    Ok(ExitCode::SUCCESS)
}

/// Set `reference_latency_ms` inside `[case.<id>]`, replacing an existing value.
fn set_reference_latency(text: &str, case_id: &str, ms: f64) -> String {
    let header = format!("[case.{case_id}]");
    let new_line = format!("reference_latency_ms = {ms:.6}");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let Some(start) = lines.iter().position(|l| l.trim() == header) else {
        return text.to_string();
    };
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim_start().starts_with('['))
        .map_or(lines.len(), |i| start + 1 + i);
    if let Some(i) = (start + 1..end).find(|&i| lines[i].trim_start().starts_with("reference_latency_ms")) {
        lines[i] = new_line;
    } else {
        let last = (start..end).rev().find(|&i| !lines[i].trim().is_empty()).unwrap_or(start);
        lines.insert(last + 1, new_line);
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
