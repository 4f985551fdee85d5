use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::config::{invalid, ConfigError, FlatConfig};
use crate::feedback::{FeedbackConfig, RewardConfig};
use crate::scoreboard::PassAtKMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    LocalCc,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Endpoint,
    Scripted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeouts {
    pub compile_ms: u64,
    pub exec_ms: u64,
    pub gen_ms: u64,
}

impl Timeouts {
    pub fn compile(&self) -> Duration {
        Duration::from_millis(self.compile_ms)
    }

    pub fn exec(&self) -> Duration {
        Duration::from_millis(self.exec_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfConfig {
    pub warmup: u32,
    pub runs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub fixtures: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub endpoint_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub weights: [f64; 3],
    pub k_list: Vec<usize>,
    pub mode: PassAtKMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub suite_root: PathBuf,
    pub instructions: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub n_samples: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub generator: GeneratorKind,
    pub timeouts: Timeouts,
    pub gen: GenConfig,
    pub perf: PerfConfig,
    pub score: ScoreConfig,
    pub mock_script: Option<PathBuf>,
    pub cc: String,
    pub cflags: Vec<String>,
    pub feedback: FeedbackConfig,
    /// Skip (task, sample) keys already present in `records.jsonl`.
    pub resume: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_flat(&FlatConfig::load(path)?)
    }

    /// Read every known key, then reject leftovers.
    pub fn from_flat(f: &FlatConfig) -> Result<Self, ConfigError> {
        let backend = match f.str("run.backend").as_deref() {
            None | Some("local_cc") => BackendKind::LocalCc,
            Some("mock") => BackendKind::Mock,
            Some(other) => return Err(invalid("run.backend", other, "expected local_cc or mock")),
        };
        let generator = match f.str("run.generator").as_deref() {
            None | Some("scripted") => GeneratorKind::Scripted,
            Some("endpoint") => GeneratorKind::Endpoint,
            Some(other) => return Err(invalid("run.generator", other, "expected endpoint or scripted")),
        };
        let mode = match f.str("score.pass_at_k_mode") {
            None => PassAtKMode::Auto,
            Some(s) => PassAtKMode::parse(&s)
                .ok_or_else(|| invalid("score.pass_at_k_mode", &s, "expected unbiased, first_k or auto"))?,
        };
        let rewards = [
            "feedback.reward.parsed",
            "feedback.reward.compiled",
            "feedback.reward.precise",
            "feedback.reward.perf_target",
        ]
        .map(|k| f.parse_opt::<f64>(k));
        let [parsed, compiled, precise, perf_target] = rewards;
        let rewards = match (parsed?, compiled?, precise?, perf_target?) {
            (None, None, None, None) => None,
            (Some(parsed), Some(compiled), Some(precise), Some(perf_target)) => Some(RewardConfig {
                parsed,
                compiled,
                precise,
                perf_target,
            }),
            _ => {
                return Err(invalid(
                    "feedback.reward",
                    "partial",
                    "set all four of parsed, compiled, precise and perf_target",
                ))
            }
        };

        let cfg = RunConfig {
            suite_root: f.require_path("suite.root")?,
            instructions: f.path("suite.instructions"),
            run_dir: f.require_path("run.dir")?,
            n_samples: f.parse_or("gen.n_samples", 1)?,
            parallelism: f.parse_or("run.parallelism", 1)?,
            seed: f.parse_or("run.seed", 0)?,
            backend,
            generator,
            timeouts: Timeouts {
                compile_ms: f.parse_or("timeouts.compile_ms", 60_000)?,
                exec_ms: f.parse_or("timeouts.exec_ms", 10_000)?,
                gen_ms: f.parse_or("timeouts.gen_ms", 120_000)?,
            },
            gen: GenConfig {
                temperature: f.parse_or("gen.temperature", 0.0)?,
                top_p: f.parse_or("gen.top_p", 1.0)?,
                max_tokens: f.parse_or("gen.max_tokens", 4096)?,
                max_retries: f.parse_or("gen.max_retries", 3)?,
                fixtures: f.path("gen.fixtures"),
                endpoint_url: f.str("endpoint.url"),
                endpoint_model: f.str("endpoint.model"),
            },
            perf: PerfConfig {
                warmup: f.parse_or("perf.warmup", 3)?,
                runs: f.parse_or("perf.runs", 10)?,
            },
            score: ScoreConfig {
                weights: [
                    f.parse_or("score.w1", 0.2)?,
                    f.parse_or("score.w2", 0.3)?,
                    f.parse_or("score.w3", 0.5)?,
                ],
                k_list: f.list("score.k")?.unwrap_or_else(|| vec![1]),
                mode,
            },
            mock_script: f.path("mock.script"),
            cc: f.str("toolchain.cc").unwrap_or_else(|| "cc".into()),
            cflags: f
                .str("toolchain.cflags")
                .unwrap_or_else(|| "-O2 -std=c11".into())
                .split_whitespace()
                .map(String::from)
                .collect(),
            feedback: FeedbackConfig {
                pairs_per_task: f.parse_or("feedback.pairs_per_task", 4)?,
                rewards,
                perf_threshold: f.parse_or("feedback.perf_threshold", 1.0)?,
                quota: f.parse_opt("feedback.quota")?,
                augment: f.parse_or("feedback.augment", false)?,
                min_failure_rate: f.parse_or("feedback.min_failure_rate", 0.0)?,
            },
            resume: false,
        };
        f.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_samples < 1 {
            return Err(invalid("gen.n_samples", self.n_samples, "must be at least 1"));
        }
        if self.parallelism < 1 {
            return Err(invalid("run.parallelism", self.parallelism, "must be at least 1"));
        }
        for (i, w) in self.score.weights.iter().enumerate() {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(invalid(&format!("score.w{}", i + 1), w, "weights must be finite and >= 0"));
            }
        }
        if self.score.k_list.is_empty() || self.score.k_list.contains(&0) {
            return Err(invalid("score.k", format!("{:?}", self.score.k_list), "k values must be >= 1"));
        }
        if self.perf.runs < 1 {
            return Err(invalid("perf.runs", self.perf.runs, "must be at least 1"));
        }
        for (key, v) in [
            ("timeouts.compile_ms", self.timeouts.compile_ms),
            ("timeouts.exec_ms", self.timeouts.exec_ms),
            ("timeouts.gen_ms", self.timeouts.gen_ms),
        ] {
            if v == 0 {
                return Err(invalid(key, v, "must be positive"));
            }
        }
        if !(self.gen.top_p > 0.0 && self.gen.top_p <= 1.0) {
            return Err(invalid("gen.top_p", self.gen.top_p, "must lie in (0, 1]"));
        }
        if self.gen.temperature < 0.0 {
            return Err(invalid("gen.temperature", self.gen.temperature, "must be >= 0"));
        }
        match self.generator {
            GeneratorKind::Scripted if self.gen.fixtures.is_none() => {
                return Err(ConfigError::Missing("gen.fixtures".into()))
            }
            GeneratorKind::Endpoint if self.gen.endpoint_url.is_none() => {
                return Err(ConfigError::Missing("endpoint.url".into()))
            }
            GeneratorKind::Endpoint if self.gen.endpoint_model.is_none() => {
                return Err(ConfigError::Missing("endpoint.model".into()))
            }
            _ => {}
        }
        if self.backend == BackendKind::Mock && self.mock_script.is_none() {
            return Err(ConfigError::Missing("mock.script".into()));
        }
        if !self.suite_root.is_dir() {
            return Err(invalid(
                "suite.root",
                self.suite_root.display(),
                "directory does not exist",
            ));
        }
        Ok(())
    }
}
