//! Preference pairs, milestone rewards, tiling checks and sample balancing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::load_candidate;
use crate::orchestrator::{EvalRecord, Stage};
use crate::prompt::{render_tagged, Candidate};
use crate::tasks::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub think: Option<String>,
    /// Tagged host/kernel/tiling blocks.
    pub code: String,
}

impl Completion {
    fn of(c: &Candidate) -> Self {
        Completion {
            think: c.think.clone(),
            code: render_tagged(None, c.host_code.as_deref(), c.kernel_code.as_deref(), c.tiling_code.as_deref()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub task_id: String,
    pub prompt: String,
    pub chosen: Completion,
    pub rejected: Completion,
    pub chosen_sample: usize,
    pub rejected_sample: usize,
}

pub fn is_positive(r: &EvalRecord) -> bool {
    r.passed(Stage::Compile) && r.passed(Stage::Precision)
}

pub fn is_negative(r: &EvalRecord) -> bool {
    r.passed(Stage::Compile) && !r.passed(Stage::Precision)
}

/// Per task, pair positives with negatives in (positive, negative) sample
/// order, keeping at most `cap` pairs.
pub fn build_preference_pairs(run_dir: &Path, records: &[EvalRecord], cap: usize) -> Vec<PreferencePair> {
    let mut by_task: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_id.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (task_id, mut recs) in by_task {
        recs.sort_by_key(|r| r.sample_index);
        let pos: Vec<_> = recs.iter().filter(|r| is_positive(r)).collect();
        let neg: Vec<_> = recs.iter().filter(|r| is_negative(r)).collect();
        for (p, n) in pos.iter().flat_map(|p| neg.iter().map(move |n| (p, n))).take(cap) {
            let chosen = load_candidate(run_dir, p);
            let rejected = load_candidate(run_dir, n);
            let prompt = std::fs::read_to_string(run_dir.join(&p.sample_dir).join("prompt.md")).unwrap_or_default();
            out.push(PreferencePair {
                task_id: task_id.to_string(),
                prompt,
                chosen: Completion::of(&chosen),
                rejected: Completion::of(&rejected),
                chosen_sample: p.sample_index,
                rejected_sample: n.sample_index,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub parsed: f64,
    pub compiled: f64,
    pub precise: f64,
    pub perf_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub name: String,
    pub achieved: bool,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub task_id: String,
    pub sample_index: usize,
    pub milestones: Vec<Milestone>,
    pub total: f64,
}

impl RewardTrace {
    pub fn is_prefix_closed(&self) -> bool {
        self.milestones.windows(2).all(|w| w[0].achieved || !w[1].achieved)
    }
}

pub fn reward_trace(r: &EvalRecord, cfg: &RewardConfig, perf_threshold: f64) -> RewardTrace {
    let parsed = r.passed(Stage::Extract);
    let compiled = parsed && r.passed(Stage::Compile);
    let precise = compiled && r.passed(Stage::Precision);
    let fast = precise && r.speedup.is_some_and(|s| s >= perf_threshold);
    let milestones: Vec<Milestone> = [
        ("parsed", parsed, cfg.parsed),
        ("compiled", compiled, cfg.compiled),
        ("precise", precise, cfg.precise),
        ("perf_target", fast, cfg.perf_target),
    ]
    .into_iter()
    .map(|(name, achieved, value)| Milestone {
        name: name.into(),
        achieved,
        reward: if achieved { value } else { 0.0 },
    })
    .collect();
    RewardTrace {
        task_id: r.task_id.clone(),
        sample_index: r.sample_index,
        total: milestones.iter().map(|m| m.reward).sum(),
        milestones,
    }
}

/// Parse `key = value` (or `key: value`) lines into a tiling summary.
pub fn parse_tiling_summary(text: &str) -> BTreeMap<String, Scalar> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("//"))
        .filter_map(|l| l.split_once('=').or_else(|| l.split_once(':')))
        .map(|(k, v)| (k.trim().to_string(), Scalar::parse(v)))
        .collect()
}

fn scalar_eq(a: &Scalar, b: &Scalar) -> bool {
    match (a, b) {
        (Scalar::Int(x), Scalar::Int(y)) => x == y,
        (Scalar::Bool(x), Scalar::Bool(y)) => x == y,
        (Scalar::Text(x), Scalar::Text(y)) => x == y,
        (Scalar::Real(_), _) | (_, Scalar::Real(_)) => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
            _ => false,
        },
        _ => false,
    }
}

/// Every gold key must be present in the candidate with an equal value;
/// extra candidate keys are ignored.
pub fn verify_tiling_summary(candidate: &BTreeMap<String, Scalar>, gold: &BTreeMap<String, Scalar>) -> bool {
    gold.iter()
        .all(|(k, g)| candidate.get(k).is_some_and(|c| scalar_eq(c, g)))
}

fn key_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a, so a group's draw does not depend on the other groups.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

/// Bring every key group to `quota`: uniform subsampling when over,
/// round-robin replication when under and `augment` is set.
pub fn balance_samples<T: Clone>(
    samples: &[T],
    quota: usize,
    key_fn: impl Fn(&T) -> String,
    augment: bool,
    seed: u64,
) -> Vec<T> {
    let mut groups: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    for s in samples {
        groups.entry(key_fn(s)).or_default().push(s);
    }
    let mut out = Vec::new();
    for (key, group) in groups {
        if group.len() > quota {
            let mut rng = ChaCha8Rng::seed_from_u64(key_seed(seed, &key));
            let mut picked = rand::seq::index::sample(&mut rng, group.len(), quota).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| group[i].clone()));
        } else if augment && !group.is_empty() {
            out.extend((0..quota).map(|i| group[i % group.len()].clone()));
        } else {
            out.extend(group.into_iter().cloned());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{StageOutcome, StageStatus};
    use proptest::prelude::*;

    fn rec(pass_through: usize, speedup: Option<f64>) -> EvalRecord {
        let stages = Stage::ALL
            .iter()
            .enumerate()
            .map(|(i, &stage)| StageOutcome {
                stage,
                status: match i.cmp(&pass_through) {
                    std::cmp::Ordering::Less => StageStatus::Pass,
                    std::cmp::Ordering::Equal => StageStatus::Fail,
                    std::cmp::Ordering::Greater => StageStatus::Skip,
                },
                duration_ms: 0.0,
                log_path: String::new(),
                detail: String::new(),
            })
            .collect();
        EvalRecord {
            task_id: "T".into(),
            level: 1,
            category: "C".into(),
            sample_index: 0,
            started_at_ms: 0,
            stages,
            case_ids: vec![],
            case_pass: vec![],
            latency: vec![],
            speedup,
            sample_dir: String::new(),
        }
    }

    const CFG: RewardConfig = RewardConfig {
        parsed: 0.1,
        compiled: 0.5,
        precise: 1.0,
        perf_target: 2.0,
    };

    #[test]
    fn reward_examples() {
        let precise_slow = rec(5, Some(0.5));
        assert!((reward_trace(&precise_slow, &CFG, 1.0).total - 1.6).abs() < 1e-12);
        let zero = RewardConfig {
            parsed: 0.0,
            compiled: 0.0,
            precise: 0.0,
            perf_target: 0.0,
        };
        assert_eq!(reward_trace(&precise_slow, &zero, 1.0).total, 0.0);
        let t = reward_trace(&rec(1, None), &CFG, 1.0);
        assert!(t.milestones.iter().all(|m| !m.achieved));
        assert_eq!(t.total, 0.0);
        assert!((reward_trace(&rec(5, Some(1.2)), &CFG, 1.0).total - 3.6).abs() < 1e-12);
    }

    #[test]
    fn tiling_subset_rule() {
        let gold = parse_tiling_summary("total_length = 1024\ntile_length = 256\nscale = 0.5\n");
        assert!(verify_tiling_summary(&gold, &gold));
        let mut extra = gold.clone();
        extra.insert("buffer_num".into(), Scalar::Int(2));
        assert!(verify_tiling_summary(&extra, &gold));
        let mut missing = gold.clone();
        missing.remove("tile_length");
        assert!(!verify_tiling_summary(&missing, &gold));
        let mut close = gold.clone();
        close.insert("scale".into(), Scalar::Real(0.5 + 1e-12));
        assert!(verify_tiling_summary(&close, &gold));
        close.insert("tile_length".into(), Scalar::Int(255));
        assert!(!verify_tiling_summary(&close, &gold));
    }

    #[test]
    fn balancing_examples() {
        let ten: Vec<u32> = (0..10).collect();
        let a = balance_samples(&ten, 3, |_| "k".into(), false, 7);
        assert_eq!(a.len(), 3);
        assert_eq!(a, balance_samples(&ten, 3, |_| "k".into(), false, 7));
        assert_eq!(balance_samples(&["a", "b"], 5, |_| "k".into(), true, 0), ["a", "b", "a", "b", "a"]);
        assert_eq!(balance_samples(&["a", "b"], 5, |_| "k".into(), false, 0), ["a", "b"]);
        assert!(balance_samples(&ten, 0, |_| "k".into(), true, 0).is_empty());
    }

    proptest! {
        #[test]
        fn traces_are_prefix_closed(stage in 0usize..=5, speedup in proptest::option::of(0.0f64..4.0), thr in 0.0f64..3.0) {
            let sp = if stage == 5 { speedup } else { None };
            let t = reward_trace(&rec(stage, sp), &CFG, thr);
            prop_assert!(t.is_prefix_closed());
            let sum: f64 = t.milestones.iter().filter(|m| m.achieved).map(|m| m.reward).sum();
            prop_assert_eq!(t.total, sum);
        }
    }
}
