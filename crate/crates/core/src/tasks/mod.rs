//! Hierarchical benchmark task suite.
//!
//! A suite is a directory tree `lvl<N>/<Category>/<TaskName>/`, one
//! directory per task, each holding a `task.manifest` plus the prompt
//! material (`api_desc.md`, `host_template.txt`, `kernel_template.txt`,
//! optionally `tiling_template.txt`) and optionally a ground-truth
//! implementation under `reference/`.

mod manifest;
pub mod reference;
pub mod rng;
mod tensor;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, parse_manifest_text, ManifestError, MANIFEST_FILE};
pub use reference::{reference_eval, ReferenceError, REGISTERED_OPS};
pub use tensor::{DType, TensorData, TensorError, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn number(self) -> u8 {
        match self {
            Level::L1 => 1,
            Level::L2 => 2,
            Level::L3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Level> {
        match n {
            1 => Some(Level::L1),
            2 => Some(Level::L2),
            3 => Some(Level::L3),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        let s = s.trim().to_ascii_lowercase();
        let digits = s
            .strip_prefix("lvl")
            .or_else(|| s.strip_prefix("level"))
            .or_else(|| s.strip_prefix('l'))
            .unwrap_or(&s);
        digits.trim().parse().ok().and_then(Level::from_number)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Level {}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMode {
    Static,
    Dynamic,
}

/// Which parts of the operator the model must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPath {
    /// The harness supplies a fixed host driver; only kernel code is judged.
    DeviceOnly,
    /// The model supplies both host (tiling) and kernel code.
    HostDevice,
}

impl EvalPath {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalPath::DeviceOnly => "device_only",
            EvalPath::HostDevice => "host_device",
        }
    }
}

/// Attribute or tiling-summary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl Scalar {
    /// Parse a manifest literal: integers, then reals, then booleans, else text.
    pub fn parse(s: &str) -> Scalar {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            Scalar::Int(i)
        } else if let Ok(r) = s.parse::<f64>() {
            Scalar::Real(r)
        } else if s == "true" || s == "false" {
            Scalar::Bool(s == "true")
        } else {
            Scalar::Text(s.trim_matches('"').to_string())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Real(r) => Some(*r),
            Scalar::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Scalar::Text(_) => None,
        }
    }
}

pub type Attrs = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    SeededRandom { seed: u64, low: f64, high: f64 },
    Literal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub source: DataSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub max_abs: f64,
    pub max_rel: f64,
}

impl Tolerance {
    pub const fn new(max_abs: f64, max_rel: f64) -> Self {
        Tolerance { max_abs, max_rel }
    }

    /// Default thresholds: f32 is held to 1e-5, every other dtype to 1e-3.
    pub fn standard(dtype: DType) -> Self {
        match dtype {
            DType::F32 => Tolerance::new(1e-5, 1e-5),
            _ => Tolerance::new(1e-3, 1e-3),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TolerancePolicy {
    pub per_dtype: BTreeMap<DType, Tolerance>,
    pub overrides: BTreeMap<String, Tolerance>,
}

impl TolerancePolicy {
    /// Policy covering every dtype with the standard thresholds.
    pub fn standard() -> Self {
        TolerancePolicy {
            per_dtype: DType::ALL
                .iter()
                .map(|&d| (d, Tolerance::standard(d)))
                .collect(),
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestCase {
    pub case_id: String,
    pub inputs: Vec<InputSpec>,
    pub attrs: Attrs,
    pub reference_latency_ms: Option<f64>,
    golden: GoldenCache,
}

impl TestCase {
    pub fn new(case_id: impl Into<String>, inputs: Vec<InputSpec>, attrs: Attrs) -> Self {
        TestCase {
            case_id: case_id.into(),
            inputs,
            attrs,
            reference_latency_ms: None,
            golden: GoldenCache::default(),
        }
    }

    /// Dtype that selects the tolerance for this case (the first input's).
    pub fn dtype(&self) -> Option<DType> {
        self.inputs.first().map(|i| i.dtype)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.inputs.iter().map(|i| i.shape.clone()).collect()
    }
}

impl PartialEq for TestCase {
    fn eq(&self, other: &Self) -> bool {
        self.case_id == other.case_id
            && self.inputs == other.inputs
            && self.attrs == other.attrs
            && self.reference_latency_ms == other.reference_latency_ms
    }
}

/// Materialized inputs and golden outputs for one case under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCase {
    pub inputs: Vec<TensorData>,
    pub golden: Vec<TensorData>,
}

/// Per-seed golden cache. Racing writers store identical content.
#[derive(Clone, Default)]
struct GoldenCache(Arc<Mutex<HashMap<u64, Arc<ResolvedCase>>>>);

impl fmt::Debug for GoldenCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.lock().map(|m| m.len()).unwrap_or(0);
        write!(f, "GoldenCache({n} entries)")
    }
}

/// Ground-truth implementation shipped alongside a task.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kernel: String,
    pub host: Option<String>,
    pub tiling: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub level: Level,
    pub category: String,
    pub shape_mode: ShapeMode,
    pub eval_path: EvalPath,
    pub api_description: String,
    pub host_template: String,
    pub kernel_template: String,
    pub tiling_header_template: Option<String>,
    pub test_cases: Vec<TestCase>,
    pub tolerance_policy: TolerancePolicy,
    pub reference_op: String,
    pub ground_truth: Option<GroundTruth>,
    pub dir: PathBuf,
}

impl TaskSpec {
    /// `lvl1_categoryMath_Sqrt`, the prefix used for per-sample log names.
    pub fn log_stem(&self) -> String {
        format!(
            "lvl{}_category{}_{}",
            self.level.number(),
            self.category,
            self.task_id
        )
    }

    /// Relative directory of this task inside a run directory.
    pub fn run_subdir(&self) -> PathBuf {
        PathBuf::from(format!("lvl{}", self.level.number()))
            .join(&self.category)
            .join(&self.task_id)
    }

    pub fn case(&self, case_id: &str) -> Option<&TestCase> {
        self.test_cases.iter().find(|c| c.case_id == case_id)
    }
}

pub type TaskSuite = Vec<TaskSpec>;

/// Check every [`TaskSpec`] invariant and report all violations found.
pub fn validate_task(t: &TaskSpec) -> Result<(), Vec<String>> {
    let mut v = Vec::new();
    if t.task_id.trim().is_empty() {
        v.push("task_id is empty".to_string());
    }
    if !reference::is_registered(&t.reference_op) {
        v.push(format!(
            "reference_op `{}` is not a registered reference evaluator",
            t.reference_op
        ));
    }
    if t.test_cases.is_empty() {
        v.push("task has no test cases".to_string());
    }
    if t.eval_path == EvalPath::DeviceOnly && t.host_template.trim().is_empty() {
        v.push("device_only task must ship a complete host driver template".to_string());
    }
    if t.shape_mode == ShapeMode::Dynamic {
        let mut distinct: Vec<Vec<Vec<usize>>> = Vec::new();
        for c in &t.test_cases {
            let s = c.shapes();
            if !distinct.contains(&s) {
                distinct.push(s);
            }
        }
        if distinct.len() < 2 {
            v.push("dynamic requires ≥2 shapes".to_string());
        }
    }
    let mut seen_ids = Vec::new();
    for c in &t.test_cases {
        if seen_ids.contains(&&c.case_id) {
            v.push(format!("duplicate case id `{}`", c.case_id));
        }
        seen_ids.push(&c.case_id);
        if c.inputs.is_empty() {
            v.push(format!("case `{}` has no inputs", c.case_id));
        }
        for (i, input) in c.inputs.iter().enumerate() {
            if let Err(e) = tensor::check_shape(&input.shape) {
                v.push(format!("case `{}` input {i}: {e}", c.case_id));
            }
            if let DataSource::Literal(values) = &input.source {
                let numel: usize = input.shape.iter().product();
                if values.len() != numel {
                    v.push(format!(
                        "case `{}` input {i}: {} literal values for shape {:?}",
                        c.case_id,
                        values.len(),
                        input.shape
                    ));
                }
            }
            if let DataSource::SeededRandom { low, high, .. } = input.source {
                if low.is_nan() || high.is_nan() || low > high {
                    v.push(format!("case `{}` input {i}: empty range", c.case_id));
                }
            }
            if !t.tolerance_policy.per_dtype.contains_key(&input.dtype)
                && !t.tolerance_policy.overrides.contains_key(&c.case_id)
            {
                v.push(format!(
                    "tolerance_policy does not cover dtype {} used by case `{}`",
                    input.dtype, c.case_id
                ));
            }
        }
        if let Some(ms) = c.reference_latency_ms {
            if ms.is_nan() || ms < 0.0 {
                v.push(format!("case `{}`: reference_latency_ms must be ≥ 0", c.case_id));
            }
        }
    }
    let tolerances = t
        .tolerance_policy
        .per_dtype
        .values()
        .chain(t.tolerance_policy.overrides.values());
    for tol in tolerances {
        if !(tol.max_abs >= 0.0 && tol.max_rel >= 0.0) {
            v.push(format!(
                "tolerance thresholds must be ≥ 0 (got {}, {})",
                tol.max_abs, tol.max_rel
            ));
        }
    }
    for id in t.tolerance_policy.overrides.keys() {
        if t.case(id).is_none() {
            v.push(format!("tolerance override for unknown case `{id}`"));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn generate_input(spec: &InputSpec, stream: u64, seed: u64) -> Result<TensorData, TensorError> {
    let numel: usize = spec.shape.iter().product();
    let values = match &spec.source {
        DataSource::Literal(v) => v.clone(),
        DataSource::SeededRandom {
            seed: case_seed,
            low,
            high,
        } => {
            let rng = rng::CounterRng::new(rng::case_seed(*case_seed, seed), stream);
            if spec.dtype.is_float() {
                (0..numel as u64).map(|i| rng.uniform(i, *low, *high)).collect()
            } else {
                let (lo, hi) = (low.ceil() as i64, high.floor() as i64);
                (0..numel as u64).map(|i| rng.integer(i, lo, hi) as f64).collect()
            }
        }
    };
    TensorData::new(spec.dtype, spec.shape.clone(), values)
}

/// Materialize the inputs of `case` for `seed` and the golden outputs of the
/// task's reference evaluator. The result is cached per seed.
pub fn resolve_test_data(
    task: &TaskSpec,
    case: &TestCase,
    seed: u64,
) -> Result<Arc<ResolvedCase>, ReferenceError> {
    if let Some(hit) = case.golden.0.lock().unwrap().get(&seed) {
        return Ok(hit.clone());
    }
    let inputs = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, spec)| generate_input(spec, i as u64, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let golden = reference_eval(&task.reference_op, &inputs, &case.attrs)?;
    let resolved = Arc::new(ResolvedCase { inputs, golden });
    case.golden
        .0
        .lock()
        .unwrap()
        .insert(seed, resolved.clone());
    Ok(resolved)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn well_formed_static_task_validates() {
        let t = task("add", vec![literal_case("0", DType::F32, &[(&[2], &[1., 2.]), (&[2], &[3., 4.])])]);
        assert_eq!(validate_task(&t), Ok(()));
    }

    #[test]
    fn dynamic_with_one_shape_is_flagged() {
        let mut t = task(
            "add",
            vec![
                literal_case("0", DType::F32, &[(&[2], &[1., 2.])]),
                literal_case("1", DType::F32, &[(&[2], &[5., 6.])]),
            ],
        );
        t.shape_mode = ShapeMode::Dynamic;
        let v = validate_task(&t).unwrap_err();
        assert!(v.iter().any(|m| m == "dynamic requires ≥2 shapes"), "{v:?}");
    }

    #[test]
    fn violations_are_exhaustive() {
        let mut t = task("nope", vec![literal_case("0", DType::F16, &[(&[2], &[1.0])])]);
        t.tolerance_policy.per_dtype.remove(&DType::F16);
        t.shape_mode = ShapeMode::Dynamic;
        let v = validate_task(&t).unwrap_err();
        assert!(v.iter().any(|m| m.contains("not a registered")));
        assert!(v.iter().any(|m| m.contains("does not cover dtype f16")));
        assert!(v.iter().any(|m| m.contains("literal values")));
        assert!(v.iter().any(|m| m.contains("dynamic requires")));
    }

    #[test]
    fn resolve_is_deterministic_and_cached() {
        let case = TestCase::new(
            "0",
            vec![
                InputSpec {
                    shape: vec![64],
                    dtype: DType::F16,
                    source: DataSource::SeededRandom { seed: 9, low: -1.0, high: 1.0 },
                },
                InputSpec {
                    shape: vec![64],
                    dtype: DType::F16,
                    source: DataSource::SeededRandom { seed: 9, low: -1.0, high: 1.0 },
                },
            ],
            Attrs::new(),
        );
        let t = task("add", vec![case]);
        let a = resolve_test_data(&t, &t.test_cases[0], 5).unwrap();
        let c0 = &t.test_cases[0];
        let fresh = TestCase::new(c0.case_id.clone(), c0.inputs.clone(), c0.attrs.clone());
        let b = resolve_test_data(&t, &fresh, 5).unwrap();
        assert!(a.inputs[0].bit_eq(&b.inputs[0]));
        // Streams differ per input position.
        assert!(!a.inputs[0].bit_eq(&a.inputs[1]));
        let c = resolve_test_data(&t, &t.test_cases[0], 6).unwrap();
        assert!(!a.inputs[0].bit_eq(&c.inputs[0]));
        for v in a.golden[0].values() {
            assert_eq!(DType::F16.snap(*v), *v);
        }
    }

    #[test]
    fn level_parse_forms() {
        assert_eq!(Level::parse("1"), Some(Level::L1));
        assert_eq!(Level::parse("L2"), Some(Level::L2));
        assert_eq!(Level::parse("lvl3"), Some(Level::L3));
        assert_eq!(Level::parse("4"), None);
    }
}
