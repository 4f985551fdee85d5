//! Line-oriented task manifest.
//!
//! ```text
//! # comment
//! level = 1
//! category = Math
//! shape_mode = static          # static | dynamic
//! eval_path = device_only      # device_only | host_device
//! reference_op = sqrt
//! tol_abs.f32 = 1e-5
//! tol_rel.f32 = 1e-5
//!
//! [case.0]
//! shapes = 1024                # inputs separated by ';', dims by 'x'
//! dtype = f32
//! seed = 11                    # or: values = 1,2,3; 4,5,6
//! range = 0, 100               # optional, default -1, 1
//! attr.k = 8                   # optional attributes
//! tol_abs = 1e-4               # optional per-case override (with tol_rel)
//! tol_rel = 1e-4
//! reference_latency_ms = 0.25  # optional
//! ```
//!
//! `tolerance = standard` pre-populates every dtype with the default
//! thresholds before explicit `tol_*` keys are applied.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{
    validate_task, Attrs, DType, DataSource, EvalPath, GroundTruth, InputSpec, Level, Scalar,
    ShapeMode, TaskSpec, TaskSuite, TestCase, Tolerance, TolerancePolicy,
};

pub const MANIFEST_FILE: &str = "task.manifest";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{file}: missing field `{field}`")]
    MissingField { file: PathBuf, field: String },
    #[error("{file}: field `{field}` has unknown dtype `{value}`")]
    UnknownDtype {
        file: PathBuf,
        field: String,
        value: String,
    },
    #[error("duplicate task id `{task_id}` in {first} and {second}")]
    DuplicateTaskId {
        task_id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("{file}: cannot read template `{field}`: {source}")]
    UnreadableTemplate {
        file: PathBuf,
        field: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: field `{field}`: {message}")]
    InvalidValue {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}: task fails validation: {}", violations.join("; "))]
    Invalid {
        file: PathBuf,
        violations: Vec<String>,
    },
    #[error("cannot read suite directory {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Load every task below `root`, sorted by (level, category, task_id).
///
/// `root` may either be the suite directory itself (holding `lvl*`
/// directories) or a directory containing a `tasks/` suite.
pub fn load_manifest(root: &Path) -> Result<TaskSuite, ManifestError> {
    let root = if root.join("tasks").is_dir() {
        root.join("tasks")
    } else {
        root.to_path_buf()
    };
    let mut tasks: Vec<TaskSpec> = Vec::new();
    for level_dir in sorted_dirs(&root)? {
        let name = file_name(&level_dir);
        if !name.starts_with("lvl") {
            continue;
        }
        for category_dir in sorted_dirs(&level_dir)? {
            for task_dir in sorted_dirs(&category_dir)? {
                tasks.push(load_task_dir(&task_dir)?);
            }
        }
    }
    tasks.sort_by(|a, b| {
        (a.level, &a.category, &a.task_id).cmp(&(b.level, &b.category, &b.task_id))
    });
    let mut seen: BTreeMap<&str, &Path> = BTreeMap::new();
    for t in &tasks {
        if let Some(first) = seen.insert(&t.task_id, &t.dir) {
            return Err(ManifestError::DuplicateTaskId {
                task_id: t.task_id.clone(),
                first: first.to_path_buf(),
                second: t.dir.clone(),
            });
        }
    }
    Ok(tasks)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    let rd = fs::read_dir(dir).map_err(|source| ManifestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn read_template(dir: &Path, name: &str, manifest: &Path) -> Result<String, ManifestError> {
    fs::read_to_string(dir.join(name)).map_err(|source| ManifestError::UnreadableTemplate {
        file: manifest.to_path_buf(),
        field: name.to_string(),
        source,
    })
}

fn read_optional(path: &Path) -> Option<String> {
    fs::read_to_string(path).ok()
}

fn load_task_dir(dir: &Path) -> Result<TaskSpec, ManifestError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|_| ManifestError::MissingField {
        file: dir.to_path_buf(),
        field: MANIFEST_FILE.to_string(),
    })?;
    let mut task = parse_manifest_text(&text, &manifest_path, &file_name(dir))?;
    task.api_description = read_template(dir, "api_desc.md", &manifest_path)?;
    task.host_template = read_template(dir, "host_template.txt", &manifest_path)?;
    task.kernel_template = read_template(dir, "kernel_template.txt", &manifest_path)?;
    task.tiling_header_template = read_optional(&dir.join("tiling_template.txt"));
    let gt_dir = dir.join("reference");
    task.ground_truth = read_optional(&gt_dir.join("kernel.c")).map(|kernel| GroundTruth {
        kernel,
        host: read_optional(&gt_dir.join("host.c")),
        tiling: read_optional(&gt_dir.join("tiling.h")),
    });
    task.dir = dir.to_path_buf();
    validate_task(&task).map_err(|violations| ManifestError::Invalid {
        file: manifest_path.clone(),
        violations,
    })?;
    Ok(task)
}

#[derive(Default)]
struct CaseDraft {
    fields: BTreeMap<String, (usize, String)>,
}

/// Parse manifest text into a [`TaskSpec`] whose templates are still empty.
pub fn parse_manifest_text(
    text: &str,
    file: &Path,
    default_id: &str,
) -> Result<TaskSpec, ManifestError> {
    let mut top: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut cases: Vec<(String, CaseDraft)> = Vec::new();
    let invalid = |line: usize, field: &str, message: String| ManifestError::InvalidValue {
        file: file.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(section) = line.strip_prefix('[') {
            let section = section
                .strip_suffix(']')
                .ok_or_else(|| invalid(lineno, line, "unterminated section header".into()))?;
            let id = section
                .strip_prefix("case.")
                .filter(|id| !id.is_empty())
                .ok_or_else(|| invalid(lineno, section, "expected [case.<id>]".into()))?;
            cases.push((id.to_string(), CaseDraft::default()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(lineno, line, "expected `key = value`".into()))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let target = match cases.last_mut() {
            Some((_, draft)) => &mut draft.fields,
            None => &mut top,
        };
        if target.insert(key.clone(), (lineno, value)).is_some() {
            return Err(invalid(lineno, &key, "duplicate key".into()));
        }
    }

    let require = |field: &str| -> Result<(usize, String), ManifestError> {
        top.get(field)
            .cloned()
            .ok_or_else(|| ManifestError::MissingField {
                file: file.to_path_buf(),
                field: field.to_string(),
            })
    };

    let (line, v) = require("level")?;
    let level = Level::parse(&v).ok_or_else(|| invalid(line, "level", format!("`{v}` is not 1, 2 or 3")))?;
    let (_, category) = require("category")?;
    let (line, v) = require("shape_mode")?;
    let shape_mode = match v.as_str() {
        "static" => ShapeMode::Static,
        "dynamic" => ShapeMode::Dynamic,
        _ => return Err(invalid(line, "shape_mode", format!("`{v}` is not static|dynamic"))),
    };
    let (line, v) = require("eval_path")?;
    let eval_path = match v.as_str() {
        "device_only" => EvalPath::DeviceOnly,
        "host_device" => EvalPath::HostDevice,
        _ => {
            return Err(invalid(
                line,
                "eval_path",
                format!("`{v}` is not device_only|host_device"),
            ))
        }
    };
    let (_, reference_op) = require("reference_op")?;
    let task_id = top
        .get("task_id")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| default_id.to_string());

    let mut policy = TolerancePolicy::default();
    let mut pending_abs: BTreeMap<DType, f64> = BTreeMap::new();
    let mut pending_rel: BTreeMap<DType, f64> = BTreeMap::new();
    for (key, (line, value)) in &top {
        match key.as_str() {
            "task_id" | "level" | "category" | "shape_mode" | "eval_path" | "reference_op" => {}
            "tolerance" => {
                if value != "standard" {
                    return Err(invalid(*line, key, format!("`{value}` is not `standard`")));
                }
                policy = TolerancePolicy::standard();
            }
            k if k.starts_with("tol_abs.") || k.starts_with("tol_rel.") => {
                let dname = &k[8..];
                let dtype = DType::parse(dname).ok_or_else(|| ManifestError::UnknownDtype {
                    file: file.to_path_buf(),
                    field: k.to_string(),
                    value: dname.to_string(),
                })?;
                let x = parse_f64(value).ok_or_else(|| invalid(*line, k, "not a number".into()))?;
                if k.starts_with("tol_abs.") {
                    pending_abs.insert(dtype, x);
                } else {
                    pending_rel.insert(dtype, x);
                }
            }
            other => return Err(invalid(*line, other, "unknown key".into())),
        }
    }
    for (&dtype, &max_abs) in &pending_abs {
        let max_rel = *pending_rel
            .get(&dtype)
            .ok_or_else(|| ManifestError::MissingField {
                file: file.to_path_buf(),
                field: format!("tol_rel.{dtype}"),
            })?;
        policy.per_dtype.insert(dtype, Tolerance::new(max_abs, max_rel));
    }
    if let Some(dtype) = pending_rel.keys().find(|d| !pending_abs.contains_key(d)) {
        return Err(ManifestError::MissingField {
            file: file.to_path_buf(),
            field: format!("tol_abs.{dtype}"),
        });
    }

    let mut test_cases = Vec::with_capacity(cases.len());
    for (case_id, draft) in cases {
        let (case, tol) = parse_case(&case_id, &draft, file)?;
        if let Some(tol) = tol {
            policy.overrides.insert(case_id.clone(), tol);
        }
        test_cases.push(case);
    }

    Ok(TaskSpec {
        task_id,
        level,
        category,
        shape_mode,
        eval_path,
        api_description: String::new(),
        host_template: String::new(),
        kernel_template: String::new(),
        tiling_header_template: None,
        test_cases,
        tolerance_policy: policy,
        reference_op,
        ground_truth: None,
        dir: PathBuf::new(),
    })
}

fn parse_case(
    case_id: &str,
    draft: &CaseDraft,
    file: &Path,
) -> Result<(TestCase, Option<Tolerance>), ManifestError> {
    let field_name = |k: &str| format!("case.{case_id}.{k}");
    let invalid = |line: usize, k: &str, message: String| ManifestError::InvalidValue {
        file: file.to_path_buf(),
        line,
        field: field_name(k),
        message,
    };
    let missing = |k: &str| ManifestError::MissingField {
        file: file.to_path_buf(),
        field: field_name(k),
    };
    let get = |k: &str| draft.fields.get(k).cloned();

    let (line, shapes_raw) = get("shapes").ok_or_else(|| missing("shapes"))?;
    let shapes = shapes_raw
        .split(';')
        .map(|s| {
            s.trim()
                .split(['x', 'X'])
                .map(|d| d.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(line, "shapes", e.to_string()))?;
    let (_, dtype_raw) = get("dtype").ok_or_else(|| missing("dtype"))?;
    let dtype = DType::parse(&dtype_raw).ok_or_else(|| ManifestError::UnknownDtype {
        file: file.to_path_buf(),
        field: field_name("dtype"),
        value: dtype_raw.clone(),
    })?;

    let (low, high) = match get("range") {
        Some((line, r)) => {
            let parts: Vec<f64> = r
                .split(',')
                .map(|p| parse_f64(p.trim()))
                .collect::<Option<_>>()
                .filter(|v: &Vec<f64>| v.len() == 2)
                .ok_or_else(|| invalid(line, "range", "expected `low, high`".into()))?;
            (parts[0], parts[1])
        }
        None => (-1.0, 1.0),
    };

    let sources: Vec<DataSource> = match (get("seed"), get("values")) {
        (Some((line, s)), None) => {
            let seed = s
                .parse::<u64>()
                .map_err(|e| invalid(line, "seed", e.to_string()))?;
            vec![DataSource::SeededRandom { seed, low, high }; shapes.len()]
        }
        (None, Some((line, v))) => {
            let lists = v
                .split(';')
                .map(|chunk| {
                    chunk
                        .split(',')
                        .map(|x| parse_f64(x.trim()))
                        .collect::<Option<Vec<_>>>()
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| invalid(line, "values", "not a list of numbers".into()))?;
            if lists.len() != shapes.len() {
                return Err(invalid(
                    line,
                    "values",
                    format!("{} value lists for {} shapes", lists.len(), shapes.len()),
                ));
            }
            lists.into_iter().map(DataSource::Literal).collect()
        }
        (Some((line, _)), Some(_)) => {
            return Err(invalid(line, "seed", "`seed` and `values` are exclusive".into()))
        }
        (None, None) => return Err(missing("seed")),
    };

    let inputs = shapes
        .into_iter()
        .zip(sources)
        .map(|(shape, source)| InputSpec {
            shape,
            dtype,
            source,
        })
        .collect();

    let mut attrs = Attrs::new();
    let mut reference_latency_ms = None;
    let mut tol_abs = None;
    let mut tol_rel = None;
    for (key, (line, value)) in &draft.fields {
        match key.as_str() {
            "shapes" | "dtype" | "seed" | "values" | "range" => {}
            "reference_latency_ms" => {
                reference_latency_ms = Some(
                    parse_f64(value).ok_or_else(|| invalid(*line, key, "not a number".into()))?,
                )
            }
            "tol_abs" => {
                tol_abs = Some(parse_f64(value).ok_or_else(|| invalid(*line, key, "not a number".into()))?)
            }
            "tol_rel" => {
                tol_rel = Some(parse_f64(value).ok_or_else(|| invalid(*line, key, "not a number".into()))?)
            }
            k if k.starts_with("attr.") && k.len() > 5 => {
                attrs.insert(k[5..].to_string(), Scalar::parse(value));
            }
            other => return Err(invalid(*line, other, "unknown key".into())),
        }
    }
    let tol = match (tol_abs, tol_rel) {
        (Some(a), Some(r)) => Some(Tolerance::new(a, r)),
        (None, None) => None,
        (Some(_), None) => return Err(missing("tol_rel")),
        (None, Some(_)) => return Err(missing("tol_abs")),
    };
    let mut case = TestCase::new(case_id, inputs, attrs);
    case.reference_latency_ms = reference_latency_ms;
    Ok((case, tol))
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}
