//! Precision oracle and latency normalization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{DType, TensorData, Tolerance, TolerancePolicy};

/// Added to |golden| in the relative-difference denominator.
pub const REL_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum VerdictError {
    #[error("output count mismatch: expected {expected}, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("output {index}: shape {produced:?} does not match golden {golden:?}")]
    ShapeMismatch {
        index: usize,
        golden: Vec<usize>,
        produced: Vec<usize>,
    },
    #[error("no tolerance configured for dtype {0}")]
    UnknownDtype(DType),
    #[error("latencies must be positive (reference {t_ref}, generated {t_gen})")]
    NonPositiveLatency { t_ref: f64, t_gen: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionResult {
    pub is_accurate: bool,
    pub abs_diffs: Vec<f64>,
    pub rel_diffs: Vec<f64>,
}

impl PrecisionResult {
    pub fn max_abs(&self) -> f64 {
        self.abs_diffs.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_rel(&self) -> f64 {
        self.rel_diffs.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_abs(&self) -> f64 {
        if self.abs_diffs.is_empty() {
            return 0.0;
        }
        self.abs_diffs.iter().sum::<f64>() / self.abs_diffs.len() as f64
    }

    /// Number of elements that exceed both thresholds or are NaN.
    pub fn failing(&self, max_abs: f64, max_rel: f64) -> usize {
        self.abs_diffs
            .iter()
            .zip(&self.rel_diffs)
            .filter(|(a, r)| a.is_nan() || (**a > max_abs && **r > max_rel))
            .count()
    }
}

/// Element-wise comparison: an element fails only when its absolute and its
/// relative difference both exceed their thresholds. A NaN anywhere in the
/// produced output fails the comparison outright.
pub fn check_precision(
    golden: &[TensorData],
    produced: &[TensorData],
    max_abs: f64,
    max_rel: f64,
) -> Result<PrecisionResult, VerdictError> {
    if golden.len() != produced.len() {
        return Err(VerdictError::CountMismatch {
            expected: golden.len(),
            got: produced.len(),
        });
    }
    for (index, (g, p)) in golden.iter().zip(produced).enumerate() {
        if g.shape() != p.shape() {
            return Err(VerdictError::ShapeMismatch {
                index,
                golden: g.shape().to_vec(),
                produced: p.shape().to_vec(),
            });
        }
    }

    let total: usize = golden.iter().map(TensorData::numel).sum();
    let mut abs_diffs = Vec::with_capacity(total);
    let mut rel_diffs = Vec::with_capacity(total);
    let mut ok = true;
    for (g, p) in golden.iter().zip(produced) {
        for (&gv, &pv) in g.values().iter().zip(p.values()) {
            let abs = (gv - pv).abs();
            let rel = abs / (gv.abs() + REL_EPSILON);
            if pv.is_nan() || (abs > max_abs && rel > max_rel) {
                ok = false;
            }
            abs_diffs.push(abs);
            rel_diffs.push(rel);
        }
    }
    Ok(PrecisionResult {
        is_accurate: ok,
        abs_diffs,
        rel_diffs,
    })
}

/// A case override beats the per-dtype default.
pub fn select_tolerance(
    dtype: DType,
    policy: &TolerancePolicy,
    case_id: &str,
) -> Result<Tolerance, VerdictError> {
    if let Some(t) = policy.overrides.get(case_id) {
        return Ok(*t);
    }
    policy
        .per_dtype
        .get(&dtype)
        .copied()
        .ok_or(VerdictError::UnknownDtype(dtype))
}

/// `t_ref / t_gen`; above 1 means the candidate beats the reference.
pub fn speedup(t_ref_ms: f64, t_gen_ms: f64) -> Result<f64, VerdictError> {
    if !(t_ref_ms > 0.0 && t_gen_ms > 0.0) {
        return Err(VerdictError::NonPositiveLatency {
            t_ref: t_ref_ms,
            t_gen: t_gen_ms,
        });
    }
    Ok(t_ref_ms / t_gen_ms)
}
