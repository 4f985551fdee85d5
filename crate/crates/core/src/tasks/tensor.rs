use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Element type of a tensor as declared by a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F16,
    F32,
    I32,
    I64,
}

impl DType {
    pub const ALL: [DType; 4] = [DType::F16, DType::F32, DType::I32, DType::I64];

    pub fn parse(s: &str) -> Option<DType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f16" | "float16" | "half" => Some(DType::F16),
            "f32" | "float32" | "float" => Some(DType::F32),
            "i32" | "int32" => Some(DType::I32),
            "i64" | "int64" => Some(DType::I64),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F16 => "f16",
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::I64 => "i64",
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F16 | DType::F32)
    }

    /// Wire code used by the shim ABI.
    pub fn code(self) -> u32 {
        match self {
            DType::F16 => 0,
            DType::F32 => 1,
            DType::I32 => 2,
            DType::I64 => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<DType> {
        match code {
            0 => Some(DType::F16),
            1 => Some(DType::F32),
            2 => Some(DType::I32),
            3 => Some(DType::I64),
            _ => None,
        }
    }

    /// Round a float64 value to the nearest value representable in this
    /// dtype (nearest-even for the float types, saturating for integers).
    pub fn snap(self, v: f64) -> f64 {
        match self {
            DType::F16 => half::f16::from_f64(v).to_f64(),
            DType::F32 => v as f32 as f64,
            DType::I32 => {
                if v.is_nan() {
                    0.0
                } else {
                    v.round_ties_even().clamp(i32::MIN as f64, i32::MAX as f64)
                }
            }
            DType::I64 => {
                if v.is_nan() {
                    0.0
                } else {
                    v.round_ties_even().clamp(i64::MIN as f64, i64::MAX as f64)
                }
            }
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor shape must be nonempty")]
    EmptyShape,
    #[error("tensor shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("tensor shape {shape:?} needs {expected} values, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
}

/// Shape and dtype of a tensor without its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Dtype-tagged, shaped, flat buffer of float64 values.
///
/// Values are always snapped to the declared dtype on construction, so an
/// f16 tensor only ever holds float64 images of half-precision numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    dtype: DType,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TensorData {
    pub fn new(dtype: DType, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: values.len(),
            });
        }
        let values = values.into_iter().map(|v| dtype.snap(v)).collect();
        Ok(TensorData {
            dtype,
            shape,
            values,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn spec(&self) -> TensorSpec {
        TensorSpec {
            dtype: self.dtype,
            shape: self.shape.clone(),
        }
    }

    /// Re-tag the same values under another dtype, snapping them again.
    pub fn cast(&self, dtype: DType) -> TensorData {
        TensorData {
            dtype,
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| dtype.snap(v)).collect(),
        }
    }

    /// Bit-level equality, treating NaN payloads as equal to themselves.
    pub fn bit_eq(&self, other: &TensorData) -> bool {
        self.dtype == other.dtype
            && self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<(), TensorError> {
    if shape.is_empty() {
        return Err(TensorError::EmptyShape);
    }
    if shape.contains(&0) {
        return Err(TensorError::ZeroDim(shape.to_vec()));
    }
    Ok(())
}
