//! Pure-software reference evaluators used to build golden outputs.
//!
//! Every operator computes in float64 and rounds once, at the end, to the
//! output dtype. Matmul with half-precision I/O therefore accumulates in wide
//! precision and only the final value is rounded to f16.

use thiserror::Error;

use super::tensor::{DType, TensorData, TensorError};
use super::Attrs;

pub const REGISTERED_OPS: &[&str] = &[
    "add",
    "sub",
    "abs",
    "sqrt",
    "equal",
    "gelu_tanh",
    "rms_norm",
    "matmul",
    "topk",
    "mul_sigmoid",
];

pub fn is_registered(op: &str) -> bool {
    REGISTERED_OPS.contains(&op)
}

#[derive(Debug, Error, PartialEq)]
pub enum ReferenceError {
    #[error("unknown reference op `{0}`")]
    UnknownOp(String),
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("`{op}` expects {expected} inputs, got {got}")]
    Arity {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid attribute for `{op}`: {detail}")]
    BadAttr { op: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn reference_eval(
    op: &str,
    inputs: &[TensorData],
    attrs: &Attrs,
) -> Result<Vec<TensorData>, ReferenceError> {
    match op {
        "add" => binary(op, inputs, |a, b| a + b),
        "sub" => binary(op, inputs, |a, b| a - b),
        "mul_sigmoid" => binary(op, inputs, |a, b| a * sigmoid(b)),
        "equal" => {
            let out = binary(op, inputs, |a, b| if a == b { 1.0 } else { 0.0 })?;
            Ok(out.into_iter().map(|t| t.cast(DType::I32)).collect())
        }
        "abs" => unary(op, inputs, f64::abs),
        "sqrt" => unary(op, inputs, f64::sqrt),
        "gelu_tanh" => unary(op, inputs, gelu_tanh),
        "rms_norm" => rms_norm(inputs, attrs),
        "matmul" => matmul(inputs),
        "topk" => topk(inputs, attrs),
        other => Err(ReferenceError::UnknownOp(other.to_string())),
    }
}

fn arity(op: &str, inputs: &[TensorData], n: usize) -> Result<(), ReferenceError> {
    if inputs.len() != n {
        return Err(ReferenceError::Arity {
            op: op.to_string(),
            expected: n,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn unary(
    op: &str,
    inputs: &[TensorData],
    f: impl Fn(f64) -> f64,
) -> Result<Vec<TensorData>, ReferenceError> {
    arity(op, inputs, 1)?;
    let x = &inputs[0];
    let values = x.values().iter().map(|&v| f(v)).collect();
    Ok(vec![TensorData::new(x.dtype(), x.shape().to_vec(), values)?])
}

fn binary(
    op: &str,
    inputs: &[TensorData],
    f: impl Fn(f64, f64) -> f64,
) -> Result<Vec<TensorData>, ReferenceError> {
    arity(op, inputs, 2)?;
    let (a, b) = (&inputs[0], &inputs[1]);
    if a.shape() != b.shape() {
        return Err(ReferenceError::ShapeMismatch {
            op: op.to_string(),
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(vec![TensorData::new(a.dtype(), a.shape().to_vec(), values)?])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn rms_norm(inputs: &[TensorData], attrs: &Attrs) -> Result<Vec<TensorData>, ReferenceError> {
    let op = "rms_norm";
    arity(op, inputs, 2)?;
    let (x, gamma) = (&inputs[0], &inputs[1]);
    let cols = *x.shape().last().unwrap_or(&0);
    if gamma.shape() != [cols] {
        return Err(ReferenceError::ShapeMismatch {
            op: op.to_string(),
            detail: format!("gamma {:?} does not match last dim {cols}", gamma.shape()),
        });
    }
    let eps = match attrs.get("epsilon") {
        Some(s) => s.as_f64().ok_or_else(|| ReferenceError::BadAttr {
            op: op.to_string(),
            detail: "epsilon must be numeric".into(),
        })?,
        None => 1e-6,
    };
    let mut out = Vec::with_capacity(x.numel());
    for row in x.values().chunks(cols) {
        let mean_sq = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
        let inv = 1.0 / (mean_sq + eps).sqrt();
        out.extend(row.iter().zip(gamma.values()).map(|(v, g)| v * inv * g));
    }
    Ok(vec![TensorData::new(x.dtype(), x.shape().to_vec(), out)?])
}

fn matmul(inputs: &[TensorData]) -> Result<Vec<TensorData>, ReferenceError> {
    let op = "matmul";
    arity(op, inputs, 2)?;
    let (a, b) = (&inputs[0], &inputs[1]);
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(ReferenceError::ShapeMismatch {
            op: op.to_string(),
            detail: format!("expected 2-D operands, got {:?} and {:?}", a.shape(), b.shape()),
        });
    };
    if k != k2 {
        return Err(ReferenceError::ShapeMismatch {
            op: op.to_string(),
            detail: format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = av[i * k + p];
            let brow = &bv[p * n..(p + 1) * n];
            for (o, &bpj) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    Ok(vec![TensorData::new(a.dtype(), vec![m, n], out)?])
}

fn topk(inputs: &[TensorData], attrs: &Attrs) -> Result<Vec<TensorData>, ReferenceError> {
    let op = "topk";
    arity(op, inputs, 1)?;
    let x = &inputs[0];
    let k = attrs
        .get("k")
        .and_then(|s| s.as_f64())
        .ok_or_else(|| ReferenceError::BadAttr {
            op: op.to_string(),
            detail: "missing numeric attribute k".into(),
        })?;
    let cols = *x.shape().last().unwrap_or(&0);
    if k < 1.0 || k.fract() != 0.0 || k as usize > cols {
        return Err(ReferenceError::BadAttr {
            op: op.to_string(),
            detail: format!("k={k} out of range for last dim {cols}"),
        });
    }
    let k = k as usize;
    let rows = x.numel() / cols;
    let mut values = Vec::with_capacity(rows * k);
    let mut indices = Vec::with_capacity(rows * k);
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for row in x.values().chunks(cols) {
        order.clear();
        order.extend(0..cols);
        // Descending by value; ties keep the lower index first.
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]).then(i.cmp(&j)));
        for &i in &order[..k] {
            values.push(row[i]);
            indices.push(i as f64);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = k;
    Ok(vec![
        TensorData::new(x.dtype(), shape.clone(), values)?,
        TensorData::new(DType::I64, shape, indices)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::Scalar;

    fn t(dtype: DType, shape: &[usize], v: &[f64]) -> TensorData {
        TensorData::new(dtype, shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn add_and_sqrt() {
        let out = reference_eval(
            "add",
            &[t(DType::F32, &[3], &[1., 2., 3.]), t(DType::F32, &[3], &[4., 5., 6.])],
            &Attrs::new(),
        )
        .unwrap();
        assert_eq!(out[0].values(), &[5., 7., 9.]);
        let out = reference_eval("sqrt", &[t(DType::F32, &[1], &[4.0])], &Attrs::new()).unwrap();
        assert_eq!(out[0].values(), &[2.0]);
    }

    #[test]
    fn abs_values() {
        let out =
            reference_eval("abs", &[t(DType::F32, &[3], &[-1., 2., -3.])], &Attrs::new()).unwrap();
        assert_eq!(out[0].values(), &[1., 2., 3.]);
    }

    #[test]
    fn topk_matches_full_sort() {
        let mut attrs = Attrs::new();
        attrs.insert("k".into(), Scalar::Int(2));
        let out = reference_eval("topk", &[t(DType::F32, &[4], &[5., 1., 9., 3.])], &attrs).unwrap();
        assert_eq!(out[0].values(), &[9., 5.]);
        assert_eq!(out[1].values(), &[2., 0.]);
        assert_eq!(out[1].dtype(), DType::I64);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = reference_eval(
            "matmul",
            &[t(DType::F32, &[2, 3], &[0.; 6]), t(DType::F32, &[2, 3], &[0.; 6])],
            &Attrs::new(),
        )
        .unwrap_err();
        assert!(matches!(err, ReferenceError::ShapeMismatch { .. }));
    }

    #[test]
    fn matmul_f16_rounds_once() {
        // 2048 + 1 + 1 is exact in f64 (2050) and representable in f16, while
        // stepwise f16 accumulation would stall at 2048.
        let a = t(DType::F16, &[1, 3], &[2048., 1., 1.]);
        let b = t(DType::F16, &[3, 1], &[1., 1., 1.]);
        let out = reference_eval("matmul", &[a, b], &Attrs::new()).unwrap();
        assert_eq!(out[0].values(), &[2050.0]);
    }

    #[test]
    fn unknown_op() {
        assert_eq!(
            reference_eval("conv9d", &[], &Attrs::new()).unwrap_err(),
            ReferenceError::UnknownOp("conv9d".into())
        );
    }

    #[test]
    fn equal_emits_i32_mask() {
        let out = reference_eval(
            "equal",
            &[t(DType::I32, &[3], &[1., 2., 3.]), t(DType::I32, &[3], &[1., 0., 3.])],
            &Attrs::new(),
        )
        .unwrap();
        assert_eq!(out[0].dtype(), DType::I32);
        assert_eq!(out[0].values(), &[1., 0., 1.]);
    }
}
