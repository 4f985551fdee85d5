//! Binary files exchanged with the shim driver (see `shim/kb_driver.c`).

use crate::tasks::{Attrs, DType, TensorData, TensorSpec};

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_spec(buf: &mut Vec<u8>, dtype: DType, shape: &[usize]) {
    put_u32(buf, dtype.code());
    put_u32(buf, shape.len() as u32);
    for &d in shape {
        buf.extend_from_slice(&(d as i64).to_le_bytes());
    }
}

pub fn encode_input(inputs: &[TensorData], outputs: &[TensorSpec], attrs: &Attrs) -> Vec<u8> {
    let mut buf = b"KBIN".to_vec();
    put_u32(&mut buf, inputs.len() as u32);
    for t in inputs {
        put_spec(&mut buf, t.dtype(), t.shape());
        for &v in t.values() {
            match t.dtype() {
                DType::F16 | DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::I32 => buf.extend_from_slice(&(v as i32).to_le_bytes()),
                DType::I64 => buf.extend_from_slice(&(v as i64).to_le_bytes()),
            }
        }
    }
    put_u32(&mut buf, outputs.len() as u32);
    for s in outputs {
        put_spec(&mut buf, s.dtype, &s.shape);
    }
    let numeric: Vec<(&String, f64)> =
        attrs.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k, x))).collect();
    put_u32(&mut buf, numeric.len() as u32);
    for (k, v) in numeric {
        put_u32(&mut buf, k.len() as u32);
        buf.extend_from_slice(k.as_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("output file truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a driver output file, checking it against the declared specs.
/// Values are snapped to the declared dtypes on the way in.
pub fn decode_output(bytes: &[u8], expected: &[TensorSpec]) -> Result<Vec<TensorData>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(5)? != b"KBOUT" {
        return Err("output file has a bad magic".into());
    }
    let n = r.u32()? as usize;
    if n != expected.len() {
        return Err(format!("expected {} outputs, driver wrote {n}", expected.len()));
    }
    let mut out = Vec::with_capacity(n);
    for (i, spec) in expected.iter().enumerate() {
        let dtype = DType::from_code(r.u32()?).ok_or_else(|| format!("output {i}: bad dtype code"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.i64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if dtype != spec.dtype || shape != spec.shape {
            return Err(format!(
                "output {i}: got {dtype}{shape:?}, declared {}{:?}",
                spec.dtype, spec.shape
            ));
        }
        let numel = spec.numel();
        let values: Vec<f64> = match dtype {
            DType::F16 | DType::F32 => r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::I32 => r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::I64 => r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        out.push(TensorData::new(dtype, shape, values).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_output_is_rejected() {
        let spec = TensorSpec {
            dtype: DType::F32,
            shape: vec![2],
        };
        let mut bytes = b"KBOUT".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2i64.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        assert!(decode_output(&bytes, std::slice::from_ref(&spec)).unwrap_err().contains("truncated"));
        bytes.extend_from_slice(&2.5f32.to_le_bytes());
        let out = decode_output(&bytes, &[spec]).unwrap();
        assert_eq!(out[0].values(), &[1.5, 2.5]);
    }
}
