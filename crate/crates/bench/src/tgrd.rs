//! `TGRD` binary tensors: magic, u32 version, u32 rank, u64 dims (row-major),
//! u8 dtype code, then the payload. All integers and floats little-endian.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{BenchError, Result};

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64 = 1,
    F32 = 2,
}

impl DType {
    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(DType::F64),
            2 => Ok(DType::F32),
            other => Err(BenchError::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

/// Encode `x`; `F32` rounds each value to single precision.
pub fn encode(x: &ArrayD<f64>, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * x.ndim() + x.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(x.ndim() as u32).to_le_bytes());
    for &d in x.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(dtype as u8);
    for &v in x.iter() {
        match dtype {
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(BenchError::Format("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decode a tensor of any rank; values are widened to f64.
pub fn decode(bytes: &[u8]) -> Result<(ArrayD<f64>, DType)> {
    let mut c = Cursor { buf: bytes };
    if c.take(4)? != MAGIC {
        return Err(BenchError::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(BenchError::Format(format!("unsupported version {version}")));
    }
    let rank = c.u32()? as usize;
    let dims = (0..rank)
        .map(|_| c.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let dtype = DType::from_code(c.take(1)?[0])?;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| BenchError::Format("dimension overflow".into()))?;
    let payload = count
        .checked_mul(dtype.width())
        .ok_or_else(|| BenchError::Format("dimension overflow".into()))?;
    let raw = c.take(payload)?;
    if !c.buf.is_empty() {
        return Err(BenchError::Format(format!(
            "{} trailing bytes",
            c.buf.len()
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| BenchError::Format(e.to_string()))?;
    Ok((arr, dtype))
}

pub fn write_tensor(path: &Path, x: &ArrayD<f64>, dtype: DType) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(x, dtype))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(decode(&bytes)?.0)
}

/// Read a rank-2 tensor.
pub fn read_image(path: &Path) -> Result<Array2<f64>> {
    let x = read_tensor(path)?;
    let rank = x.ndim();
    x.into_dimensionality()
        .map_err(|_| BenchError::Format(format!("expected rank 2, got rank {rank}")))
}

pub fn write_image(path: &Path, x: &Array2<f64>) -> Result<()> {
    write_tensor(path, &x.clone().into_dyn(), DType::F64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 3]), (0..6).map(f64::from).collect()).unwrap();
        let b = encode(&x, DType::F64);
        assert_eq!(&b[..4], b"TGRD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 3);
        assert_eq!(b[28], 1);
        assert_eq!(b.len(), 29 + 48);
        assert_eq!(
            f64::from_le_bytes(b[29 + 8..29 + 16].try_into().unwrap()),
            1.0
        );
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let x = ArrayD::from_elem(IxDyn(&[3]), 0.5);
        let good = encode(&x, DType::F32);
        assert!(decode(&good).is_ok());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[20] = 7;
        assert!(decode(&bad).is_err());
        let mut long = good;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
