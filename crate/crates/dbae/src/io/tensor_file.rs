//! Binary tensor files.
//!
//! Layout: magic `DBT1` (4 bytes), dtype code (1 byte: 0 = f32,
//! 1 = f64), ndim (1 byte), shape (ndim little-endian u32 values),
//! payload (row-major, little-endian). Round trips are bit-exact for
//! either dtype; loading always widens to `f64`, which is lossless
//! from `f32`.

use crate::nn::Tensor;
use crate::{Error, Result};
use std::fs;
use std::path::Path;

/// File magic, first four bytes.
pub const MAGIC: [u8; 4] = *b"DBT1";

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Data(format!("unknown dtype code {other}"))),
        }
    }
}

/// Decoded tensor file: shape plus values widened to `f64`.
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

fn encode(shape: &[usize], dtype: Dtype, values: &[f64]) -> Result<Vec<u8>> {
    let count: usize = shape.iter().product();
    if count != values.len() {
        return Err(Error::Shape(format!(
            "shape {:?} holds {count} elements but {} values were given",
            shape,
            values.len()
        )));
    }
    for &d in shape {
        if d > u32::MAX as usize {
            return Err(Error::Data(format!("dimension {d} exceeds the u32 shape field")));
        }
    }
    let mut buf = Vec::with_capacity(6 + 4 * shape.len() + count * dtype.size());
    buf.extend_from_slice(&MAGIC);
    buf.push(dtype.code());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for &v in values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

/// Parses the byte image of a tensor file.
pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 6 {
        return Err(Error::Data(format!(
            "tensor file truncated: need at least 6 header bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Data(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            MAGIC
        )));
    }
    let dtype = Dtype::from_code(bytes[4])?;
    let ndim = bytes[5] as usize;
    let header_len = 6 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Data(format!(
            "tensor file truncated: shape needs {header_len} bytes, got {}",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 6 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        shape.push(d as usize);
    }
    let count: usize = shape.iter().product();
    let expected = header_len + count * dtype.size();
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "tensor payload length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let body = &bytes[header_len..];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(RawTensor { shape, dtype, data })
}

/// Writes an arbitrary-rank tensor.
pub fn save_raw(path: &Path, shape: &[usize], dtype: Dtype, values: &[f64]) -> Result<()> {
    let buf = encode(shape, dtype, values)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Reads any tensor file.
pub fn load_raw(path: &Path) -> Result<RawTensor> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

/// Writes a rank-2 tensor in double precision.
pub fn save_matrix_f64(path: &Path, t: &Tensor<f64>) -> Result<()> {
    save_raw(path, &[t.rows, t.cols], Dtype::F64, &t.data)
}

/// Writes a rank-2 tensor in single precision (values are narrowed).
pub fn save_matrix_f32(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let wide: Vec<f64> = t.data.iter().map(|&x| x as f64).collect();
    save_raw(path, &[t.rows, t.cols], Dtype::F32, &wide)
}

/// Writes a rank-1 tensor in double precision.
pub fn save_vector_f64(path: &Path, v: &[f64]) -> Result<()> {
    save_raw(path, &[v.len()], Dtype::F64, v)
}

/// Reads a rank-2 tensor of either dtype, widened to `f64`.
pub fn load_matrix(path: &Path) -> Result<Tensor<f64>> {
    let raw = load_raw(path)?;
    if raw.shape.len() != 2 {
        return Err(Error::Data(format!(
            "expected a rank-2 tensor, got rank {}",
            raw.shape.len()
        )));
    }
    Ok(Tensor::from_vec(raw.shape[0], raw.shape[1], raw.data))
}

/// Reads a rank-1 tensor of either dtype, widened to `f64`.
pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let raw = load_raw(path)?;
    if raw.shape.len() != 1 {
        return Err(Error::Data(format!(
            "expected a rank-1 tensor, got rank {}",
            raw.shape.len()
        )));
    }
    Ok(raw.data)
}
