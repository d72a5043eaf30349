//! The `TNSS1` tensor file format.
//!
//! ```text
//! TNSS1\n
//! {"shape":[4,4,4,4],"dtype":"f64"}\n
//! <product(shape) little-endian f64 values, row-major>
//! ```

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const MAGIC: &str = "TNSS1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic line {0:?}")]
    BadMagic(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}")]
    Dtype(String),
    #[error("expected {expected} bytes of payload, found {actual}")]
    Payload { expected: usize, actual: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<(), FormatError> {
    let header = Header { shape: t.shape().to_vec(), dtype: "f64".into() };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header).map_err(|e| FormatError::BadHeader(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: BufRead>(mut r: R) -> Result<Tensor, FormatError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end_matches('\n') != MAGIC {
        return Err(FormatError::BadMagic(line));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| FormatError::BadHeader(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(FormatError::Dtype(header.dtype));
    }
    let count: usize = header.shape.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 8 || header.shape.is_empty() {
        return Err(FormatError::Payload { expected: count * 8, actual: payload.len() });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor::new(header.shape, data)?)
}

pub fn save(path: &Path, t: &Tensor) -> Result<(), FormatError> {
    let file = fs::File::create(path)?;
    write_tensor(io::BufWriter::new(file), t)
}

pub fn load(path: &Path) -> Result<Tensor, FormatError> {
    let file = fs::File::open(path)?;
    read_tensor(io::BufReader::new(file))
}
