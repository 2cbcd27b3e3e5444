//! Tensor container: one line of JSON header, then a raw little-endian `f32` blob.
//!
//! ```text
//! {"format":"surrogate-tensors/1","dtype":"f32-le","meta":{..},"tensors":[{"name":..,"shape":[..],"offset":..}]}\n
//! <blob>
//! ```
//!
//! `offset` is in bytes from the start of the blob.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "surrogate-tensors/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A named tensor with its values in `f64` (stored as `f32`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write(mut out: impl Write, meta: serde_json::Value, tensors: &[Tensor]) -> Result<()> {
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let n: usize = t.shape.iter().product();
        if n != t.data.len() {
            return Err(Error::Format(format!("tensor {} has {} values for shape {:?}", t.name, t.data.len(), t.shape)));
        }
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset });
        offset += 4 * n as u64;
    }
    let header = Header { format: FORMAT.into(), dtype: "f32-le".into(), meta, tensors: entries };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for t in tensors {
        for &v in &t.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read(input: impl Read) -> Result<(serde_json::Value, Vec<Tensor>)> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.dtype != "f32-le" {
        return Err(Error::Format(format!("unsupported format {} / {}", header.format, header.dtype)));
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > blob.len() {
            return Err(Error::Format(format!("tensor {} runs past the end of the blob", e.name)));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor { name: e.name, shape: e.shape, data });
    }
    Ok((header.meta, tensors))
}

pub fn save(path: impl AsRef<Path>, meta: serde_json::Value, tensors: &[Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, meta, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<Tensor>)> {
    read(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_line_then_blob() {
        let t = Tensor { name: "a".into(), shape: vec![2, 3], data: vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3] };
        let u = Tensor { name: "b".into(), shape: vec![1], data: vec![7.0] };
        let mut buf = Vec::new();
        write(&mut buf, serde_json::json!({"k": 1}), &[t.clone(), u]).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(buf.len() - nl - 1, 4 * 7);
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["tensors"][1]["offset"], 24);
        let (meta, back) = read(buf.as_slice()).unwrap();
        assert_eq!(meta["k"], 1);
        assert_eq!(back[0].data[5], 1e-3f32 as f64);
        assert_eq!(back[1].data, vec![7.0]);
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let t = Tensor { name: "a".into(), shape: vec![4], data: vec![1.0; 4] };
        let mut buf = Vec::new();
        write(&mut buf, serde_json::Value::Null, &[t]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read(buf.as_slice()), Err(Error::Format(_))));
    }
}
