//! On-disk formats.
//!
//! Tensors use the DOM1 format: one ASCII header line
//! `DOM1 <dtype> <ndim> <dim0> <dim1> ...`, dtype `u8` or `f64`, terminated
//! by `\n`, followed immediately by the raw little-endian row-major payload.
//! Label maps store as u8 with dims `[height, width]`; images and matrices
//! as f64 `[rows, cols]`; probability maps as f64 `[height, width, classes]`.
//!
//! Matrices additionally round-trip through headerless CSV (one row per
//! line, comma-separated, shortest round-trip float formatting).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{DenseMatrix, LabelMap, ProbMap};

/// Payload of a DOM1 tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Dom1Data {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

/// A decoded DOM1 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dom1Tensor {
    pub dims: Vec<usize>,
    pub data: Dom1Data,
}

impl Dom1Tensor {
    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(Dom1Tensor {
            dims,
            data: Dom1Data::U8(data),
        })
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_dims(&dims, data.len())?;
        Ok(Dom1Tensor {
            dims,
            data: Dom1Data::F64(data),
        })
    }

    /// Number of elements implied by the dims.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            Dom1Data::F64(v) => Some(v),
            Dom1Data::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            Dom1Data::U8(v) => Some(v),
            Dom1Data::F64(_) => None,
        }
    }
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::Argument("tensor needs at least one dimension".into()));
    }
    let mut product = 1usize;
    for &d in dims {
        if d == 0 {
            return Err(Error::Argument("tensor dimensions must be positive".into()));
        }
        product = product
            .checked_mul(d)
            .ok_or_else(|| Error::Argument("tensor dimensions overflow".into()))?;
    }
    if product != len {
        return Err(Error::Shape(format!(
            "tensor data has {} elements, dims imply {}",
            len, product
        )));
    }
    Ok(())
}

/// Append one tensor (header + payload) to `out`.
pub fn encode_dom1(out: &mut Vec<u8>, t: &Dom1Tensor) {
    let dtype = match &t.data {
        Dom1Data::U8(_) => "u8",
        Dom1Data::F64(_) => "f64",
    };
    let mut header = format!("DOM1 {} {}", dtype, t.dims.len());
    for d in &t.dims {
        let _ = write!(header, " {}", d);
    }
    header.push('\n');
    out.extend_from_slice(header.as_bytes());
    match &t.data {
        Dom1Data::U8(v) => out.extend_from_slice(v),
        Dom1Data::F64(v) => {
            out.reserve(v.len() * 8);
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

/// Sequential reader over a byte buffer holding one or more DOM1 tensors
/// (and, for container formats, leading text lines). Tracks byte offsets for
/// error reporting.
pub struct Dom1Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Dom1Reader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        Dom1Reader {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            locus: format!("byte {}", offset),
            message: message.into(),
        }
    }

    /// Current byte offset.
    pub fn offset(&self) -> usize {
        self.pos
    }

    /// Read one `\n`-terminated ASCII line (newline consumed, not returned).
    pub fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        let rest = &self.buf[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err(start, "missing newline-terminated header"))?;
        let line = &rest[..end];
        let text = std::str::from_utf8(line)
            .map_err(|_| self.err(start, "header is not valid ASCII/UTF-8"))?;
        self.pos = start + end + 1;
        Ok(text)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(
                self.pos,
                format!(
                    "truncated file: {} needs {} bytes, {} remain",
                    what,
                    n,
                    self.buf.len() - self.pos
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Decode the next tensor.
    pub fn tensor(&mut self) -> Result<Dom1Tensor> {
        let header_offset = self.pos;
        let header = self.line()?;
        let mut parts = header.split_ascii_whitespace();
        match parts.next() {
            Some("DOM1") => {}
            other => {
                return Err(self.err(
                    header_offset,
                    format!("expected DOM1 magic, found {:?}", other.unwrap_or("")),
                ))
            }
        }
        let dtype = parts
            .next()
            .ok_or_else(|| self.err(header_offset, "missing dtype"))?;
        let ndim: usize = parts
            .next()
            .ok_or_else(|| self.err(header_offset, "missing rank"))?
            .parse()
            .map_err(|_| self.err(header_offset, "rank is not an integer"))?;
        let mut dims = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let d: usize = parts
                .next()
                .ok_or_else(|| self.err(header_offset, format!("missing dimension {}", i)))?
                .parse()
                .map_err(|_| self.err(header_offset, format!("dimension {} is not an integer", i)))?;
            if d == 0 {
                return Err(self.err(header_offset, format!("dimension {} is zero", i)));
            }
            dims.push(d);
        }
        if parts.next().is_some() {
            return Err(self.err(header_offset, "trailing tokens after dimensions"));
        }
        let mut count = 1usize;
        for &d in &dims {
            count = count
                .checked_mul(d)
                .ok_or_else(|| self.err(header_offset, "dimensions overflow"))?;
        }
        match dtype {
            "u8" => {
                let raw = self.take(count, "u8 payload")?;
                Ok(Dom1Tensor {
                    dims,
                    data: Dom1Data::U8(raw.to_vec()),
                })
            }
            "f64" => {
                let nbytes = count
                    .checked_mul(8)
                    .ok_or_else(|| self.err(header_offset, "payload size overflows"))?;
                let raw = self.take(nbytes, "f64 payload")?;
                let mut v = Vec::with_capacity(count);
                for chunk in raw.chunks_exact(8) {
                    v.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                Ok(Dom1Tensor {
                    dims,
                    data: Dom1Data::F64(v),
                })
            }
            other => Err(self.err(
                header_offset,
                format!("unsupported dtype '{}', expected u8 or f64", other),
            )),
        }
    }

    /// Error unless the buffer is fully consumed.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(
                self.pos,
                format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Write a single tensor to `path`.
pub fn save_dom1(path: &Path, t: &Dom1Tensor) -> Result<()> {
    let mut out = Vec::new();
    encode_dom1(&mut out, t);
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a single tensor from `path`; trailing bytes are an error.
pub fn load_dom1(path: &Path) -> Result<Dom1Tensor> {
    let buf = std::fs::read(path)?;
    let mut r = Dom1Reader::new(&buf, path);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

/// Save a label map as a u8 DOM1 tensor with dims [height, width].
pub fn save_label_map(path: &Path, l: &LabelMap) -> Result<()> {
    let t = Dom1Tensor::u8(vec![l.height(), l.width()], l.data().to_vec())?;
    save_dom1(path, &t)
}

/// Load a label map; the class count is supplied by the caller and every
/// stored index must fall inside it.
pub fn load_label_map(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let t = load_dom1(path)?;
    let dims: [usize; 2] = match t.dims.as_slice() {
        &[h, w] => [h, w],
        other => {
            return Err(Error::Shape(format!(
                "label map {} has rank {}, expected 2",
                path.display(),
                other.len()
            )))
        }
    };
    let data = t.as_u8().ok_or_else(|| {
        Error::Validation(format!("label map {} must be u8", path.display()))
    })?;
    LabelMap::new(dims[1], dims[0], num_classes, data.to_vec())
}

/// Save a matrix (or image) as an f64 DOM1 tensor with dims [rows, cols].
pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let t = Dom1Tensor::f64(vec![m.rows(), m.cols()], m.data().to_vec())?;
    save_dom1(path, &t)
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let t = load_dom1(path)?;
    let dims: [usize; 2] = match t.dims.as_slice() {
        &[r, c] => [r, c],
        other => {
            return Err(Error::Shape(format!(
                "matrix {} has rank {}, expected 2",
                path.display(),
                other.len()
            )))
        }
    };
    let data = t.as_f64().ok_or_else(|| {
        Error::Validation(format!("matrix {} must be f64", path.display()))
    })?;
    DenseMatrix::new(dims[0], dims[1], data.to_vec())
}

/// Save a probability map as f64 with dims [height, width, classes].
pub fn save_prob_map(path: &Path, p: &ProbMap) -> Result<()> {
    let t = Dom1Tensor::f64(
        vec![p.height(), p.width(), p.num_classes()],
        p.data().to_vec(),
    )?;
    save_dom1(path, &t)
}

pub fn load_prob_map(path: &Path) -> Result<ProbMap> {
    let t = load_dom1(path)?;
    let dims: [usize; 3] = match t.dims.as_slice() {
        &[h, w, c] => [h, w, c],
        other => {
            return Err(Error::Shape(format!(
                "probability map {} has rank {}, expected 3",
                path.display(),
                other.len()
            )))
        }
    };
    let data = t.as_f64().ok_or_else(|| {
        Error::Validation(format!("probability map {} must be f64", path.display()))
    })?;
    ProbMap::new(dims[1], dims[0], dims[2], data.to_vec())
}

/// Render a matrix as headerless CSV. Floats use shortest round-trip
/// formatting, so `matrix_from_csv(matrix_to_csv(m)) == m` bit for bit.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m.at(r, c));
        }
        out.push('\n');
    }
    out
}

/// Parse a headerless CSV matrix; all rows must have equal width.
pub fn matrix_from_csv(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                locus: format!("line {}", lineno + 1),
                message: format!("field {} ('{}') is not a number", col + 1, field.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    locus: format!("line {}", lineno + 1),
                    message: format!(
                        "row has {} fields, previous rows have {}",
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            locus: "line 1".into(),
            message: "no rows".into(),
        });
    }
    let cols = rows[0].len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    DenseMatrix::new(data.len() / cols, cols, data)
}

pub fn save_csv_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    std::fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn load_csv_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path)?;
    matrix_from_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dom1_u8_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dom1");
        let t = Dom1Tensor::u8(vec![2, 3], vec![0, 1, 2, 3, 4, 5]).unwrap();
        save_dom1(&path, &t).unwrap();
        assert_eq!(load_dom1(&path).unwrap(), t);
    }

    #[test]
    fn dom1_f64_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dom1");
        let vals = vec![0.1, -1.5e300, f64::MIN_POSITIVE, 3.0, 0.30000000000000004, 0.0];
        let t = Dom1Tensor::f64(vec![2, 3], vals.clone()).unwrap();
        save_dom1(&path, &t).unwrap();
        let back = load_dom1(&path).unwrap();
        assert_eq!(back.as_f64().unwrap(), vals.as_slice());
    }

    #[test]
    fn dom1_header_is_ascii() {
        let mut out = Vec::new();
        encode_dom1(&mut out, &Dom1Tensor::u8(vec![1, 2], vec![7, 8]).unwrap());
        assert!(out.starts_with(b"DOM1 u8 2 1 2\n"));
        assert_eq!(&out[b"DOM1 u8 2 1 2\n".len()..], &[7, 8]);
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.dom1");
        std::fs::write(&path, b"DOM1 f64 1 4\n\x00\x00").unwrap();
        let err = load_dom1(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {:?}", err);
        assert!(err.to_string().contains("truncated"), "msg: {}", err);
    }

    #[test]
    fn bad_magic_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dom1");
        std::fs::write(&path, b"NOPE u8 1 1\nx").unwrap();
        assert!(matches!(load_dom1(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.dom1");
        std::fs::write(&path, b"DOM1 u8 1 1\nxy").unwrap();
        let err = load_dom1(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "msg: {}", err);
    }

    #[test]
    fn label_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.dom1");
        let l = LabelMap::new(3, 2, 4, vec![0, 1, 2, 3, 0, 1]).unwrap();
        save_label_map(&path, &l).unwrap();
        assert_eq!(load_label_map(&path, 4).unwrap(), l);
        // Same bytes, tighter class budget: stored index 3 no longer fits.
        assert!(load_label_map(&path, 3).is_err());
    }

    #[test]
    fn prob_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.dom1");
        let p = ProbMap::new(1, 2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        save_prob_map(&path, &p).unwrap();
        assert_eq!(load_prob_map(&path).unwrap(), p);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = DenseMatrix::new(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-17, 3.0]).unwrap();
        let text = matrix_to_csv(&m);
        let back = matrix_from_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(back.data(), m.data());
    }

    #[test]
    fn csv_ragged_rows_rejected_with_line() {
        let err = matrix_from_csv("1,2\n3\n", Path::new("r.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "msg: {}", msg);
    }

    #[test]
    fn csv_non_numeric_field_names_location() {
        let err = matrix_from_csv("1,2\n3,oops\n", Path::new("x.csv")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("oops"), "msg: {}", msg);
    }
}
