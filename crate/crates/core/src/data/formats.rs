//! Readers for the public dataset file formats.
//!
//! - IDX (MNIST), optionally gzip-compressed.
//! - MATLAB level-5 MAT files (SVHN `*_32x32.mat`), including zlib-compressed
//!   elements.
//! - LIBSVM sparse text (the 9,298-image USPS release, `usps` / `usps.t`).

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::{GzDecoder, ZlibDecoder};

use crate::error::{Error, Result};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads a file, transparently inflating it when it is gzip-compressed.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData { path: path.to_path_buf(), reason: "file not found".into() }
        } else {
            Error::io(path, e)
        }
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// A decoded IDX file: dimensions plus unsigned-byte payload.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file whose element type is unsigned byte (0x08).
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, "not an IDX file"));
    }
    if bytes[2] != 0x08 {
        return Err(format_err(path, format!("unsupported IDX element type {:#x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(format_err(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(format_err(
            path,
            format!("IDX payload has {} bytes, dims {dims:?} need {n}", bytes.len() - header),
        ));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&read_maybe_gz(path)?, path)
}

/// Encodes an unsigned-byte IDX file.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// A numeric matrix variable from a MAT file, converted to `f64`, stored in
/// MATLAB's column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl MatArray {
    /// Element at a multi-index (column-major).
    pub fn at(&self, index: &[usize]) -> f64 {
        let mut offset = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.dims) {
            offset += i * stride;
            stride *= d;
        }
        self.data[offset]
    }
}

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self
            .buf
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| format_err(self.path, "truncated MAT element"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    /// Reads one data element tag and body, handling the small-element form.
    fn element(&mut self) -> Result<(u32, &'a [u8])> {
        let word = self.u32()?;
        if word >> 16 != 0 {
            let ty = word & 0xffff;
            let size = (word >> 16) as usize;
            let body = self
                .buf
                .get(self.pos..self.pos + size)
                .ok_or_else(|| format_err(self.path, "truncated small MAT element"))?;
            self.pos += 4;
            return Ok((ty, body));
        }
        let size = self.u32()? as usize;
        let body = self
            .buf
            .get(self.pos..self.pos + size)
            .ok_or_else(|| format_err(self.path, "truncated MAT element body"))?;
        self.pos += size;
        if word != MI_COMPRESSED {
            self.pos = self.pos.div_ceil(8) * 8;
        }
        Ok((word, body))
    }
}

fn numeric(ty: u32, body: &[u8], path: &Path) -> Result<Vec<f64>> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            body.chunks_exact($n)
                .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        };
    }
    Ok(match ty {
        MI_INT8 => body.iter().map(|&b| b as i8 as f64).collect(),
        MI_UINT8 => body.iter().map(|&b| b as f64).collect(),
        MI_INT16 => conv!(i16, 2),
        MI_UINT16 => conv!(u16, 2),
        MI_INT32 => conv!(i32, 4),
        MI_UINT32 => conv!(u32, 4),
        MI_SINGLE => conv!(f32, 4),
        MI_DOUBLE => conv!(f64, 8),
        MI_INT64 => conv!(i64, 8),
        MI_UINT64 => conv!(u64, 8),
        other => return Err(format_err(path, format!("unsupported MAT numeric type {other}"))),
    })
}

fn parse_matrix(body: &[u8], path: &Path) -> Result<Option<MatArray>> {
    let mut r = Reader { buf: body, pos: 0, path };
    let (_, flags) = r.element()?;
    if flags.len() < 8 {
        return Err(format_err(path, "bad array flags"));
    }
    let class = flags[0];
    // Numeric classes are 6 (double) through 15 (uint64); skip cells,
    // structs, chars and sparse matrices.
    if !(6..=15).contains(&class) {
        return Ok(None);
    }
    let (dty, dims) = r.element()?;
    let dims: Vec<usize> = numeric(dty, dims, path)?.into_iter().map(|d| d as usize).collect();
    let (_, name) = r.element()?;
    let name = String::from_utf8_lossy(name).into_owned();
    let (rty, real) = r.element()?;
    let data = numeric(rty, real, path)?;
    if data.len() != dims.iter().product::<usize>() {
        return Err(format_err(path, format!("variable {name}: payload does not match {dims:?}")));
    }
    Ok(Some(MatArray { name, dims, data }))
}

fn parse_elements(buf: &[u8], path: &Path, out: &mut Vec<MatArray>) -> Result<()> {
    let mut r = Reader { buf, pos: 0, path };
    while !r.done() {
        let (ty, body) = r.element()?;
        match ty {
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(body)
                    .read_to_end(&mut inflated)
                    .map_err(|e| format_err(path, format!("zlib: {e}")))?;
                parse_elements(&inflated, path, out)?;
            }
            MI_MATRIX => {
                if let Some(m) = parse_matrix(body, path)? {
                    out.push(m);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Parses the numeric variables of a level-5 MAT file.
pub fn parse_mat(bytes: &[u8], path: &Path) -> Result<Vec<MatArray>> {
    if bytes.len() < 128 {
        return Err(format_err(path, "file shorter than a MAT header"));
    }
    if &bytes[126..128] != b"IM" {
        return Err(format_err(path, "not a little-endian level-5 MAT file"));
    }
    let mut out = Vec::new();
    parse_elements(&bytes[128..], path, &mut out)?;
    Ok(out)
}

pub fn read_mat(path: &Path) -> Result<Vec<MatArray>> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingData { path: path.to_path_buf(), reason: "file not found".into() }
        } else {
            Error::io(path, e)
        }
    })?;
    parse_mat(&bytes, path)
}

/// Parses LIBSVM-format rows `label idx:value ...` into dense rows of
/// `features` values (missing indices are zero). Indices are 1-based.
pub fn parse_libsvm(text: &str, features: usize, path: &Path) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, format!("line {}: bad label", lineno + 1)))?;
        let mut dense = vec![0.0; features];
        for tok in parts {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| format_err(path, format!("line {}: bad pair {tok}", lineno + 1)))?;
            let i: usize = i
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad index {i}", lineno + 1)))?;
            let v: f64 = v
                .parse()
                .map_err(|_| format_err(path, format!("line {}: bad value {v}", lineno + 1)))?;
            if i == 0 || i > features {
                return Err(format_err(path, format!("line {}: index {i} out of range", lineno + 1)));
            }
            dense[i - 1] = v;
        }
        rows.push((label, dense));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn idx_roundtrip_and_gzip() {
        let bytes = encode_idx(&[2, 2, 2], &[1, 2, 3, 4, 5, 6, 7, 8]);
        let a = parse_idx(&bytes, p()).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        assert_eq!(a.data, vec![1, 2, 3, 4, 5, 6, 7, 8]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&bytes).unwrap();
        fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(read_idx(&path).unwrap(), a);
    }

    #[test]
    fn idx_rejects_truncated_payload() {
        let mut bytes = encode_idx(&[3], &[1, 2, 3]);
        bytes.pop();
        assert!(parse_idx(&bytes, p()).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_idx(Path::new("/nonexistent/train-images-idx3-ubyte")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train-images-idx3-ubyte"));
    }

    /// Minimal level-5 writer for one uint8 matrix, optionally compressed.
    fn mat_bytes(name: &str, dims: &[i32], data: &[u8], compress: bool) -> Vec<u8> {
        fn el(ty: u32, body: &[u8]) -> Vec<u8> {
            let mut v = Vec::new();
            v.extend_from_slice(&ty.to_le_bytes());
            v.extend_from_slice(&(body.len() as u32).to_le_bytes());
            v.extend_from_slice(body);
            while v.len() % 8 != 0 {
                v.push(0);
            }
            v
        }
        let mut m = Vec::new();
        // mxUINT8_CLASS
        m.extend(el(MI_UINT32, &[9u8, 0, 0, 0, 0, 0, 0, 0]));
        let dims_b: Vec<u8> = dims.iter().flat_map(|d| d.to_le_bytes()).collect();
        m.extend(el(MI_INT32, &dims_b));
        m.extend(el(MI_INT8, name.as_bytes()));
        m.extend(el(MI_UINT8, data));
        let matrix = el(MI_MATRIX, &m);
        let mut out = vec![b' '; 116];
        out.extend_from_slice(&[0; 8]);
        out.extend_from_slice(&[0x00, 0x01, b'I', b'M']);
        if compress {
            let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::fast());
            enc.write_all(&matrix).unwrap();
            let z = enc.finish().unwrap();
            out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
            out.extend_from_slice(&(z.len() as u32).to_le_bytes());
            out.extend_from_slice(&z);
        } else {
            out.extend(matrix);
        }
        out
    }

    #[test]
    fn mat_reads_plain_and_compressed_uint8() {
        let data: Vec<u8> = (0..12).collect();
        for compress in [false, true] {
            let bytes = mat_bytes("X", &[2, 3, 2], &data, compress);
            let vars = parse_mat(&bytes, p()).unwrap();
            assert_eq!(vars.len(), 1);
            assert_eq!(vars[0].name, "X");
            assert_eq!(vars[0].dims, vec![2, 3, 2]);
            // column-major: (1, 2, 1) -> 1 + 2*2 + 1*6
            assert_eq!(vars[0].at(&[1, 2, 1]), 11.0);
        }
    }

    #[test]
    fn libsvm_rows_are_densified() {
        let rows = parse_libsvm("3 1:0.5 4:-1\n\n10 2:1\n", 4, p()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], (3.0, vec![0.5, 0.0, 0.0, -1.0]));
        assert_eq!(rows[1].0, 10.0);
        assert!(parse_libsvm("1 5:1", 4, p()).is_err());
    }
}
