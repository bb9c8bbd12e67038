//! ±1 code matrices and their on-disk formats.
//!
//! Two formats are supported:
//!
//! - CSV: one row per sample, `1` / `-1` integers, no header.
//! - Packed: magic `MTFC`, then `rows` and `cols` as u64 little-endian, then
//!   each row packed into `ceil(cols / 8)` bytes. Bit `j` of a row lives in
//!   byte `j / 8` at bit position `j % 8` (least significant first); a set
//!   bit means `+1`. Padding bits are zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::read_matrix_csv;
use crate::{Error, Result};

pub const PACKED_MAGIC: &[u8; 4] = b"MTFC";

/// `sign` with the convention `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn sign_vector(v: &DVector<f64>) -> DVector<f64> {
    v.map(sign)
}

/// Binary code matrix: rows are samples, columns are code bits, entries are exactly ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix(DMatrix<f64>);

impl CodeMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = m.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(Error::InvalidData(format!("code entry {v} is not ±1")));
        }
        Ok(Self(m))
    }

    /// Entrywise sign of a real matrix.
    pub fn from_signs(m: &DMatrix<f64>) -> Self {
        Self(m.map(sign))
    }

    pub fn empty(cols: usize) -> Self {
        Self(DMatrix::zeros(0, cols))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn bits(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Row `i` as a ±1 vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    /// Packs row `i` into 64-bit words, bit `j` at word `j / 64`, position `j % 64`.
    pub fn packed_row(&self, i: usize) -> Vec<u64> {
        let mut words = vec![0u64; self.bits().div_ceil(64)];
        for j in 0..self.bits() {
            if self.0[(i, j)] > 0.0 {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        words
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            for i in 0..self.rows() {
                let row: Vec<&str> = self.0.row(i).iter().map(|&v| if v > 0.0 { "1" } else { "-1" }).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = read_matrix_csv(path)?;
        CodeMatrix::new(m).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let row_bytes = self.bits().div_ceil(8);
        let mut out = Vec::with_capacity(20 + row_bytes * self.rows());
        out.extend_from_slice(PACKED_MAGIC);
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.bits() as u64).to_le_bytes());
        for i in 0..self.rows() {
            let mut row = vec![0u8; row_bytes];
            for j in 0..self.bits() {
                if self.0[(i, j)] > 0.0 {
                    row[j / 8] |= 1 << (j % 8);
                }
            }
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_packed_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != PACKED_MAGIC {
            return Err(Error::Format("missing packed code header".into()));
        }
        let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let row_bytes = cols.div_ceil(8);
        let body = &bytes[20..];
        if rows.checked_mul(row_bytes) != Some(body.len()) {
            return Err(Error::Format(format!(
                "packed body has {} bytes, expected {rows} rows of {row_bytes}",
                body.len()
            )));
        }
        let m = DMatrix::from_fn(rows, cols, |i, j| {
            if body[i * row_bytes + j / 8] >> (j % 8) & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        });
        Ok(Self(m))
    }

    pub fn write_packed(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_packed_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_packed(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Self::from_packed_bytes(&buf).map_err(|e| Error::parse(path, e.to_string()))
    }
}

impl std::ops::Deref for CodeMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}
