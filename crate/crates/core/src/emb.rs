//! In-memory embedding matrices and the `EMB1` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | version: u32 = 1 | count: u32 | dim: u32 | flags: u8
//! count × dim binary32, row-major
//! if flags & 2: count × (len: u32, UTF-8 bytes)
//! ```
//!
//! `flags` bit 0 marks unit-normalized rows, bit 1 marks the presence of ids.
//! Values are stored as `f32`; everything downstream computes in `f64` via
//! [`EmbeddingMatrix::to_matrix`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 17;

const FLAG_NORMALIZED: u8 = 1;
const FLAG_IDS: u8 = 2;

/// Tolerance on the row norm of matrices flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    rows: Vec<f32>,
    normalized: bool,
    ids: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    pub fn new(
        count: usize,
        dim: usize,
        rows: Vec<f32>,
        normalized: bool,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let m = Self {
            count,
            dim,
            rows,
            normalized,
            ids,
        };
        m.validate()?;
        Ok(m)
    }

    /// Rounds an `f64` matrix to storage precision.
    pub fn from_matrix(m: &Matrix, normalized: bool) -> Result<Self> {
        let rows = m.as_slice().iter().map(|&v| v as f32).collect();
        Self::new(m.rows(), m.cols(), rows, normalized, None)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.rows.iter().map(|&v| f64::from(v)).collect();
        Matrix::from_vec(self.count, self.dim, data).expect("validated shape")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        if self.rows.len() != self.count * self.dim {
            return Err(Error::Validation(format!(
                "expected {}×{} = {} values, found {}",
                self.count,
                self.dim,
                self.count * self.dim,
                self.rows.len()
            )));
        }
        if let Some(pos) = self.rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / self.dim,
                col: pos % self.dim,
            });
        }
        if self.normalized {
            for i in 0..self.count {
                let n = row_norm(self.row(i));
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NotNormalized { row: i, norm: n });
                }
            }
        }
        if let Some(ids) = &self.ids {
            if ids.len() != self.count {
                return Err(Error::Validation(format!(
                    "{} ids for {} rows",
                    ids.len(),
                    self.count
                )));
            }
        }
        Ok(())
    }

    /// Exact encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + 4 * self.rows.len()
            + self
                .ids
                .as_ref()
                .map_or(0, |ids| ids.iter().map(|s| 4 + s.len()).sum())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let count =
            u32::try_from(self.count).map_err(|_| Error::Validation("count exceeds u32".into()))?;
        let dim =
            u32::try_from(self.dim).map_err(|_| Error::Validation("dim exceeds u32".into()))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        let mut flags = 0u8;
        if self.normalized {
            flags |= FLAG_NORMALIZED;
        }
        if self.ids.is_some() {
            flags |= FLAG_IDS;
        }
        out.push(flags);
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(ids) = &self.ids {
            for id in ids {
                let len = u32::try_from(id.len())
                    .map_err(|_| Error::Validation("id longer than u32::MAX bytes".into()))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(id.as_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(Error::Format("missing EMB1 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Corrupt {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = read_u32(bytes, 4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(bytes, 8) as usize;
        let dim = read_u32(bytes, 12) as usize;
        let flags = bytes[16];
        if flags & !(FLAG_NORMALIZED | FLAG_IDS) != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
        }

        let n_values = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("count × dim overflows".into()))?;
        let payload_end = n_values
            .checked_mul(4)
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        if bytes.len() < payload_end {
            return Err(Error::Corrupt {
                expected: payload_end,
                found: bytes.len(),
            });
        }
        let rows: Vec<f32> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut pos = payload_end;
        let ids = if flags & FLAG_IDS != 0 {
            let mut ids = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                if bytes.len() < pos + 4 {
                    return Err(Error::Corrupt {
                        expected: pos + 4,
                        found: bytes.len(),
                    });
                }
                let len = read_u32(bytes, pos) as usize;
                pos += 4;
                if bytes.len() - pos < len {
                    return Err(Error::Corrupt {
                        expected: pos + len,
                        found: bytes.len(),
                    });
                }
                let s = core::str::from_utf8(&bytes[pos..pos + len])
                    .map_err(|_| Error::Format("id is not valid UTF-8".into()))?;
                ids.push(String::from(s));
                pos += len;
            }
            Some(ids)
        } else {
            None
        };
        if pos != bytes.len() {
            return Err(Error::Corrupt {
                expected: pos,
                found: bytes.len(),
            });
        }
        Self::new(count, dim, rows, flags & FLAG_NORMALIZED != 0, ids)
    }

    /// Scales every row to unit Euclidean norm. Rows already within a few
    /// binary32 ulps of unit norm are left untouched, which makes the
    /// operation exactly idempotent.
    pub fn l2_normalize(&self) -> Result<Self> {
        let mut rows = self.rows.clone();
        for (i, row) in rows.chunks_exact_mut(self.dim).enumerate() {
            let n = row_norm(row);
            if n == 0.0 {
                return Err(Error::DegenerateRow { row: i });
            }
            if (n - 1.0).abs() <= 4.0 * f64::from(f32::EPSILON) {
                continue;
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / n) as f32;
            }
        }
        Self::new(self.count, self.dim, rows, true, self.ids.clone())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn row_norm(row: &[f32]) -> f64 {
    libm::sqrt(row.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
}

/// Checks that two matrices can be paired row by row.
pub fn check_paired(images: &EmbeddingMatrix, texts: &EmbeddingMatrix) -> Result<()> {
    if images.count() != texts.count() {
        return Err(Error::Pairing(format!(
            "image count {} != text count {}",
            images.count(),
            texts.count()
        )));
    }
    if images.dim() != texts.dim() {
        return Err(Error::Pairing(format!(
            "image dim {} != text dim {}",
            images.dim(),
            texts.dim()
        )));
    }
    Ok(())
}

/// Unit-normalizes the rows of an `f64` matrix.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = crate::linalg::norm(row);
        if n == 0.0 {
            return Err(Error::DegenerateRow { row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}
