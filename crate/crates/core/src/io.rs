//! Embedding, vocabulary, and label files.
//!
//! `EMB1` layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "EMB1"
//! 4..8    u32 rows N
//! 8..12   u32 dim d
//! 12      normalized flag (0 or 1)
//! 13..    N*d f32, row-major
//! ```
//!
//! `EMB8` is the same layout with f64 payload, used for exact resumption of
//! intermediate matrices. A vocabulary is an `EMB1` file plus a JSON sidecar
//! with the same stem. Label files are `LAB1`, u32 N, u32 K, then N u32.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB8_MAGIC: &[u8; 4] = b"EMB8";
pub const LAB1_MAGIC: &[u8; 4] = b"LAB1";
pub const HEADER_LEN: usize = 13;

/// Rows flagged as normalized must have an L2 norm within this of 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Dense row-major f32 matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f32>, normalized: bool) -> Result<Self> {
        validate(values.view(), normalized)?;
        Ok(Self { values, normalized })
    }

    /// Downcasts an f64 matrix to storage precision.
    pub fn from_f64(values: ArrayView2<f64>, normalized: bool) -> Result<Self> {
        Self::new(values.mapv(|v| v as f32), normalized)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Copies rows `start..end` into a new matrix with the same flag.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows() {
            return Err(Error::DimMismatch(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.rows()
            )));
        }
        Ok(Self {
            values: self.values.slice(ndarray::s![start..end, ..]).to_owned(),
            normalized: self.normalized,
        })
    }
}

fn validate<T: Copy + Into<f64>>(values: ArrayView2<T>, normalized: bool) -> Result<()> {
    if values.nrows() == 0 {
        return Err(Error::DimensionZero("rows"));
    }
    if values.ncols() == 0 {
        return Err(Error::DimensionZero("dim"));
    }
    for (row, r) in values.axis_iter(Axis(0)).enumerate() {
        let mut sq = 0.0f64;
        for (col, &v) in r.iter().enumerate() {
            let v: f64 = v.into();
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col });
            }
            sq += v * v;
        }
        if normalized {
            let norm = sq.sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NormalizationViolated { row, norm });
            }
        }
    }
    Ok(())
}

/// Scales every row to unit L2 norm, computing in f64.
pub fn l2_normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut out = m.to_f64();
    for (index, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroRow { index });
        }
        row.mapv_inplace(|v| v / norm);
    }
    EmbeddingMatrix::from_f64(out.view(), true)
}

fn encode<T: Copy>(magic: &[u8; 4], values: ArrayView2<T>, normalized: bool, to_le: impl Fn(T) -> Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * std::mem::size_of::<T>());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(values.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(values.ncols() as u32).to_le_bytes());
    out.push(u8::from(normalized));
    for &v in values.iter() {
        out.extend_from_slice(&to_le(v));
    }
    out
}

struct Header {
    rows: usize,
    dim: usize,
    normalized: bool,
}

fn decode_header(bytes: &[u8], magic: &[u8; 4], path: &Path, elem: usize) -> Result<Header> {
    check_magic(bytes, magic, path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 {
        return Err(Error::DimensionZero("rows"));
    }
    if dim == 0 {
        return Err(Error::DimensionZero("dim"));
    }
    let normalized = match bytes[12] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::MagicMismatch {
                path: path.to_path_buf(),
                expected: "normalized flag 0 or 1".into(),
                found: other.to_string(),
            })
        }
    };
    let expected = HEADER_LEN + rows * dim * elem;
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Equal => Ok(Header { rows, dim, normalized }),
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    Ok(())
}

pub fn encode_embedding(m: &EmbeddingMatrix) -> Vec<u8> {
    encode(EMB1_MAGIC, m.values(), m.normalized, |v: f32| v.to_le_bytes().to_vec())
}

pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let h = decode_header(bytes, EMB1_MAGIC, path, 4)?;
    let payload = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((h.rows, h.dim), payload).expect("length checked");
    EmbeddingMatrix::new(values, h.normalized)
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes, path)
}

pub fn write_embedding(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    validate(m.values(), m.normalized)?;
    write_bytes(path.as_ref(), &encode_embedding(m))
}

pub fn encode_matrix_f64(values: ArrayView2<f64>, normalized: bool) -> Vec<u8> {
    encode(EMB8_MAGIC, values, normalized, |v: f64| v.to_le_bytes().to_vec())
}

pub fn decode_matrix_f64(bytes: &[u8], path: &Path) -> Result<(Array2<f64>, bool)> {
    let h = decode_header(bytes, EMB8_MAGIC, path, 8)?;
    let payload = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((h.rows, h.dim), payload).expect("length checked");
    validate(values.view(), h.normalized)?;
    Ok((values, h.normalized))
}

/// Reads an `EMB8` file.
pub fn read_matrix_f64(path: impl AsRef<Path>) -> Result<(Array2<f64>, bool)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix_f64(&bytes, path)
}

/// Writes an `EMB8` file.
pub fn write_matrix_f64(values: ArrayView2<f64>, normalized: bool, path: impl AsRef<Path>) -> Result<()> {
    validate(values, normalized)?;
    write_bytes(path.as_ref(), &encode_matrix_f64(values, normalized))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Cluster labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    values: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(values: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                value,
                num_classes,
            });
        }
        Ok(Self { values, num_classes })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<usize> {
        self.values
    }
}

pub fn encode_labels(labels: &LabelVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * labels.len());
    out.extend_from_slice(LAB1_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(labels.num_classes as u32).to_le_bytes());
    for &v in &labels.values {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelVector> {
    check_magic(bytes, LAB1_MAGIC, path)?;
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * n;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    LabelVector::new(values, k)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, path)
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(labels))
}

/// JSON sidecar stored next to a vocabulary's `EMB1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub names: Vec<String>,
    pub source: String,
    pub dim: usize,
    /// Fine-center index each noun was selected for (candidate sets only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<usize>>,
}

pub fn sidecar_path(emb_path: &Path) -> PathBuf {
    emb_path.with_extension("json")
}

/// Noun strings paired with their embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabSet {
    names: Vec<String>,
    embeddings: EmbeddingMatrix,
    source: String,
}

impl VocabSet {
    pub fn new(names: Vec<String>, embeddings: EmbeddingMatrix, source: impl Into<String>) -> Result<Self> {
        if names.len() != embeddings.rows() {
            return Err(Error::SidecarMismatch(format!(
                "{} names for {} embedding rows",
                names.len(),
                embeddings.rows()
            )));
        }
        let names: Vec<String> = names.into_iter().map(|n| n.trim().to_string()).collect();
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        Ok(Self {
            names,
            embeddings,
            source: source.into(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Sub-vocabulary made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize], source: impl Into<String>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::DimensionZero("rows"));
        }
        let values = self.embeddings.values().select(Axis(0), indices);
        let names = indices.iter().map(|&i| self.names[i].clone()).collect();
        Self::new(
            names,
            EmbeddingMatrix::new(values, self.embeddings.is_normalized())?,
            source,
        )
    }
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<VocabSet> {
    let path = path.as_ref();
    let embeddings = read_embedding(path)?;
    let side_path = sidecar_path(path);
    let side: Sidecar = read_json(&side_path)?;
    if side.dim != embeddings.dim() {
        return Err(Error::SidecarMismatch(format!(
            "sidecar dim {} but matrix dim {}",
            side.dim,
            embeddings.dim()
        )));
    }
    VocabSet::new(side.names, embeddings, side.source)
}

pub fn write_vocab(v: &VocabSet, path: impl AsRef<Path>, centers: Option<Vec<usize>>) -> Result<()> {
    let path = path.as_ref();
    write_embedding(&v.embeddings, path)?;
    let side = Sidecar {
        names: v.names.clone(),
        source: v.source.clone(),
        dim: v.embeddings.dim(),
        centers,
    };
    write_json(&side, &sidecar_path(path))
}

/// Base features plus precomputed strong and weak augmentation views.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    base: EmbeddingMatrix,
    strong: Vec<EmbeddingMatrix>,
    weak: Vec<EmbeddingMatrix>,
}

impl ViewBundle {
    pub fn new(base: EmbeddingMatrix, strong: Vec<EmbeddingMatrix>, weak: Vec<EmbeddingMatrix>) -> Result<Self> {
        for (kind, blocks) in [("strong", &strong), ("weak", &weak)] {
            for (i, b) in blocks.iter().enumerate() {
                if b.rows() != base.rows() || b.dim() != base.dim() {
                    return Err(Error::DimMismatch(format!(
                        "{kind} view {i} is {}x{}, base is {}x{}",
                        b.rows(),
                        b.dim(),
                        base.rows(),
                        base.dim()
                    )));
                }
            }
        }
        Ok(Self { base, strong, weak })
    }

    /// Splits vertically stacked view files (`V*N` rows) into per-view blocks.
    pub fn from_stacked(
        base: EmbeddingMatrix,
        strong: Option<&EmbeddingMatrix>,
        weak: Option<&EmbeddingMatrix>,
    ) -> Result<Self> {
        let n = base.rows();
        let split = |kind: &str, m: Option<&EmbeddingMatrix>| -> Result<Vec<EmbeddingMatrix>> {
            let Some(m) = m else { return Ok(Vec::new()) };
            if m.rows() % n != 0 {
                return Err(Error::DimMismatch(format!(
                    "{kind} views have {} rows, not a multiple of N = {n}",
                    m.rows()
                )));
            }
            (0..m.rows() / n).map(|v| m.slice_rows(v * n, (v + 1) * n)).collect()
        };
        let strong = split("strong", strong)?;
        let weak = split("weak", weak)?;
        Self::new(base, strong, weak)
    }

    pub fn base(&self) -> &EmbeddingMatrix {
        &self.base
    }

    pub fn strong(&self) -> &[EmbeddingMatrix] {
        &self.strong
    }

    pub fn weak(&self) -> &[EmbeddingMatrix] {
        &self.weak
    }
}

/// Stacks equally shaped blocks vertically.
pub fn stack_views(blocks: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let first = blocks.first().ok_or(Error::DimensionZero("rows"))?;
    let views: Vec<_> = blocks.iter().map(|b| b.values()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::DimMismatch(e.to_string()))?;
    EmbeddingMatrix::new(stacked, first.is_normalized())
}
