//! Exhaustive inner-product index over unit-normalized embeddings.
//!
//! Stored rows are normalized on insert and kept as contiguous `f32`; queries
//! are normalized in `f64` and every dot product accumulates in `f64`, so a
//! score is the cosine similarity of the query and the stored row. Search
//! returns every row whose score is strictly greater than the threshold.
//!
//! The on-disk layout is a directory holding `manifest.json`, `vectors.f32`
//! (row-major little-endian floats) and `payloads.jsonl` (one record per row).

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::record::{AuxRecord, RecordId};

const FORMAT: &str = "vidrag-flat-ip";
const FORMAT_VERSION: u32 = 1;
const ZERO_NORM: f64 = 1e-12;
/// Below this many scalar multiply-adds a search stays on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_WORK: usize = 1 << 15;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("vector norm below {ZERO_NORM:e}")]
    ZeroVector,
    #[error("vector has no components")]
    EmptyVector,
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate record id {0}")]
    DuplicateId(RecordId),
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),
    #[error("i/o failure at {path}: {source}")]
    IoFailure { path: String, source: io::Error },
    #[error("corrupt index manifest: {0}")]
    CorruptManifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IndexError + '_ {
    move |source| IndexError::IoFailure { path: path.display().to_string(), source }
}

/// A dense embedding. Dimension is the number of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, IndexError> {
        if values.is_empty() {
            return Err(IndexError::EmptyVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm64(&self.0)
    }

    pub fn normalize(&self) -> Result<EmbeddingVector, IndexError> {
        Ok(EmbeddingVector(
            unit_f64(&self.0)?.into_iter().map(|x| x as f32).collect(),
        ))
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

fn norm64(values: &[f32]) -> f64 {
    values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn unit_f64(values: &[f32]) -> Result<Vec<f64>, IndexError> {
    let n = norm64(values);
    if !(n >= ZERO_NORM) {
        return Err(IndexError::ZeroVector);
    }
    Ok(values.iter().map(|&x| f64::from(x) / n).collect())
}

/// Free-function form of [`EmbeddingVector::normalize`].
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, IndexError> {
    v.normalize()
}

/// A row to insert: its vector and the record it refers to.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub vector: EmbeddingVector,
    pub record: AuxRecord,
}

impl IndexEntry {
    pub fn id(&self) -> RecordId {
        self.record.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: RecordId,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
    checksum: String,
}

#[derive(Debug, Clone, Default)]
pub struct FlatIndex {
    dim: Option<usize>,
    data: Vec<f32>,
    records: Vec<AuxRecord>,
    ids: HashSet<RecordId>,
}

impl FlatIndex {
    /// An empty index whose dimension is fixed by the first insert.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self { dim: Some(dim), ..Self::default() }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AuxRecord] {
        &self.records
    }

    pub fn get(&self, id: RecordId) -> Option<&AuxRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.ids.contains(&id)
    }

    /// Stored (normalized) row for position `i`.
    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim.unwrap_or(0);
        &self.data[i * d..(i + 1) * d]
    }

    /// Normalizes and appends every entry. The batch is validated up front, so
    /// on error nothing is inserted.
    pub fn add(&mut self, entries: Vec<IndexEntry>) -> Result<usize, IndexError> {
        let dim = match (self.dim, entries.first()) {
            (Some(d), _) => d,
            (None, Some(e)) => e.vector.dim(),
            (None, None) => return Ok(0),
        };
        let mut batch_ids = HashSet::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for e in &entries {
            if e.vector.dim() != dim {
                return Err(IndexError::DimensionMismatch { expected: dim, actual: e.vector.dim() });
            }
            if self.ids.contains(&e.id()) || !batch_ids.insert(e.id()) {
                return Err(IndexError::DuplicateId(e.id()));
            }
            rows.extend(e.vector.normalize()?.into_values());
        }
        let n = entries.len();
        self.dim = Some(dim);
        self.data.extend(rows);
        self.ids.extend(batch_ids);
        self.records.extend(entries.into_iter().map(|e| e.record));
        Ok(n)
    }

    /// Every row scoring strictly above `threshold`, by descending score then
    /// ascending id.
    pub fn search(&self, query: &EmbeddingVector, threshold: f64) -> Result<Vec<SearchHit>, IndexError> {
        #[cfg(feature = "parallel")]
        {
            if self.len() * self.dim.unwrap_or(0) >= PARALLEL_MIN_WORK {
                return self.search_parallel(query, threshold);
            }
        }
        self.search_sequential(query, threshold)
    }

    pub fn search_sequential(&self, query: &EmbeddingVector, threshold: f64) -> Result<Vec<SearchHit>, IndexError> {
        let Some((q, d)) = self.prepare(query, threshold)? else {
            return Ok(Vec::new());
        };
        let mut hits: Vec<SearchHit> = self
            .data
            .chunks_exact(d)
            .zip(&self.records)
            .filter_map(|(row, rec)| score_row(&q, row, threshold).map(|score| SearchHit { id: rec.id, score }))
            .collect();
        sort_hits(&mut hits);
        Ok(hits)
    }

    #[cfg(feature = "parallel")]
    pub fn search_parallel(&self, query: &EmbeddingVector, threshold: f64) -> Result<Vec<SearchHit>, IndexError> {
        use rayon::prelude::*;

        let Some((q, d)) = self.prepare(query, threshold)? else {
            return Ok(Vec::new());
        };
        let mut hits: Vec<SearchHit> = self
            .data
            .par_chunks_exact(d)
            .zip(self.records.par_iter())
            .filter_map(|(row, rec)| score_row(&q, row, threshold).map(|score| SearchHit { id: rec.id, score }))
            .collect();
        sort_hits(&mut hits);
        Ok(hits)
    }

    fn prepare(&self, query: &EmbeddingVector, threshold: f64) -> Result<Option<(Vec<f64>, usize)>, IndexError> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(IndexError::InvalidThreshold(threshold));
        }
        if let Some(d) = self.dim {
            if query.dim() != d {
                return Err(IndexError::DimensionMismatch { expected: d, actual: query.dim() });
            }
        }
        let q = unit_f64(query.values())?;
        match self.dim {
            Some(d) if !self.is_empty() => Ok(Some((q, d))),
            _ => Ok(None),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut vec_bytes = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            vec_bytes.extend_from_slice(&x.to_le_bytes());
        }
        let mut payload_bytes = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut payload_bytes, r)
                .map_err(|e| IndexError::CorruptManifest(format!("payload encode: {e}")))?;
            payload_bytes.push(b'\n');
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            dim: self.dim.unwrap_or(0),
            count: self.len(),
            checksum: checksum(&vec_bytes, &payload_bytes),
        };
        let vpath = dir.join("vectors.f32");
        fs::write(&vpath, &vec_bytes).map_err(io_err(&vpath))?;
        let ppath = dir.join("payloads.jsonl");
        fs::write(&ppath, &payload_bytes).map_err(io_err(&ppath))?;
        let mpath = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&mpath, text).map_err(io_err(&mpath))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<FlatIndex, IndexError> {
        let mpath = dir.join("manifest.json");
        let text = match fs::read_to_string(&mpath) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(IndexError::CorruptManifest(format!("missing {}", mpath.display())))
            }
            Err(e) => return Err(io_err(&mpath)(e)),
        };
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| IndexError::CorruptManifest(e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(IndexError::CorruptManifest(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => IndexError::CorruptManifest(format!("missing {}", p.display())),
                _ => io_err(&p)(e),
            })
        };
        let vec_bytes = read("vectors.f32")?;
        let payload_bytes = read("payloads.jsonl")?;
        if checksum(&vec_bytes, &payload_bytes) != manifest.checksum {
            return Err(IndexError::CorruptManifest("checksum mismatch".into()));
        }
        if vec_bytes.len() != manifest.dim * manifest.count * 4 {
            return Err(IndexError::CorruptManifest("vector file size disagrees with manifest".into()));
        }
        let data: Vec<f32> = vec_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut records = Vec::with_capacity(manifest.count);
        for line in payload_bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let r: AuxRecord =
                serde_json::from_slice(line).map_err(|e| IndexError::CorruptManifest(format!("payload: {e}")))?;
            records.push(r);
        }
        if records.len() != manifest.count {
            return Err(IndexError::CorruptManifest("payload count disagrees with manifest".into()));
        }
        let ids: HashSet<RecordId> = records.iter().map(|r| r.id).collect();
        if ids.len() != records.len() {
            return Err(IndexError::CorruptManifest("duplicate ids in payloads".into()));
        }
        Ok(FlatIndex {
            dim: (manifest.dim > 0).then_some(manifest.dim),
            data,
            records,
            ids,
        })
    }
}

#[inline]
fn score_row(q: &[f64], row: &[f32], threshold: f64) -> Option<f64> {
    let s: f64 = q.iter().zip(row).map(|(&a, &b)| a * f64::from(b)).sum();
    (s > threshold).then_some(s)
}

fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

fn checksum(vectors: &[u8], payloads: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(vectors);
    h.update(payloads);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
