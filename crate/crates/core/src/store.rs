//! Embedding dumps: the in-memory [`EmbeddingSet`] and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 8    | magic `DJVEMBED`                                  |
//! | 8      | 2    | format version (1)                                |
//! | 10     | 2    | flags: bit 0 = labels present, others zero        |
//! | 12     | 4    | dim (u32)                                         |
//! | 16     | 8    | row count N (u64)                                 |
//! | 24     | 4    | meta block length M (u32)                         |
//! | 28     | 4    | CRC-32 of bytes 0..28 followed by the meta block  |
//! | 32     | M    | meta block, UTF-8 JSON                            |
//!
//! The payload follows: N ids (u32 byte length + UTF-8 bytes), N labels as
//! i32 when the labels flag is set, then the N×dim row-major f32 matrix.
//! The file must end exactly where the payload ends.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"DJVEMBED";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
const FLAG_LABELS: u16 = 1;

/// Label value for rows with no class.
pub const UNLABELED: i32 = -1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: String, source: io::Error },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown header flags {0:#06x}")]
    BadFlags(u16),
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("invalid meta block: {0}")]
    BadMeta(String),
    #[error("payload truncated: {0}")]
    TruncatedPayload(String),
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite entry in row {0}")]
    NonFiniteEntry(usize),
    #[error("example id at row {0} is not valid UTF-8")]
    BadId(usize),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no example ids in common between the two sets")]
    EmptyIntersection,
}

/// Which part of the image an embedding was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Periphery,
    Corner,
    Full,
    Object,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Periphery => "periphery",
            ViewKind::Corner => "corner",
            ViewKind::Full => "full",
            ViewKind::Object => "object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "periphery" => ViewKind::Periphery,
            "corner" => ViewKind::Corner,
            "full" => ViewKind::Full,
            "object" => ViewKind::Object,
            _ => return None,
        })
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance of an embedding dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub model_tag: String,
    /// 0 = backbone, up to 3 = projector output.
    pub layer_index: u8,
    pub epoch: u32,
    pub view: ViewKind,
    /// Free-form provenance (dataset source, preprocessing choices).
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub notes: std::collections::BTreeMap<String, String>,
}

impl EmbeddingMeta {
    pub fn new(model_tag: impl Into<String>, layer_index: u8, epoch: u32, view: ViewKind) -> Self {
        Self { model_tag: model_tag.into(), layer_index, epoch, view, notes: Default::default() }
    }

    /// Conventional file name `{model}_{view}_layer{L}_ep{E}.emb`.
    pub fn file_name(&self) -> String {
        store_file_name(&self.model_tag, self.view, self.layer_index, self.epoch)
    }
}

pub fn store_file_name(model: &str, view: ViewKind, layer: u8, epoch: u32) -> String {
    format!("{model}_{view}_layer{layer}_ep{epoch}.emb")
}

/// A dense N×dim matrix of f32 embeddings with ids, labels and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    rows: Vec<f32>,
    ids: Vec<String>,
    labels: Vec<i32>,
    meta: EmbeddingMeta,
}

impl EmbeddingSet {
    /// Builds a set after checking shapes, id uniqueness, finiteness and the layer range.
    pub fn new(
        dim: usize,
        rows: Vec<f32>,
        ids: Vec<String>,
        labels: Vec<i32>,
        meta: EmbeddingMeta,
    ) -> Result<Self, StoreError> {
        let n = ids.len();
        if labels.len() != n {
            return Err(StoreError::Shape(format!("{n} ids but {} labels", labels.len())));
        }
        if rows.len() != n * dim {
            return Err(StoreError::Shape(format!(
                "{} matrix entries for {n} rows of dim {dim}",
                rows.len()
            )));
        }
        if meta.layer_index > 3 {
            return Err(StoreError::BadMeta(format!("layer index {} outside 0..=3", meta.layer_index)));
        }
        if let Some(&l) = labels.iter().find(|&&l| l < UNLABELED) {
            return Err(StoreError::Shape(format!("invalid label {l}")));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        if dim > 0 {
            if let Some(row) = rows.chunks_exact(dim).position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(StoreError::NonFiniteEntry(row));
            }
        }
        Ok(Self { dim, rows, ids, labels, meta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l >= 0)
    }

    pub fn has_any_label(&self) -> bool {
        self.labels.iter().any(|&l| l >= 0)
    }

    /// Row index of every id.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// New set holding the rows whose ids appear in `ids`, in `ids` order.
    /// Unknown ids are skipped.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Self {
        let index = self.id_index();
        let picked: Vec<usize> = ids.iter().filter_map(|id| index.get(id.as_ref()).copied()).collect();
        self.select_rows(&picked)
    }

    pub fn select_rows(&self, picked: &[usize]) -> Self {
        let mut rows = Vec::with_capacity(picked.len() * self.dim);
        for &i in picked {
            rows.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            rows,
            ids: picked.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: picked.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Copy with each row scaled to unit L2 norm (zero rows left as is).
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        if self.dim == 0 {
            return out;
        }
        for row in out.rows.chunks_exact_mut(self.dim) {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = (f64::from(*v) / norm) as f32);
            }
        }
        out
    }

    pub fn with_meta(mut self, meta: EmbeddingMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        let has_labels = self.has_any_label();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + self.rows.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(if has_labels { FLAG_LABELS } else { 0 }).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        let crc = header_crc(&out[..28], &meta);
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&meta);
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        if has_labels {
            for l in &self.labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Strict parse: every header field, the checksum and the exact payload
    /// length are validated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < MAGIC.len() || bytes[..8] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::TruncatedPayload(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16_at(8);
        let flags = u16_at(10);
        let dim = u32_at(12) as usize;
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let meta_len = u32_at(24) as usize;
        let crc = u32_at(28);

        let meta_end = HEADER_LEN
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| StoreError::TruncatedPayload("meta block".into()))?;
        let meta_bytes = &bytes[HEADER_LEN..meta_end];
        if header_crc(&bytes[..28], meta_bytes) != crc {
            return Err(StoreError::HeaderChecksum);
        }
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        if flags & !FLAG_LABELS != 0 {
            return Err(StoreError::BadFlags(flags));
        }
        let meta: EmbeddingMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| StoreError::BadMeta(e.to_string()))?;

        let mut cursor = Cursor { bytes, pos: meta_end };
        // Every id costs at least 4 bytes, so a huge N fails fast here.
        let n = usize::try_from(n)
            .ok()
            .filter(|&n| n <= (bytes.len() - cursor.pos) / 4)
            .ok_or_else(|| StoreError::TruncatedPayload(format!("{n} rows declared")))?;
        let mut ids = Vec::with_capacity(n);
        for row in 0..n {
            let len = u32::from_le_bytes(cursor.take(4, "id length")?.try_into().unwrap()) as usize;
            let raw = cursor.take(len, "id bytes")?;
            ids.push(String::from_utf8(raw.to_vec()).map_err(|_| StoreError::BadId(row))?);
        }
        let labels = if flags & FLAG_LABELS != 0 {
            cursor
                .take(n * 4, "labels")?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        } else {
            vec![UNLABELED; n]
        };
        let matrix_len = n
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| StoreError::TruncatedPayload("matrix size overflows".into()))?;
        let rows: Vec<f32> = cursor
            .take(matrix_len, "matrix")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if cursor.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - cursor.pos));
        }
        Self::new(dim, rows, ids, labels, meta)
    }
}

fn header_crc(fixed: &[u8], meta: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(fixed);
    h.update(meta);
    h.finalize()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StoreError::TruncatedPayload(format!("{what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn write_store(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let io_err = |source| StoreError::IoFailure { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&set.to_bytes()).map_err(io_err)?;
    f.sync_all().map_err(io_err)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingSet, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|source| StoreError::IoFailure { path: path.display().to_string(), source })?;
    EmbeddingSet::from_bytes(&bytes)
}

/// Ids shared by two sets, in canonical (sorted) order, plus the ids found in
/// only one of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub common: Vec<String>,
    pub only_target: Vec<String>,
    pub only_reference: Vec<String>,
}

pub fn align_pairs(target: &EmbeddingSet, reference: &EmbeddingSet) -> Result<Alignment, StoreError> {
    if !target.is_labeled() || !reference.is_labeled() {
        return Err(StoreError::Shape("both sets must be labeled to align".into()));
    }
    let t: BTreeSet<&str> = target.ids().iter().map(String::as_str).collect();
    let r: BTreeSet<&str> = reference.ids().iter().map(String::as_str).collect();
    let common: Vec<String> = t.intersection(&r).map(|s| s.to_string()).collect();
    if common.is_empty() {
        return Err(StoreError::EmptyIntersection);
    }
    Ok(Alignment {
        common,
        only_target: t.difference(&r).map(|s| s.to_string()).collect(),
        only_reference: r.difference(&t).map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EmbeddingSet {
        EmbeddingSet::new(
            4,
            vec![0.5, -1.25, 3.0e-8, 7.0, 1.0, 2.0, 3.0, 4.0, -0.0, f32::MIN_POSITIVE, f32::MAX, -2.5],
            vec!["a".into(), "b".into(), "é".into()],
            vec![0, 2, 1],
            EmbeddingMeta::new("toy", 1, 50, ViewKind::Periphery),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let set = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.emb");
        write_store(&set, &path).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back.ids(), set.ids());
        assert_eq!(back.labels(), set.labels());
        assert_eq!(back.meta(), set.meta());
        let bits = |s: &EmbeddingSet| s.rows().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&set));
    }

    #[test]
    fn empty_set_round_trips() {
        let set = EmbeddingSet::new(8, vec![], vec![], vec![], EmbeddingMeta::new("m", 0, 0, ViewKind::Full))
            .unwrap();
        let back = EmbeddingSet::from_bytes(&set.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn unlabeled_set_round_trips() {
        let set = EmbeddingSet::new(
            2,
            vec![1.0, 2.0],
            vec!["q".into()],
            vec![UNLABELED],
            EmbeddingMeta::new("m", 0, 0, ViewKind::Corner),
        )
        .unwrap();
        let bytes = set.to_bytes();
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 0);
        assert_eq!(EmbeddingSet::from_bytes(&bytes).unwrap(), set);
    }

    #[test]
    fn flipped_magic() {
        let mut bytes = small().to_bytes();
        bytes[3] ^= 0x40;
        assert!(matches!(EmbeddingSet::from_bytes(&bytes), Err(StoreError::BadMagic)));
    }

    #[test]
    fn truncated_mid_matrix() {
        let bytes = small().to_bytes();
        let cut = &bytes[..bytes.len() - 6];
        assert!(matches!(EmbeddingSet::from_bytes(cut), Err(StoreError::TruncatedPayload(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(EmbeddingSet::from_bytes(&extra), Err(StoreError::TrailingBytes(1))));
    }

    #[test]
    fn nan_at_row_seven() {
        let n = 10;
        let dim = 3;
        let set = EmbeddingSet::new(
            dim,
            vec![0.25; n * dim],
            (0..n).map(|i| format!("id{i}")).collect(),
            vec![0; n],
            EmbeddingMeta::new("m", 0, 0, ViewKind::Full),
        )
        .unwrap();
        let mut bytes = set.to_bytes();
        let matrix_start = bytes.len() - n * dim * 4;
        let off = matrix_start + (7 * dim + 1) * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingSet::from_bytes(&bytes), Err(StoreError::NonFiniteEntry(7))));
    }

    #[test]
    fn construction_checks() {
        let meta = EmbeddingMeta::new("m", 0, 0, ViewKind::Full);
        assert!(EmbeddingSet::new(2, vec![1.0; 3], vec!["a".into()], vec![0], meta.clone()).is_err());
        assert!(matches!(
            EmbeddingSet::new(1, vec![1.0, 2.0], vec!["a".into(), "a".into()], vec![0, 0], meta.clone()),
            Err(StoreError::DuplicateId(_))
        ));
        let mut bad_layer = meta;
        bad_layer.layer_index = 4;
        assert!(EmbeddingSet::new(1, vec![1.0], vec!["a".into()], vec![0], bad_layer).is_err());
    }

    #[test]
    fn alignment() {
        let meta = EmbeddingMeta::new("m", 0, 0, ViewKind::Periphery);
        let a = EmbeddingSet::new(1, vec![1.0, 2.0, 3.0], vec!["z".into(), "x".into(), "y".into()], vec![0, 1, 0], meta.clone()).unwrap();
        let b = EmbeddingSet::new(1, vec![1.0, 2.0, 3.0], vec!["y".into(), "z".into(), "x".into()], vec![0, 0, 1], meta.clone()).unwrap();
        let al = align_pairs(&a, &b).unwrap();
        assert_eq!(al.common, vec!["x", "y", "z"]);
        assert_eq!(align_pairs(&b, &a).unwrap().common, al.common);
        let c = EmbeddingSet::new(1, vec![1.0], vec!["w".into()], vec![0], meta).unwrap();
        assert!(matches!(align_pairs(&a, &c), Err(StoreError::EmptyIntersection)));
    }
}
