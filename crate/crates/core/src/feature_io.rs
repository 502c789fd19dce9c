//! Per-video feature files and the dataset manifest.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! "PYRF" | version u32 = 1 | frame_count u32 | dim u32 | id_len u16 | id bytes
//!        | zero padding up to the next multiple of 32 bytes
//!        | frame_count * dim binary32 values, row-major
//! ```
//!
//! Values are stored as `f32` and promoted to `f64` by every consumer.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PYRF";
pub const FEATURE_VERSION: u32 = 1;
/// Extension used for feature files inside a features directory.
pub const FEATURE_EXTENSION: &str = "pyrf";

const FIXED_HEADER: usize = 18;
const HEADER_ALIGN: usize = 32;

/// One video's per-frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    video_id: String,
    frame_count: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        frame_count: usize,
        dim: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if frame_count == 0 {
            return Err(Error::InvalidInput("frame_count must be at least 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("dim must be at least 1".into()));
        }
        if values.len() != frame_count * dim {
            return Err(Error::DimensionMismatch {
                expected: frame_count * dim,
                found: values.len(),
            });
        }
        if video_id.len() > u16::MAX as usize {
            return Err(Error::InvalidInput("video_id too long".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                frame: pos / dim,
                component: pos % dim,
            });
        }
        Ok(FeatureSequence {
            video_id,
            frame_count,
            dim,
            values,
        })
    }

    /// Builds a sequence from `f64` rows, rounding to the on-disk precision.
    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(video_id, rows.len(), dim, values)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Frame `index` (0-based) as stored.
    pub fn row(&self, index: usize) -> &[f32] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    /// Frame `index` (0-based) promoted to `f64`.
    pub fn row_f64(&self, index: usize) -> Vec<f64> {
        self.row(index).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn rows_f64(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.frame_count).map(|i| self.row_f64(i))
    }

    fn header_len(&self) -> usize {
        padded_header_len(self.video_id.len())
    }
}

fn padded_header_len(id_len: usize) -> usize {
    (FIXED_HEADER + id_len).div_ceil(HEADER_ALIGN) * HEADER_ALIGN
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header_len = seq.header_len();
    let mut buf = vec![0u8; header_len + seq.values.len() * 4];
    buf[0..4].copy_from_slice(FEATURE_MAGIC);
    LittleEndian::write_u32(&mut buf[4..8], FEATURE_VERSION);
    LittleEndian::write_u32(&mut buf[8..12], seq.frame_count as u32);
    LittleEndian::write_u32(&mut buf[12..16], seq.dim as u32);
    LittleEndian::write_u16(&mut buf[16..18], seq.video_id.len() as u16);
    buf[18..18 + seq.video_id.len()].copy_from_slice(seq.video_id.as_bytes());
    LittleEndian::write_f32_into(&seq.values, &mut buf[header_len..]);

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(path, &data)
}

fn decode_feature_file(path: &Path, data: &[u8]) -> Result<FeatureSequence> {
    let bad = |reason: &str| Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if data.len() < 4 || &data[0..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "PYRF",
        });
    }
    if data.len() < FIXED_HEADER {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: FIXED_HEADER as u64,
            found: data.len() as u64,
        });
    }
    let version = LittleEndian::read_u32(&data[4..8]);
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let frame_count = LittleEndian::read_u32(&data[8..12]) as usize;
    let dim = LittleEndian::read_u32(&data[12..16]) as usize;
    let id_len = LittleEndian::read_u16(&data[16..18]) as usize;
    if frame_count == 0 {
        return Err(bad("frame_count is zero"));
    }
    if dim == 0 {
        return Err(bad("dim is zero"));
    }
    let header_len = padded_header_len(id_len);
    let expected = header_len as u64 + frame_count as u64 * dim as u64 * 4;
    let found = data.len() as u64;
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            extra: found - expected,
        });
    }
    let video_id = std::str::from_utf8(&data[FIXED_HEADER..FIXED_HEADER + id_len])
        .map_err(|_| bad("video_id is not UTF-8"))?
        .to_string();
    if data[FIXED_HEADER + id_len..header_len].iter().any(|&b| b != 0) {
        return Err(bad("nonzero header padding"));
    }
    let mut values = vec![0f32; frame_count * dim];
    LittleEndian::read_f32_into(&data[header_len..], &mut values);
    FeatureSequence::new(video_id, frame_count, dim, values)
}

/// Path of a video's feature file inside `dir`.
pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXTENSION}"))
}

/// Loads the feature file of every listed video from `dir`, in order.
///
/// Files are read in parallel. A missing file is reported by video id.
pub fn load_features<S: AsRef<str> + Sync>(dir: &Path, video_ids: &[S]) -> Result<Vec<FeatureSequence>> {
    video_ids
        .par_iter()
        .map(|id| {
            let id = id.as_ref();
            let path = feature_path(dir, id);
            if !path.exists() {
                return Err(Error::MissingFeatures(id.to_string()));
            }
            let seq = read_feature_file(&path)?;
            if seq.video_id() != id {
                return Err(Error::BadHeader {
                    path,
                    reason: format!("file holds video {:?}, expected {:?}", seq.video_id(), id),
                });
            }
            Ok(seq)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: String,
    pub group_id: String,
}

/// Video labels and split groups (subjects or folds).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    labels: Vec<String>,
}

impl DatasetManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            validate_entry(e).map_err(|reason| Error::InvalidInput(format!("entry {i}: {reason}")))?;
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "entry {i}: duplicate video_id {:?}",
                    e.video_id
                )));
            }
        }
        Ok(Self::build(entries))
    }

    fn build(entries: Vec<ManifestEntry>) -> Self {
        let labels: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        let labels = labels.into_iter().map(str::to_string).collect();
        DatasetManifest { entries, labels }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels in lexicographic order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Distinct group ids, numerically ordered when every id is an integer
    /// and lexicographically otherwise.
    pub fn groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.group_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if groups.iter().all(|g| g.parse::<i64>().is_ok()) {
            groups.sort_by_key(|g| g.parse::<i64>().unwrap());
        }
        groups
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.video_id.as_str()).collect()
    }

    /// Writes the manifest in its text form.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.video_id, e.label, e.group_id));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn validate_entry(e: &ManifestEntry) -> std::result::Result<(), &'static str> {
    if e.video_id.is_empty() {
        return Err("empty video_id");
    }
    if e.label.is_empty() {
        return Err("empty label");
    }
    if e.group_id.is_empty() {
        return Err("empty group_id");
    }
    Ok(())
}

/// Reads a tab-separated `video_id  label  group_id` manifest.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(path, &text)
}

fn parse_manifest(path: &Path, text: &str) -> Result<DatasetManifest> {
    let err = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let entry = ManifestEntry {
            video_id: fields[0].trim().to_string(),
            label: fields[1].trim().to_string(),
            group_id: fields[2].trim().to_string(),
        };
        validate_entry(&entry).map_err(|r| err(line_no, r.to_string()))?;
        if !seen.insert(entry.video_id.clone()) {
            return Err(err(line_no, format!("duplicate video_id {:?}", entry.video_id)));
        }
        entries.push(entry);
    }
    Ok(DatasetManifest::build(entries))
}
