//! On-disk forms of the per-snippet and per-video intermediate results.

use std::fmt::Write as _;
use std::path::Path;

use crate::codebook::HistogramDescriptor;
use crate::error::{Error, Result};
use crate::persist::{Reader, Writer};
use crate::pyramid::SnippetDescriptor;
use crate::reduction::ReducedDescriptor;
use crate::snippets::Snippet;

pub const DESCRIPTORS_MAGIC: &[u8; 4] = b"PYRD";
pub const REDUCED_MAGIC: &[u8; 4] = b"PYRR";
pub const HISTOGRAMS_MAGIC: &[u8; 4] = b"PYRG";

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    pub snippet: Snippet,
    pub descriptor: SnippetDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedRecord {
    pub snippet: Snippet,
    pub descriptor: ReducedDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRecord {
    pub video_id: String,
    pub histogram: HistogramDescriptor,
}

fn write_layout(w: &mut Writer, segments: &[usize], dim: usize) {
    w.u32(segments.len() as u32);
    for &s in segments {
        w.u32(s as u32);
    }
    w.u32(dim as u32);
}

fn read_layout(r: &mut Reader) -> Result<(Vec<usize>, usize)> {
    let levels = r.usize()?;
    let segments = (0..levels).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let dim = r.usize()?;
    if segments.is_empty() || segments.contains(&0) || dim == 0 {
        return Err(r.bad("empty descriptor layout"));
    }
    Ok((segments, dim))
}

fn write_snippet(w: &mut Writer, s: &Snippet) {
    w.str(&s.video_id);
    w.u32(s.first as u32);
    w.u32(s.last as u32);
}

fn read_snippet(r: &mut Reader) -> Result<Snippet> {
    let id = r.str()?;
    let first = r.usize()?;
    let last = r.usize()?;
    Snippet::new(id, first, last)
}

fn layout_mismatch() -> Error {
    Error::InvalidInput("descriptors in one file must share a layout".into())
}

pub fn save_descriptors(path: impl AsRef<Path>, records: &[DescriptorRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no descriptors to save".into()))?;
    let segments = first.descriptor.segments_per_level();
    let dim = first.descriptor.dim();
    let mut w = Writer::new(DESCRIPTORS_MAGIC);
    write_layout(&mut w, &segments, dim);
    w.u32(records.len() as u32);
    for rec in records {
        if rec.descriptor.segments_per_level() != segments || rec.descriptor.dim() != dim {
            return Err(layout_mismatch());
        }
        write_snippet(&mut w, &rec.snippet);
        w.f64s(&rec.descriptor.stacked());
    }
    w.finish(path.as_ref())
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<DescriptorRecord>> {
    let mut r = Reader::open(path.as_ref(), DESCRIPTORS_MAGIC)?;
    let (segments, dim) = read_layout(&mut r)?;
    let n = r.usize()?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let snippet = read_snippet(&mut r)?;
        let mut flat = r.f64s(segments.iter().sum::<usize>() * dim)?.into_iter();
        let levels = segments
            .iter()
            .map(|&p| (0..p).map(|_| flat.by_ref().take(dim).collect()).collect())
            .collect();
        out.push(DescriptorRecord {
            snippet,
            descriptor: SnippetDescriptor::from_levels(levels)?,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_reduced(path: impl AsRef<Path>, records: &[ReducedRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no descriptors to save".into()))?;
    let segments = first.descriptor.segments_per_level().to_vec();
    let dim = first.descriptor.reduced_dim();
    let mut w = Writer::new(REDUCED_MAGIC);
    write_layout(&mut w, &segments, dim);
    w.u32(records.len() as u32);
    for rec in records {
        if rec.descriptor.segments_per_level() != segments || rec.descriptor.reduced_dim() != dim {
            return Err(layout_mismatch());
        }
        write_snippet(&mut w, &rec.snippet);
        w.f64s(rec.descriptor.values());
    }
    w.finish(path.as_ref())
}

pub fn load_reduced(path: impl AsRef<Path>) -> Result<Vec<ReducedRecord>> {
    let mut r = Reader::open(path.as_ref(), REDUCED_MAGIC)?;
    let (segments, dim) = read_layout(&mut r)?;
    let n = r.usize()?;
    let len = segments.iter().sum::<usize>() * dim;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let snippet = read_snippet(&mut r)?;
        let values = r.f64s(len)?;
        out.push(ReducedRecord {
            snippet,
            descriptor: ReducedDescriptor::new(values, segments.clone(), dim)?,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_histograms(path: impl AsRef<Path>, records: &[HistogramRecord]) -> Result<()> {
    let len = records.first().map_or(0, |r| r.histogram.len());
    let mut w = Writer::new(HISTOGRAMS_MAGIC);
    w.u32(len as u32);
    w.u32(records.len() as u32);
    for rec in records {
        if rec.histogram.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: rec.histogram.len(),
            });
        }
        w.str(&rec.video_id);
        w.f64s(rec.histogram.values());
    }
    w.finish(path.as_ref())
}

pub fn load_histograms(path: impl AsRef<Path>) -> Result<Vec<HistogramRecord>> {
    let mut r = Reader::open(path.as_ref(), HISTOGRAMS_MAGIC)?;
    let len = r.usize()?;
    let n = r.usize()?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let video_id = r.str()?;
        let values = r.f64s(len)?;
        let histogram = HistogramDescriptor::new(values).map_err(|_| r.bad("negative or non-finite bin"))?;
        out.push(HistogramRecord { video_id, histogram });
    }
    r.finish()?;
    Ok(out)
}

/// Writes `video_id TAB k1,k2,...` lines.
pub fn write_keyframe_list(path: impl AsRef<Path>, keyframes: &[(String, Vec<usize>)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (id, frames) in keyframes {
        let list: Vec<String> = frames.iter().map(usize::to_string).collect();
        let _ = writeln!(text, "{id}\t{}", list.join(","));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_keyframe_list(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<usize>)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let (id, list) = line.split_once('\t').ok_or_else(|| bad("expected video_id TAB key-frames"))?;
        let frames = list
            .split(',')
            .map(|f| f.trim().parse::<usize>().map_err(|_| bad("key-frame is not an integer")))
            .collect::<Result<Vec<_>>>()?;
        out.push((id.to_string(), frames));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor(seed: f64) -> SnippetDescriptor {
        SnippetDescriptor::from_levels(vec![
            vec![vec![seed, 1.0]],
            vec![vec![2.0, seed], vec![-seed, 0.5]],
        ])
        .unwrap()
    }

    #[test]
    fn descriptors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pyrd");
        let recs = vec![
            DescriptorRecord {
                snippet: Snippet::new("a", 1, 5).unwrap(),
                descriptor: descriptor(0.25),
            },
            DescriptorRecord {
                snippet: Snippet::new("b", 3, 9).unwrap(),
                descriptor: descriptor(-4.0),
            },
        ];
        save_descriptors(&path, &recs).unwrap();
        assert_eq!(load_descriptors(&path).unwrap(), recs);
        assert!(matches!(load_reduced(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn reduced_and_histograms_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pyrr");
        let recs = vec![ReducedRecord {
            snippet: Snippet::new("a", 2, 4).unwrap(),
            descriptor: ReducedDescriptor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![1, 2], 2).unwrap(),
        }];
        save_reduced(&path, &recs).unwrap();
        assert_eq!(load_reduced(&path).unwrap(), recs);

        let path = dir.path().join("h.pyrg");
        let hists = vec![
            HistogramRecord {
                video_id: "a".into(),
                histogram: HistogramDescriptor::new(vec![0.5, 0.5, 0.0]).unwrap(),
            },
            HistogramRecord {
                video_id: "b".into(),
                histogram: HistogramDescriptor::new(vec![0.0, 0.0, 1.0]).unwrap(),
            },
        ];
        save_histograms(&path, &hists).unwrap();
        assert_eq!(load_histograms(&path).unwrap(), hists);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_histograms(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn mixed_layouts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let other = SnippetDescriptor::from_levels(vec![vec![vec![1.0, 2.0]]]).unwrap();
        let recs = vec![
            DescriptorRecord {
                snippet: Snippet::new("a", 1, 5).unwrap(),
                descriptor: descriptor(1.0),
            },
            DescriptorRecord {
                snippet: Snippet::new("a", 5, 8).unwrap(),
                descriptor: other,
            },
        ];
        assert!(save_descriptors(dir.path().join("x"), &recs).is_err());
    }

    #[test]
    fn keyframe_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.tsv");
        let kf = vec![("v1".to_string(), vec![1, 4, 9]), ("v2".to_string(), vec![1])];
        write_keyframe_list(&path, &kf).unwrap();
        assert_eq!(read_keyframe_list(&path).unwrap(), kf);
        std::fs::write(&path, "v1\t1,x\n").unwrap();
        assert!(matches!(read_keyframe_list(&path), Err(Error::Manifest { line: 1, .. })));
    }
}
