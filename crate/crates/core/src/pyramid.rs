//! Hierarchical CNN-flow descriptors.
//!
//! A snippet of `M` frames is split into `P` contiguous segments at every
//! level of a [`PartitionSchedule`]; each segment contributes the flow
//! `x_last - x_first` between its endpoint frames. Level 1 always has one
//! segment, so its flow spans the whole snippet.

use crate::error::{Error, Result};
use crate::feature_io::FeatureSequence;
use crate::snippets::Snippet;

/// Segments per pyramid level, coarse to fine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSchedule {
    segments_per_level: Vec<usize>,
}

impl Default for PartitionSchedule {
    fn default() -> Self {
        PartitionSchedule {
            segments_per_level: vec![1, 2, 4, 10],
        }
    }
}

impl PartitionSchedule {
    pub fn new(segments_per_level: Vec<usize>) -> Result<Self> {
        if segments_per_level.first() != Some(&1) {
            return Err(Error::InvalidInput(
                "partition schedule must start with a single segment".into(),
            ));
        }
        if segments_per_level.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput(
                "partition schedule must be non-decreasing".into(),
            ));
        }
        Ok(PartitionSchedule { segments_per_level })
    }

    /// Strict halving schedule `[1, 2, 4, ...]` with `levels` levels.
    pub fn binary(levels: usize) -> Result<Self> {
        Self::new((0..levels).map(|l| 1usize << l).collect())
    }

    /// The first `levels` levels of this schedule.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.levels() {
            return Err(Error::InvalidInput(format!(
                "cannot keep {levels} of {} pyramid levels",
                self.levels()
            )));
        }
        Self::new(self.segments_per_level[..levels].to_vec())
    }

    pub fn segments_per_level(&self) -> &[usize] {
        &self.segments_per_level
    }

    pub fn levels(&self) -> usize {
        self.segments_per_level.len()
    }

    /// Total segment count across all levels.
    pub fn total_segments(&self) -> usize {
        self.segments_per_level.iter().sum()
    }
}

impl std::str::FromStr for PartitionSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad schedule entry {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts).map_err(|e| Error::Config(e.to_string()))
    }
}

impl std::fmt::Display for PartitionSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.segments_per_level.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// 1-based inclusive bounds of `parts` segments over `frame_count` frames.
///
/// Segment `p` covers `floor((p-1)*M/P)+1 ..= floor(p*M/P)`. When `M < P`
/// some of those ranges are empty; they collapse to a single frame and so
/// yield a zero flow.
pub fn segment_bounds(frame_count: usize, parts: usize) -> Vec<(usize, usize)> {
    assert!(parts >= 1, "segment count must be positive");
    (1..=parts)
        .map(|p| {
            let first = (p - 1) * frame_count / parts + 1;
            let last = p * frame_count / parts;
            (first, last.max(first))
        })
        .collect()
}

/// Flow between two frames (1-based, inclusive): `x_last - x_first`.
pub fn cnn_flow(seq: &FeatureSequence, first: usize, last: usize) -> Result<Vec<f64>> {
    if first < 1 || first > last || last > seq.frame_count() {
        return Err(Error::FrameRange {
            first,
            last,
            frame_count: seq.frame_count(),
        });
    }
    let a = seq.row(first - 1);
    let b = seq.row(last - 1);
    Ok(a.iter()
        .zip(b)
        .map(|(&x0, &x1)| f64::from(x1) - f64::from(x0))
        .collect())
}

/// Per-level segment vectors of one snippet.
///
/// For flow pyramids each vector is a CNN flow; the appearance baseline
/// stores raw frame features in the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetDescriptor {
    levels: Vec<Vec<Vec<f64>>>,
    dim: usize,
}

impl SnippetDescriptor {
    pub fn from_levels(levels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = levels
            .first()
            .and_then(|l| l.first())
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("descriptor needs at least one segment".into()))?;
        for v in levels.iter().flatten() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        if levels.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInput("descriptor level without segments".into()));
        }
        Ok(SnippetDescriptor { levels, dim })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> &[Vec<f64>] {
        &self.levels[level]
    }

    pub fn segments_per_level(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Dimension of every segment vector.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All segment vectors concatenated, level 1 first, left to right.
    pub fn stacked(&self) -> Vec<f64> {
        self.levels.iter().flatten().flatten().copied().collect()
    }
}

pub fn build_pyramid(
    seq: &FeatureSequence,
    snippet: &Snippet,
    schedule: &PartitionSchedule,
) -> Result<SnippetDescriptor> {
    snippet.check_within(seq.frame_count())?;
    let len = snippet.len();
    let offset = snippet.first - 1;
    let levels = schedule
        .segments_per_level()
        .iter()
        .map(|&parts| {
            segment_bounds(len, parts)
                .into_iter()
                .map(|(a, b)| cnn_flow(seq, offset + a, offset + b))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    SnippetDescriptor::from_levels(levels)
}

/// Appearance-only descriptor: every other frame of the snippet, raw.
///
/// Takes frames `first, first+2, ...`, `count` of them, clamping at the
/// snippet's last frame so that short snippets keep a fixed layout.
pub fn appearance_descriptor(
    seq: &FeatureSequence,
    snippet: &Snippet,
    count: usize,
) -> Result<SnippetDescriptor> {
    snippet.check_within(seq.frame_count())?;
    if count == 0 {
        return Err(Error::InvalidInput("appearance descriptor needs at least one frame".into()));
    }
    let frames = (0..count)
        .map(|j| (snippet.first + 2 * j).min(snippet.last))
        .map(|f| seq.row_f64(f - 1))
        .collect();
    SnippetDescriptor::from_levels(vec![frames])
}
