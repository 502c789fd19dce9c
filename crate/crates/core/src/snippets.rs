//! Snippet selection: binary-code key-frames or fixed overlapping windows.

use std::path::Path;

use crate::error::{Error, Result};
use crate::hashing::{hamming, BinaryCode};

/// Snippets shorter than this many frames get merged into a neighbour.
pub const DEFAULT_MIN_LENGTH: usize = 2;

/// A frame interval of one video, 1-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Snippet {
    pub video_id: String,
    pub first: usize,
    pub last: usize,
}

impl Snippet {
    pub fn new(video_id: impl Into<String>, first: usize, last: usize) -> Result<Self> {
        if first < 1 || first > last {
            return Err(Error::FrameRange {
                first,
                last,
                frame_count: last,
            });
        }
        Ok(Snippet {
            video_id: video_id.into(),
            first,
            last,
        })
    }

    /// Number of frames covered.
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn check_within(&self, frame_count: usize) -> Result<()> {
        if self.first < 1 || self.first > self.last || self.last > frame_count {
            return Err(Error::FrameRange {
                first: self.first,
                last: self.last,
                frame_count,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyframeParams {
    /// Minimum hamming distance to the previous frame's code.
    pub hamming_threshold: u32,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        KeyframeParams { hamming_threshold: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowParams {
    pub window_length: usize,
    pub stride: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            window_length: 20,
            stride: 10,
        }
    }
}

impl WindowParams {
    pub fn new(window_length: usize, stride: usize) -> Result<Self> {
        if window_length < 2 {
            return Err(Error::InvalidInput("window length must be at least 2".into()));
        }
        if stride < 1 || stride > window_length {
            return Err(Error::InvalidInput(format!(
                "stride must be within 1..={window_length}, got {stride}"
            )));
        }
        Ok(WindowParams { window_length, stride })
    }
}

/// Frames (1-based) whose code differs from the previous frame's code by at
/// least the threshold. Frame 1 is always a key-frame.
pub fn detect_keyframes(codes: &[BinaryCode], params: &KeyframeParams) -> Result<Vec<usize>> {
    if codes.is_empty() {
        return Err(Error::InvalidInput("no frame codes".into()));
    }
    if params.hamming_threshold == 0 {
        return Err(Error::InvalidInput("hamming threshold must be at least 1".into()));
    }
    let mut keyframes = vec![1];
    for (i, pair) in codes.windows(2).enumerate() {
        if hamming(&pair[1], &pair[0])? >= params.hamming_threshold {
            keyframes.push(i + 2);
        }
    }
    Ok(keyframes)
}

/// Turns key-frames into snippets spanning consecutive key-frames.
///
/// Consecutive snippets share their boundary frame. The stretch from the
/// last key-frame to the end of the video forms a tail snippet. Snippets
/// shorter than `min_length` frames are merged into their successor; a short
/// final remnant is merged into its predecessor. A minimum below 2 is raised
/// to 2, since a one-frame snippet has no flow.
pub fn snippets_from_keyframes(
    video_id: &str,
    keyframes: &[usize],
    frame_count: usize,
    min_length: usize,
) -> Result<Vec<Snippet>> {
    if frame_count < 2 {
        return Err(Error::InvalidInput(format!(
            "video {video_id:?} has {frame_count} frame(s); snippets need at least 2"
        )));
    }
    if keyframes.first() != Some(&1) {
        return Err(Error::InvalidInput("key-frames must start at frame 1".into()));
    }
    if keyframes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("key-frames must be strictly increasing".into()));
    }
    if let Some(&last) = keyframes.last() {
        if last > frame_count {
            return Err(Error::FrameRange {
                first: 1,
                last,
                frame_count,
            });
        }
    }

    let tail = (*keyframes.last().unwrap(), frame_count);
    let raw = keyframes
        .windows(2)
        .map(|w| (w[0], w[1]))
        .chain(std::iter::once(tail));

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<usize> = None;
    let mut remnant_end = 0;
    for (a, b) in raw {
        let a = pending.take().unwrap_or(a);
        if b + 1 - a < min_length.max(2) {
            pending = Some(a);
            remnant_end = b;
            continue;
        }
        spans.push((a, b));
    }
    if let Some(a) = pending {
        match spans.last_mut() {
            Some(prev) => prev.1 = prev.1.max(remnant_end),
            None => spans.push((a, frame_count)),
        }
    }
    Ok(spans
        .into_iter()
        .map(|(first, last)| Snippet {
            video_id: video_id.to_string(),
            first,
            last,
        })
        .collect())
}

/// Fixed-length windows starting at frames `1, 1+s, 1+2s, ...`.
///
/// Only windows that fit entirely inside the video are kept; a video shorter
/// than one window yields the single snippet `(1, M)`.
pub fn snippets_from_windows(
    video_id: &str,
    frame_count: usize,
    params: &WindowParams,
) -> Result<Vec<Snippet>> {
    if frame_count < 2 {
        return Err(Error::InvalidInput(format!(
            "video {video_id:?} has {frame_count} frame(s); snippets need at least 2"
        )));
    }
    let WindowParams { window_length, stride } = *params;
    if frame_count < window_length {
        return Ok(vec![Snippet {
            video_id: video_id.to_string(),
            first: 1,
            last: frame_count,
        }]);
    }
    Ok((1..=frame_count + 1 - window_length)
        .step_by(stride)
        .map(|start| Snippet {
            video_id: video_id.to_string(),
            first: start,
            last: start + window_length - 1,
        })
        .collect())
}

/// Writes `video_id TAB first TAB last` lines.
pub fn write_snippet_list(path: impl AsRef<Path>, snippets: &[Snippet]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in snippets {
        out.push_str(&format!("{}\t{}\t{}\n", s.video_id, s.first, s.last));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_snippet_list(path: impl AsRef<Path>) -> Result<Vec<Snippet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: &str| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(i + 1, "expected video_id, first, last"));
        }
        let first = f[1].trim().parse().map_err(|_| bad(i + 1, "bad first frame"))?;
        let last = f[2].trim().parse().map_err(|_| bad(i + 1, "bad last frame"))?;
        out.push(Snippet::new(f[0], first, last).map_err(|_| bad(i + 1, "invalid frame range"))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(bits: u64, len: usize) -> BinaryCode {
        BinaryCode::from_u64(bits, len)
    }

    fn spans(s: &[Snippet]) -> Vec<(usize, usize)> {
        s.iter().map(|s| (s.first, s.last)).collect()
    }

    #[test]
    fn identical_codes_give_one_keyframe() {
        let codes = vec![code(0b1011, 4); 50];
        assert_eq!(detect_keyframes(&codes, &KeyframeParams::default()).unwrap(), vec![1]);
    }

    #[test]
    fn keyframes_where_codes_change() {
        let codes = [0b0000, 0b0001, 0b0001, 0b0011].map(|b| code(b, 4));
        assert_eq!(detect_keyframes(&codes, &KeyframeParams::default()).unwrap(), vec![1, 2, 4]);
    }

    #[test]
    fn higher_threshold_skips_single_flips() {
        let codes = [0b0000, 0b0001, 0b0111, 0b0110].map(|b| code(b, 4));
        let params = KeyframeParams { hamming_threshold: 2 };
        assert_eq!(detect_keyframes(&codes, &params).unwrap(), vec![1, 3]);
        assert_eq!(KeyframeParams::default().hamming_threshold, 1);
    }

    #[test]
    fn keyframe_errors() {
        assert!(detect_keyframes(&[], &KeyframeParams::default()).is_err());
        let mixed = [code(0, 4), code(0, 5)];
        assert!(detect_keyframes(&mixed, &KeyframeParams::default()).is_err());
    }

    #[test]
    fn whole_video_when_single_keyframe() {
        let s = snippets_from_keyframes("v", &[1], 30, 2).unwrap();
        assert_eq!(spans(&s), vec![(1, 30)]);
    }

    #[test]
    fn keyframe_spans_share_boundaries() {
        let s = snippets_from_keyframes("v", &[1, 10, 20], 25, 2).unwrap();
        assert_eq!(spans(&s), vec![(1, 10), (10, 20), (20, 25)]);
        assert!(s.iter().all(|s| s.video_id == "v"));
    }

    #[test]
    fn keyframe_on_last_frame_drops_tail() {
        let s = snippets_from_keyframes("v", &[1, 5, 9], 9, 2).unwrap();
        assert_eq!(spans(&s), vec![(1, 5), (5, 9)]);
    }

    #[test]
    fn short_snippets_merge_forward_and_remnant_backward() {
        // Raw spans (1,2) (2,3) (3,8) (8,9) with min_length 3.
        let s = snippets_from_keyframes("v", &[1, 2, 3, 8], 9, 3).unwrap();
        assert_eq!(spans(&s), vec![(1, 3), (3, 9)]);
    }

    #[test]
    fn video_shorter_than_min_length_is_one_snippet() {
        let s = snippets_from_keyframes("v", &[1, 2], 3, 5).unwrap();
        assert_eq!(spans(&s), vec![(1, 3)]);
    }

    #[test]
    fn keyframe_precondition_errors() {
        assert!(snippets_from_keyframes("v", &[2, 4], 9, 2).is_err());
        assert!(snippets_from_keyframes("v", &[1, 4, 4], 9, 2).is_err());
        assert!(snippets_from_keyframes("v", &[1, 12], 9, 2).is_err());
        assert!(snippets_from_keyframes("v", &[1], 1, 2).is_err());
    }

    #[test]
    fn windows_enumerate_starts() {
        let s = snippets_from_windows("v", 100, &WindowParams::default()).unwrap();
        assert_eq!(s.len(), 9);
        let starts: Vec<usize> = s.iter().map(|s| s.first).collect();
        assert_eq!(starts, vec![1, 11, 21, 31, 41, 51, 61, 71, 81]);
        assert!(s.iter().all(|s| s.len() == 20));
    }

    #[test]
    fn exact_fit_and_short_video() {
        let p = WindowParams::default();
        assert_eq!(spans(&snippets_from_windows("v", 20, &p).unwrap()), vec![(1, 20)]);
        assert_eq!(spans(&snippets_from_windows("v", 7, &p).unwrap()), vec![(1, 7)]);
        assert_eq!(p.window_length, 20);
    }

    #[test]
    fn window_params_validate() {
        assert!(WindowParams::new(1, 1).is_err());
        assert!(WindowParams::new(20, 0).is_err());
        assert!(WindowParams::new(20, 21).is_err());
        assert!(WindowParams::new(20, 20).is_ok());
    }

    #[test]
    fn snippet_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tsv");
        let s = snippets_from_keyframes("clip", &[1, 10, 20], 25, 2).unwrap();
        write_snippet_list(&path, &s).unwrap();
        assert_eq!(read_snippet_list(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn threshold_one_fires_exactly_on_change(seq in proptest::collection::vec(0u64..256, 1..60)) {
            let codes: Vec<BinaryCode> = seq.iter().map(|&b| code(b, 8)).collect();
            let got = detect_keyframes(&codes, &KeyframeParams::default()).unwrap();
            let mut expected = vec![1];
            for i in 1..seq.len() {
                if seq[i] != seq[i - 1] {
                    expected.push(i + 1);
                }
            }
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn keyframe_snippets_are_valid(
            marks in proptest::collection::vec(any::<bool>(), 2..80),
            min_length in 1usize..6,
        ) {
            let m = marks.len();
            let mut kf = vec![1];
            kf.extend((2..=m).filter(|&i| marks[i - 1]));
            let s = snippets_from_keyframes("v", &kf, m, min_length).unwrap();
            prop_assert!(!s.is_empty());
            prop_assert_eq!(s[0].first, 1);
            prop_assert_eq!(s.last().unwrap().last, m);
            for w in s.windows(2) {
                prop_assert_eq!(w[0].last, w[1].first);
            }
            for sn in &s {
                prop_assert!(sn.first < sn.last);
                if s.len() > 1 {
                    prop_assert!(sn.len() >= min_length);
                }
            }
        }

        #[test]
        fn windows_overlap_by_l_minus_s(m in 2usize..300, l in 2usize..40, s_frac in 0.0f64..1.0) {
            let s = 1 + ((l - 1) as f64 * s_frac) as usize;
            let params = WindowParams::new(l, s).unwrap();
            let w = snippets_from_windows("v", m, &params).unwrap();
            prop_assert_eq!(w[0].first, 1);
            if m >= l {
                prop_assert!(w.iter().all(|x| x.len() == l && x.last <= m));
                for pair in w.windows(2) {
                    prop_assert_eq!(pair[0].last + 1 - pair[1].first, l - s);
                }
                // No further window would fit.
                prop_assert!(w.last().unwrap().first + s + l - 1 > m);
            } else {
                prop_assert_eq!(w.len(), 1);
            }
        }
    }
}
