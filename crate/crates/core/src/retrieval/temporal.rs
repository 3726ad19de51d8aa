//! Fixed-length clips, exhaustive moment proposals and temporal IoU.

use serde::{Deserialize, Serialize};

use crate::dataset::VideoRecord;
use crate::error::{Error, Result};

/// One fixed-length window of a video.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Whether the window lies inside the activity interval.
    pub positive: bool,
}

/// How a clip is judged against the activity interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipRule {
    /// The whole window lies within the activity.
    #[default]
    Contained,
    /// Any overlap with the activity.
    Overlap,
}

/// Consecutive `[i·L, (i+1)·L)` windows; a trailing remainder shorter than `L` is dropped.
pub fn segment_clips(record: &VideoRecord, clip_len_s: f64, rule: ClipRule) -> Result<Vec<Clip>> {
    if !(clip_len_s > 0.0 && clip_len_s.is_finite()) {
        return Err(Error::Parameter(format!(
            "clip length must be positive, got {clip_len_s}"
        )));
    }
    // Tolerate rounding in durations that are exact multiples of L.
    let n = ((record.duration_s + 1e-9) / clip_len_s).floor() as usize;
    let [a0, a1] = record.activity;
    Ok((0..n)
        .map(|i| {
            let start_s = i as f64 * clip_len_s;
            let end_s = start_s + clip_len_s;
            let positive = !record.class.is_distractor()
                && match rule {
                    ClipRule::Contained => start_s >= a0 && end_s <= a1,
                    ClipRule::Overlap => start_s < a1 && end_s > a0,
                };
            Clip {
                index: i,
                start_s,
                end_s,
                positive,
            }
        })
        .collect())
}

/// Inclusive clip-index range `[start, end]`.
pub type ClipRange = (usize, usize);

/// Every contiguous run of 1..=min(M, n) clips, ordered by length then start.
pub fn generate_proposals(n_clips: usize, max_len: usize) -> Vec<ClipRange> {
    let longest = max_len.min(n_clips);
    let mut out = Vec::with_capacity(proposal_count(n_clips, max_len));
    for len in 1..=longest {
        for start in 0..=(n_clips - len) {
            out.push((start, start + len - 1));
        }
    }
    out
}

/// `Σ_{l=1..min(M,n)} (n − l + 1)`.
pub fn proposal_count(n_clips: usize, max_len: usize) -> usize {
    (1..=max_len.min(n_clips)).map(|l| n_clips - l + 1).sum()
}

/// A proposal with its time span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalProposal {
    pub video_id: String,
    pub start_clip: usize,
    pub end_clip: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl TemporalProposal {
    pub fn from_range(video_id: &str, range: ClipRange, clip_len_s: f64) -> Self {
        Self {
            video_id: video_id.to_string(),
            start_clip: range.0,
            end_clip: range.1,
            start_s: range.0 as f64 * clip_len_s,
            end_s: (range.1 + 1) as f64 * clip_len_s,
        }
    }

    pub fn interval(&self) -> [f64; 2] {
        [self.start_s, self.end_s]
    }
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn tiou(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    for iv in [a, b] {
        if !(iv[1] > iv[0]) || !iv[0].is_finite() || !iv[1].is_finite() {
            return Err(Error::Degenerate(format!("interval {iv:?} has no length")));
        }
    }
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = a[1].max(b[1]) - a[0].min(b[0]);
    Ok(inter / union)
}

/// Whether any proposal of the video reaches `tIoU > threshold` with its activity.
pub fn has_hit(record: &VideoRecord, clip_len_s: f64, max_len: usize, threshold: f64) -> Result<bool> {
    let n = segment_clips(record, clip_len_s, ClipRule::Contained)?.len();
    for r in generate_proposals(n, max_len) {
        let p = TemporalProposal::from_range(&record.id, r, clip_len_s);
        if tiou(p.interval(), record.activity)? > threshold {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassRef, Split};

    fn rec(duration: f64, activity: [f64; 2]) -> VideoRecord {
        VideoRecord {
            id: "v".into(),
            class: ClassRef::Class(0),
            split: Split::Test,
            duration_s: duration,
            activity,
            feature_file: "v.vsf".into(),
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(
            segment_clips(&rec(13.0, [0.0, 13.0]), 4.0, ClipRule::Contained)
                .unwrap()
                .len(),
            3
        );
        let clips = segment_clips(&rec(12.0, [4.0, 12.0]), 4.0, ClipRule::Contained).unwrap();
        assert_eq!(
            clips.iter().map(|c| c.positive).collect::<Vec<_>>(),
            vec![false, true, true]
        );
        assert!(segment_clips(&rec(3.0, [0.0, 3.0]), 4.0, ClipRule::Contained)
            .unwrap()
            .is_empty());
        let overlap = segment_clips(&rec(12.0, [3.0, 5.0]), 4.0, ClipRule::Overlap).unwrap();
        assert_eq!(
            overlap.iter().map(|c| c.positive).collect::<Vec<_>>(),
            vec![true, true, false]
        );
        assert!(segment_clips(&rec(12.0, [3.0, 5.0]), 0.0, ClipRule::Contained).is_err());
    }

    #[test]
    fn proposal_examples() {
        assert_eq!(generate_proposals(6, 26).len(), 21);
        assert_eq!(generate_proposals(6, 2).len(), 11);
        assert_eq!(generate_proposals(1, 5), vec![(0, 0)]);
        assert!(generate_proposals(0, 5).is_empty());
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou([1.0, 3.0], [1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(tiou([0.0, 1.0], [2.0, 3.0]).unwrap(), 0.0);
        assert!((tiou([0.0, 4.0], [2.0, 6.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(tiou([1.0, 1.0], [0.0, 2.0]).is_err());
    }

    #[test]
    fn full_span_activity_always_hits() {
        assert!(has_hit(&rec(12.0, [0.0, 12.0]), 4.0, 3, 0.5).unwrap());
        assert!(!has_hit(&rec(12.0, [0.0, 12.0]), 4.0, 1, 0.5).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn tiou_is_symmetric_and_bounded(a0 in 0.0f64..10.0, la in 0.1f64..5.0, b0 in 0.0f64..10.0, lb in 0.1f64..5.0) {
            let a = [a0, a0 + la];
            let b = [b0, b0 + lb];
            let x = tiou(a, b).unwrap();
            proptest::prop_assert_eq!(x, tiou(b, a).unwrap());
            proptest::prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn tiou_grows_as_gap_shrinks(a0 in 0.0f64..5.0, la in 0.5f64..3.0, gap in 0.1f64..4.0, lb in 0.5f64..3.0) {
            let a = [a0, a0 + la];
            let far = [a[1] + gap, a[1] + gap + lb];
            let near = [a[1] + gap / 2.0 - la.min(lb) / 2.0, a[1] + gap / 2.0 - la.min(lb) / 2.0 + lb];
            proptest::prop_assert!(tiou(a, near).unwrap() >= tiou(a, far).unwrap());
        }
    }
}
