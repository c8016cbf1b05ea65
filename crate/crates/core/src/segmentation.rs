//! Half-overlap segmentation, consistency vectors and the consistency
//! measure factor (CMF).
//!
//! The CMF of an utterance cut into `N` segments with embeddings `x_i` is
//! `||c|| / N` where `c = sum_i x_i / ||x_i||`. Mean-of-cosines segment
//! scoring factors through it: `mean_i cos(x_i, y) == cmf * cos(y, c)`.

use crate::embedding::{cosine, l2_normalize, norm, Embedding};
use crate::error::{Error, Result};

/// Evaluation-set window profile: 400 frames, hop 200.
pub const DEFAULT_WINDOW: usize = 400;
/// Short-audio profile: 200 frames, hop 100.
pub const SHORT_WINDOW: usize = 200;
pub const DEFAULT_WINDOW_MIN: usize = 100;
pub const DEFAULT_MIN_SEGMENTS: usize = 2;

/// Frame ranges `[start, end)` of one utterance's segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub total_frames: usize,
    pub window: usize,
    pub hop: usize,
    pub ranges: Vec<(usize, usize)>,
}

impl SegmentPlan {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Windows laid out at `hop = window / 2` plus a right-anchored tail.
fn layout(total_frames: usize, window: usize) -> Vec<(usize, usize)> {
    if window > total_frames {
        return Vec::new();
    }
    let hop = (window / 2).max(1);
    let mut ranges: Vec<(usize, usize)> = (0..)
        .map(|i| i * hop)
        .take_while(|start| start + window <= total_frames)
        .map(|start| (start, start + window))
        .collect();
    let tail = total_frames - window;
    if ranges.last().is_none_or(|&(start, _)| start != tail) {
        ranges.push((tail, total_frames));
    }
    ranges
}

/// Plans segments for an utterance of `total_frames` frames.
///
/// While fewer than `min_segments` windows fit and the window is still above
/// `window_min`, the window is halved (never below `window_min`) and the
/// layout recomputed.
pub fn plan_segments(
    total_frames: usize,
    window: usize,
    min_segments: usize,
    window_min: usize,
) -> Result<SegmentPlan> {
    if window == 0 || window_min == 0 || min_segments == 0 {
        return Err(Error::InvalidSpec(
            "window, window_min and min_segments must be positive".into(),
        ));
    }
    if window_min > window {
        return Err(Error::InvalidSpec(format!(
            "window_min {window_min} exceeds window {window}"
        )));
    }
    if total_frames < window_min {
        return Err(Error::TooShort {
            total_frames,
            window_min,
        });
    }
    let mut window = window;
    let mut ranges = layout(total_frames, window);
    while ranges.len() < min_segments && window > window_min {
        window = (window / 2).max(window_min);
        ranges = layout(total_frames, window);
    }
    Ok(SegmentPlan {
        total_frames,
        window,
        hop: (window / 2).max(1),
        ranges,
    })
}

fn check_uniform<V: AsRef<[f64]>>(segments: &[V]) -> Result<usize> {
    let dim = segments.first().ok_or(Error::EmptyList)?.as_ref().len();
    for s in segments {
        if s.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

/// Sum of the unit-normalized segment vectors.
pub fn consistency_vector<V: AsRef<[f64]>>(segments: &[V]) -> Result<Vec<f64>> {
    let dim = check_uniform(segments)?;
    let mut c = vec![0.0; dim];
    for s in segments {
        let unit = l2_normalize(s.as_ref())?;
        for (acc, u) in c.iter_mut().zip(&unit) {
            *acc += u;
        }
    }
    Ok(c)
}

fn cmf_of(c: &[f64], n: usize) -> f64 {
    (norm(c) / n as f64).clamp(0.0, 1.0)
}

/// Consistency measure factor, in `[0, 1]`.
pub fn cmf<V: AsRef<[f64]>>(segments: &[V]) -> Result<f64> {
    let c = consistency_vector(segments)?;
    Ok(cmf_of(&c, segments.len()))
}

/// Mean cosine between each segment of one utterance and the embedding of
/// the other.
pub fn segment_score<V: AsRef<[f64]>>(segments: &[V], y: &[f64]) -> Result<f64> {
    check_uniform(segments)?;
    let mut total = 0.0;
    for s in segments {
        total += cosine(s.as_ref(), y)?;
    }
    Ok(total / segments.len() as f64)
}

/// Segment embeddings of one utterance along with `c` and its CMF.
#[derive(Debug, Clone)]
pub struct SegmentSet {
    pub utterance_id: String,
    pub segment_embeddings: Vec<Embedding>,
    pub consistency_vector: Vec<f64>,
    pub cmf: f64,
}

impl SegmentSet {
    pub fn new(utterance_id: impl Into<String>, segment_embeddings: Vec<Embedding>) -> Result<Self> {
        let vectors: Vec<Vec<f64>> = segment_embeddings.iter().map(Embedding::to_f64).collect();
        let c = consistency_vector(&vectors)?;
        let cmf = cmf_of(&c, vectors.len());
        Ok(Self {
            utterance_id: utterance_id.into(),
            segment_embeddings,
            consistency_vector: c,
            cmf,
        })
    }

    pub fn len(&self) -> usize {
        self.segment_embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_embeddings.is_empty()
    }
}
