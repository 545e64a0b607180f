//! RISE / SUSTAIN / DECAY regions of an intensity trace.
//!
//! Ground truth comes from [`label_regions`] (smoothed slope thresholding);
//! a random forest ([`RegionClassifier`]) learns to recover the region from a
//! design matrix, and [`region_roc`] scores it one-vs-rest.

mod forest;
mod roc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AnnotationTrace;

pub use forest::{
    classify_region, fit_forest, train_region_classifier, ForestParams, RegionClassifier, TrainingMeta, Tree, TreeNode,
    CLASSIFIER_FORMAT_VERSION,
};
pub use roc::{auc, region_roc, RegionAuc};

/// Default slope threshold in rating units per second (0.005 units per frame
/// at 25 fps).
pub const DEFAULT_SLOPE_THRESHOLD: f64 = 0.125;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("trace of {len} frames is too short for smoothing over {smooth}")]
    TooShort { len: usize, smooth: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("only one region class present in training labels")]
    SingleClass,
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("row arity {found} does not match classifier arity {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("region {0} missing from labels")]
    MissingClass(Region),
    #[error("{rows} design rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("unsupported classifier format version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Rise,
    Sustain,
    Decay,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Rise, Region::Sustain, Region::Decay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Region {
        Region::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Rise => "RISE",
            Region::Sustain => "SUSTAIN",
            Region::Decay => "DECAY",
        }
    }

    pub fn flipped(self) -> Region {
        match self {
            Region::Rise => Region::Decay,
            Region::Decay => Region::Rise,
            Region::Sustain => Region::Sustain,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = RegionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RISE" => Ok(Region::Rise),
            "SUSTAIN" => Ok(Region::Sustain),
            "DECAY" | "FALL" => Ok(Region::Decay),
            _ => Err(RegionError::InvalidParam(format!("unknown region {s:?}"))),
        }
    }
}

/// Per-frame region labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLabels {
    labels: Vec<Region>,
}

impl RegionLabels {
    pub fn new(labels: Vec<Region>) -> Self {
        RegionLabels { labels }
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels from frame `start` on (aligning with design-matrix rows that
    /// begin at `window - 1`).
    pub fn from_frame(&self, start: usize) -> RegionLabels {
        RegionLabels { labels: self.labels[start.min(self.labels.len())..].to_vec() }
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for r in &self.labels {
            c[r.index()] += 1;
        }
        c
    }

    /// Indices of frames where the label changes (index of the first frame of
    /// the new region).
    pub fn transitions(&self) -> Vec<usize> {
        (1..self.labels.len()).filter(|&i| self.labels[i] != self.labels[i - 1]).collect()
    }

    /// Fraction of frames on which `self` and `other` agree, ignoring frames
    /// within `margin` of a transition in `self`.
    pub fn agreement_excluding(&self, other: &RegionLabels, margin: usize) -> f64 {
        let n = self.len().min(other.len());
        let mut excluded = vec![false; n];
        for t in self.transitions() {
            let lo = t.saturating_sub(margin);
            let hi = (t + margin).min(n);
            excluded[lo..hi].fill(true);
        }
        let (mut hit, mut total) = (0usize, 0usize);
        for i in (0..n).filter(|&i| !excluded[i]) {
            total += 1;
            if self.labels[i] == other.labels[i] {
                hit += 1;
            }
        }
        if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Labels every frame of `trace` by the slope of its moving average.
///
/// The trace is smoothed with a centered moving average over
/// `2 * (smooth / 2) + 1` frames (the window shrinks symmetrically near the
/// ends, so linear stretches pass through unchanged). The slope is the central
/// difference of the smoothed trace in units per second (one-sided at the
/// ends). Slope above `threshold` is RISE, below `-threshold` DECAY, else
/// SUSTAIN.
pub fn label_regions(trace: &AnnotationTrace, smooth: usize, threshold: f64) -> Result<RegionLabels, RegionError> {
    let values = trace.values();
    let n = values.len();
    if smooth < 2 || n < smooth {
        return Err(RegionError::TooShort { len: n, smooth });
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(RegionError::InvalidParam(format!("slope threshold must be > 0, got {threshold}")));
    }
    let half = smooth / 2;
    let smoothed: Vec<f64> = (0..n)
        .map(|t| {
            let h = half.min(t).min(n - 1 - t);
            let lo = t - h;
            let hi = t + h + 1;
            if h == 0 {
                values[t]
            } else {
                values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            }
        })
        .collect();
    let fps = trace.fps();
    let labels = (0..n)
        .map(|t| {
            let slope = if n == 1 {
                0.0
            } else if t == 0 {
                (smoothed[1] - smoothed[0]) * fps
            } else if t == n - 1 {
                (smoothed[n - 1] - smoothed[n - 2]) * fps
            } else {
                (smoothed[t + 1] - smoothed[t - 1]) * 0.5 * fps
            };
            if slope > threshold {
                Region::Rise
            } else if slope < -threshold {
                Region::Decay
            } else {
                Region::Sustain
            }
        })
        .collect();
    Ok(RegionLabels { labels })
}
