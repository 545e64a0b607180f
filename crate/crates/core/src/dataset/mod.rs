//! Feature series, annotation traces and sessions.
//!
//! A [`FeatureSeries`] holds the twelve facial/pose channels frame by frame; an
//! [`AnnotationTrace`] holds the continuous [-1, +1] rating of one epistemic
//! state. Loading, gap imputation, rate alignment and the synthetic session
//! generator live here.

mod io;
mod synth;
pub mod presets;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regions::RegionLabels;

pub use io::{
    load_annotation_trace, load_feature_series, load_region_labels, load_session_dir,
    read_annotation_trace, read_feature_series, write_annotation_trace, write_feature_series,
    write_region_labels, write_session_dir,
};
pub use synth::{random_plan, synth_session, Coupling, PlanSpec, Segment, SynthConfig, SynthManifest};

/// Canonical channel order.
pub const CHANNELS: [&str; 12] = [
    "inBrL", "inBrR", "otBrL", "otBrR", "eyeOL", "eyeOR", "oLipH", "iLipH", "LpCDt", "Yaw", "Pitch",
    "Roll",
];

pub const N_CHANNELS: usize = CHANNELS.len();

/// Ratings within this distance outside [-1, +1] are clipped instead of rejected.
pub const RANGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("empty file")]
    EmptyFile,
    #[error("channel {0} has no valid values to impute from")]
    EmptyChannel(String),
    #[error("rating out of range at frame {frame}: {value}")]
    OutOfRange { frame: usize, value: f64 },
    #[error("incompatible frame rates: features {features} fps, trace {trace} fps")]
    IncompatibleRates { features: f64, trace: f64 },
    #[error("invalid segment plan: {0}")]
    InvalidPlan(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("unknown state {0}")]
    UnknownState(String),
    #[error("opening {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The five epistemic mental states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmState {
    Agreement,
    Concentration,
    Thoughtful,
    Certain,
    Interest,
}

impl EmState {
    pub const ALL: [EmState; 5] = [
        EmState::Agreement,
        EmState::Concentration,
        EmState::Thoughtful,
        EmState::Certain,
        EmState::Interest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmState::Agreement => "Agreement",
            EmState::Concentration => "Concentration",
            EmState::Thoughtful => "Thoughtful",
            EmState::Certain => "Certain",
            EmState::Interest => "Interest",
        }
    }

    /// Window size (frames) used for this state unless overridden.
    pub fn default_window(self) -> usize {
        match self {
            EmState::Agreement | EmState::Thoughtful => 20,
            EmState::Concentration | EmState::Certain | EmState::Interest => 40,
        }
    }
}

impl fmt::Display for EmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmState {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmState::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DatasetError::UnknownState(s.to_string()))
    }
}

/// Index of a channel name in [`CHANNELS`], case-insensitive.
pub fn channel_index(name: &str) -> Option<usize> {
    CHANNELS.iter().position(|c| c.eq_ignore_ascii_case(name.trim()))
}

fn check_fps(fps: f64) -> Result<(), DatasetError> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidSeries(format!("fps must be finite and positive, got {fps}")))
    }
}

/// Frames x 12 channel matrix at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    data: Array2<f64>,
    fps: f64,
}

impl FeatureSeries {
    pub fn new(data: Array2<f64>, fps: f64) -> Result<Self, DatasetError> {
        check_fps(fps)?;
        if data.ncols() != N_CHANNELS {
            return Err(DatasetError::InvalidSeries(format!(
                "expected {N_CHANNELS} channels, got {}",
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(DatasetError::InvalidSeries("no frames".into()));
        }
        if let Some(((row, col), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DatasetError::InvalidSeries(format!(
                "non-finite value {v} at frame {row}, channel {}",
                CHANNELS[col]
            )));
        }
        Ok(FeatureSeries { data, fps })
    }

    pub fn from_rows(rows: &[[f64; N_CHANNELS]], fps: f64) -> Result<Self, DatasetError> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), N_CHANNELS), flat)
            .map_err(|e| DatasetError::InvalidSeries(e.to_string()))?;
        Self::new(data, fps)
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn channel(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.data.column(idx)
    }

    pub fn frame(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.data.row(idx)
    }

    /// First `n` frames.
    pub fn truncated(&self, n: usize) -> FeatureSeries {
        let n = n.min(self.n_frames());
        FeatureSeries { data: self.data.slice(ndarray::s![..n, ..]).to_owned(), fps: self.fps }
    }

    /// Frames in `start..end`.
    pub fn frames(&self, start: usize, end: usize) -> FeatureSeries {
        FeatureSeries { data: self.data.slice(ndarray::s![start..end, ..]).to_owned(), fps: self.fps }
    }

    /// Concatenate frames of several series (all must share fps).
    pub fn concat(parts: &[&FeatureSeries]) -> Result<FeatureSeries, DatasetError> {
        let first = parts.first().ok_or_else(|| DatasetError::InvalidSeries("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.fps != first.fps) {
            return Err(DatasetError::IncompatibleRates { features: first.fps, trace: f64::NAN });
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| DatasetError::InvalidSeries(e.to_string()))?;
        Ok(FeatureSeries { data, fps: first.fps })
    }
}

/// Continuous per-frame rating of one state, every value in [-1, +1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrace {
    state: EmState,
    values: Vec<f64>,
    fps: f64,
}

impl AnnotationTrace {
    pub fn new(state: EmState, values: Vec<f64>, fps: f64) -> Result<Self, DatasetError> {
        check_fps(fps)?;
        if values.is_empty() {
            return Err(DatasetError::EmptyFile);
        }
        if let Some((frame, &value)) =
            values.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(DatasetError::OutOfRange { frame, value });
        }
        Ok(AnnotationTrace { state, values, fps })
    }

    /// Like [`AnnotationTrace::new`], but values within [`RANGE_TOLERANCE`]
    /// outside the range are clipped.
    pub fn with_tolerance(state: EmState, mut values: Vec<f64>, fps: f64) -> Result<Self, DatasetError> {
        for (frame, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 + RANGE_TOLERANCE {
                return Err(DatasetError::OutOfRange { frame, value: *v });
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Self::new(state, values, fps)
    }

    pub fn state(&self) -> EmState {
        self.state
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated(&self, n: usize) -> AnnotationTrace {
        let n = n.min(self.len());
        AnnotationTrace { state: self.state, values: self.values[..n].to_vec(), fps: self.fps }
    }

    pub fn frames(&self, start: usize, end: usize) -> AnnotationTrace {
        AnnotationTrace { state: self.state, values: self.values[start..end].to_vec(), fps: self.fps }
    }

    pub fn negated(&self) -> AnnotationTrace {
        AnnotationTrace { state: self.state, values: self.values.iter().map(|v| -v).collect(), fps: self.fps }
    }
}

/// One recording: features, one trace per annotated state, and optional
/// ground-truth region labels per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub features: FeatureSeries,
    pub traces: BTreeMap<EmState, AnnotationTrace>,
    pub regions: BTreeMap<EmState, RegionLabels>,
}

impl Session {
    /// Builds a session, aligning every trace to the features and truncating
    /// all members to a common frame count.
    pub fn new(
        id: impl Into<String>,
        features: FeatureSeries,
        traces: Vec<AnnotationTrace>,
    ) -> Result<Self, DatasetError> {
        let mut features = features;
        let mut aligned = Vec::with_capacity(traces.len());
        for trace in traces {
            let (f, t) = align(&features, &trace)?;
            features = f;
            aligned.push(t);
        }
        let n = aligned.iter().map(|t| t.len()).min().unwrap_or(features.n_frames());
        let features = features.truncated(n);
        let traces = aligned.into_iter().map(|t| (t.state(), t.truncated(n))).collect();
        Ok(Session { id: id.into(), features, traces, regions: BTreeMap::new() })
    }

    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    pub fn trace(&self, state: EmState) -> Option<&AnnotationTrace> {
        self.traces.get(&state)
    }

    /// Frames `start..end` of every member.
    pub fn frames(&self, id: impl Into<String>, start: usize, end: usize) -> Session {
        Session {
            id: id.into(),
            features: self.features.frames(start, end),
            traces: self.traces.iter().map(|(s, t)| (*s, t.frames(start, end))).collect(),
            regions: self
                .regions
                .iter()
                .map(|(s, r)| (*s, RegionLabels::new(r.labels()[start..end].to_vec())))
                .collect(),
        }
    }
}

/// Linear interpolation of `values` at fractional index `pos`, holding the
/// end values outside the sampled range.
fn interpolate_at(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    let i0 = pos.floor() as usize;
    if i0 >= last {
        return values[last];
    }
    let frac = pos - i0 as f64;
    if frac == 0.0 {
        values[i0]
    } else {
        values[i0] + frac * (values[i0 + 1] - values[i0])
    }
}

/// Brings a trace to the feature frame rate and truncates both to the shorter
/// stream.
///
/// A trace at a different rate is resampled by linear interpolation to
/// `round(len * fps_features / fps_trace)` frames, holding its last value past
/// the final annotated sample.
pub fn align(
    features: &FeatureSeries,
    trace: &AnnotationTrace,
) -> Result<(FeatureSeries, AnnotationTrace), DatasetError> {
    if features.n_frames() == 0 || trace.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    let ratio = features.fps / trace.fps;
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(DatasetError::IncompatibleRates { features: features.fps, trace: trace.fps });
    }
    let resampled = if features.fps == trace.fps {
        trace.clone()
    } else {
        let n_out = ((trace.len() as f64) * ratio).round().max(1.0) as usize;
        let step = trace.fps / features.fps;
        let values = (0..n_out)
            .map(|j| interpolate_at(&trace.values, j as f64 * step).clamp(-1.0, 1.0))
            .collect();
        AnnotationTrace { state: trace.state, values, fps: features.fps }
    };
    let n = features.n_frames().min(resampled.len());
    Ok((features.truncated(n), resampled.truncated(n)))
}

/// Fills NaN gaps of one channel in place: linear interpolation between the
/// nearest valid frames, nearest valid value at the boundaries.
pub(crate) fn impute_gaps(values: &mut [f64]) -> bool {
    let valid: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    let (Some(&first), Some(&last)) = (valid.first(), valid.last()) else {
        return false;
    };
    let head = values[first];
    values[..first].fill(head);
    let tail = values[last];
    values[last + 1..].fill(tail);
    for pair in valid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let (va, vb) = (values[a], values[b]);
            let span = (b - a) as f64;
            for i in a + 1..b {
                values[i] = va + (vb - va) * ((i - a) as f64 / span);
            }
        }
    }
    true
}

/// Opens a file, keeping the path in the error.
pub(crate) fn open(path: &std::path::Path) -> Result<std::fs::File, DatasetError> {
    std::fs::File::open(path).map_err(|source| DatasetError::Open { path: path.display().to_string(), source })
}
