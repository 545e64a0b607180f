//! Sliding-window derived features and MIC weighting of design matrices.
//!
//! A window of `w` frames ending at frame `t` yields the velocity
//! `(F[t] - F[t - w + 1]) / ((w - 1) / fps)` in units per second. Row `k` of
//! every derived series refers to the window ending at frame `k + w - 1`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EmState, FeatureSeries, CHANNELS, N_CHANNELS};
use crate::stats::MicMatrix;

/// Default "unchanged" deadband, units per second.
pub const DEFAULT_DEADBAND: f64 = 0.01;

/// Prefix naming a velocity row in a MIC weight table, e.g. `vel:Yaw`.
pub const VELOCITY_PREFIX: &str = "vel:";

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("window of {window} frames exceeds series of {frames} frames")]
    WindowTooLarge { window: usize, frames: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("no feature kinds selected")]
    EmptyKinds,
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
    #[error("no weight for channel {0}")]
    MissingWeight(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub size: usize,
    pub deadband: f64,
}

impl WindowConfig {
    pub fn new(size: usize) -> Result<Self, TemporalError> {
        let w = WindowConfig { size, deadband: DEFAULT_DEADBAND };
        w.validate()?;
        Ok(w)
    }

    pub fn for_state(state: EmState) -> Self {
        WindowConfig { size: state.default_window(), deadband: DEFAULT_DEADBAND }
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        if self.size < 2 {
            return Err(TemporalError::InvalidWindow(format!("size must be >= 2, got {}", self.size)));
        }
        if !(self.deadband >= 0.0 && self.deadband.is_finite()) {
            return Err(TemporalError::InvalidWindow(format!("deadband must be >= 0, got {}", self.deadband)));
        }
        Ok(())
    }

    /// Seconds between the first and last frame of a window.
    pub fn span_seconds(&self, fps: f64) -> f64 {
        (self.size - 1) as f64 / fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Original,
    Velocity,
    Events,
    EventVelocity,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] =
        [FeatureKind::Original, FeatureKind::Velocity, FeatureKind::Events, FeatureKind::EventVelocity];

    /// Roman-numeral code: i, ii, iii, iv.
    pub fn code(self) -> &'static str {
        match self {
            FeatureKind::Original => "i",
            FeatureKind::Velocity => "ii",
            FeatureKind::Events => "iii",
            FeatureKind::EventVelocity => "iv",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Original => "orig",
            FeatureKind::Velocity => "vel",
            FeatureKind::Events => "event",
            FeatureKind::EventVelocity => "evvel",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl FromStr for FeatureKind {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.code() == t || k.name() == t)
            .ok_or_else(|| TemporalError::UnknownKind(s.to_string()))
    }
}

/// A subset of feature kinds; iteration is always in i, ii, iii, iv order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct KindSet(u8);

impl KindSet {
    pub const ORIGINAL: KindSet = KindSet(1);
    pub const ALL: KindSet = KindSet(0b1111);

    pub fn empty() -> Self {
        KindSet(0)
    }

    pub fn with(self, k: FeatureKind) -> Self {
        KindSet(self.0 | k.bit())
    }

    pub fn contains(self, k: FeatureKind) -> bool {
        self.0 & k.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: KindSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = FeatureKind> {
        FeatureKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl FromIterator<FeatureKind> for KindSet {
    fn from_iter<T: IntoIterator<Item = FeatureKind>>(iter: T) -> Self {
        iter.into_iter().fold(KindSet::empty(), KindSet::with)
    }
}

impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<&str> = self.iter().map(FeatureKind::code).collect();
        f.write_str(&codes.join(","))
    }
}

impl FromStr for KindSet {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(KindSet::ALL);
        }
        let set = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(FeatureKind::from_str)
            .collect::<Result<KindSet, _>>()?;
        if set.is_empty() {
            return Err(TemporalError::EmptyKinds);
        }
        Ok(set)
    }
}

impl From<KindSet> for String {
    fn from(k: KindSet) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for KindSet {
    type Error = TemporalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnTag {
    pub channel: usize,
    pub kind: FeatureKind,
}

impl ColumnTag {
    pub fn channel_name(&self) -> &'static str {
        CHANNELS[self.channel]
    }
}

impl fmt::Display for ColumnTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.channel_name(), self.kind.name())
    }
}

/// Window-end rows by tagged feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
    tags: Vec<ColumnTag>,
    window: usize,
    kinds: KindSet,
    weighted: bool,
}

impl DesignMatrix {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn tags(&self) -> &[ColumnTag] {
        &self.tags
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Frame index of row 0.
    pub fn first_frame(&self) -> usize {
        self.window - 1
    }

    pub fn kinds(&self) -> KindSet {
        self.kinds
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// Columns of the given kinds, in their original order.
    pub fn select(&self, kinds: KindSet) -> Result<DesignMatrix, TemporalError> {
        if kinds.is_empty() {
            return Err(TemporalError::EmptyKinds);
        }
        let idx: Vec<usize> = (0..self.tags.len()).filter(|&j| kinds.contains(self.tags[j].kind)).collect();
        Ok(DesignMatrix {
            values: self.values.select(Axis(1), &idx),
            tags: idx.iter().map(|&j| self.tags[j]).collect(),
            window: self.window,
            kinds: KindSet(self.kinds.0 & kinds.0),
            weighted: self.weighted,
        })
    }

    /// Rows `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> DesignMatrix {
        DesignMatrix { values: self.values.slice(s![start..end, ..]).to_owned(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> DesignMatrix {
        DesignMatrix {
            values: Array2::zeros((0, 0)),
            tags: self.tags.clone(),
            window: self.window,
            kinds: self.kinds,
            weighted: self.weighted,
        }
    }

    /// Stacks matrices with identical columns.
    pub fn vstack(parts: &[DesignMatrix]) -> Option<DesignMatrix> {
        let first = parts.first()?;
        if parts.iter().any(|p| p.tags != first.tags) {
            return None;
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views).ok()?;
        Some(DesignMatrix { values, ..first.clone_meta() })
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scaled(&self, factors: &[f64]) -> DesignMatrix {
        assert_eq!(factors.len(), self.n_cols());
        let mut values = self.values.clone();
        for (mut col, &f) in values.axis_iter_mut(Axis(1)).zip(factors) {
            col.mapv_inplace(|v| v * f);
        }
        DesignMatrix { values, weighted: true, ..self.clone_meta() }
    }

    /// CSV with two header rows (channel, kind) and one row per window end.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TemporalError> {
        let mut out = csv::Writer::from_writer(w);
        let mut channels = vec!["channel".to_string()];
        channels.extend(self.tags.iter().map(|t| t.channel_name().to_string()));
        out.write_record(&channels)?;
        let mut kinds = vec!["frame".to_string()];
        kinds.extend(self.tags.iter().map(|t| t.kind.name().to_string()));
        out.write_record(&kinds)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![(i + self.first_frame()).to_string()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_window(series: &FeatureSeries, w: &WindowConfig) -> Result<(), TemporalError> {
    w.validate()?;
    if series.n_frames() < w.size {
        return Err(TemporalError::WindowTooLarge { window: w.size, frames: series.n_frames() });
    }
    Ok(())
}

/// Per-channel velocity at every window end, units per second.
pub fn velocity(series: &FeatureSeries, w: &WindowConfig) -> Result<Array2<f64>, TemporalError> {
    check_window(series, w)?;
    let data = series.data();
    let n = series.n_frames() - w.size + 1;
    let dt = w.span_seconds(series.fps());
    let last = data.slice(s![w.size - 1.., ..]);
    let first = data.slice(s![..n, ..]);
    Ok((&last - &first).mapv(|d| d / dt))
}

fn event_of(v: f64, deadband: f64) -> f64 {
    if v.abs() <= deadband {
        0.0
    } else {
        v.signum()
    }
}

/// Up/down/unchanged events: the sign of the velocity, 0 inside the deadband.
pub fn events(series: &FeatureSeries, w: &WindowConfig) -> Result<Array2<f64>, TemporalError> {
    Ok(velocity(series, w)?.mapv(|v| event_of(v, w.deadband)))
}

/// Events multiplied by velocity: `|v|` outside the deadband, 0 inside.
pub fn event_velocity(series: &FeatureSeries, w: &WindowConfig) -> Result<Array2<f64>, TemporalError> {
    Ok(velocity(series, w)?.mapv(|v| event_of(v, w.deadband) * v))
}

/// Concatenates the requested kinds, 12 columns each, in kind order.
pub fn build_design_matrix(series: &FeatureSeries, w: &WindowConfig, kinds: KindSet) -> Result<DesignMatrix, TemporalError> {
    if kinds.is_empty() {
        return Err(TemporalError::EmptyKinds);
    }
    check_window(series, w)?;
    let vel = velocity(series, w)?;
    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(kinds.len());
    let mut tags = Vec::with_capacity(kinds.len() * N_CHANNELS);
    for kind in kinds.iter() {
        let block = match kind {
            FeatureKind::Original => series.data().slice(s![w.size - 1.., ..]).to_owned(),
            FeatureKind::Velocity => vel.clone(),
            FeatureKind::Events => vel.mapv(|v| event_of(v, w.deadband)),
            FeatureKind::EventVelocity => vel.mapv(|v| event_of(v, w.deadband) * v),
        };
        blocks.push(block);
        tags.extend((0..N_CHANNELS).map(|channel| ColumnTag { channel, kind }));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let values = ndarray::concatenate(Axis(1), &views).expect("blocks share row count");
    Ok(DesignMatrix { values, tags, window: w.size, kinds, weighted: false })
}

/// Weight of each tagged column for `state`.
///
/// Original columns take `MIC(channel)`. Derived columns take
/// `max(MIC(channel), MIC(vel:channel))`, falling back to the channel score
/// when the table has no velocity row.
pub fn column_weights(tags: &[ColumnTag], weights: &MicMatrix, state: EmState) -> Result<Vec<f64>, TemporalError> {
    let col = state.name();
    tags.iter()
        .map(|t| {
            let name = t.channel_name();
            let base = weights.get(name, col).ok_or_else(|| TemporalError::MissingWeight(name.to_string()))?;
            Ok(match t.kind {
                FeatureKind::Original => base,
                _ => match weights.get(&format!("{VELOCITY_PREFIX}{name}"), col) {
                    Some(v) => base.max(v),
                    None => base,
                },
            })
        })
        .collect()
}

/// Scales every column by its MIC weight for `state`.
pub fn weight_features(m: &DesignMatrix, weights: &MicMatrix, state: EmState) -> Result<DesignMatrix, TemporalError> {
    let factors = column_weights(&m.tags, weights, state)?;
    Ok(m.scaled(&factors))
}
