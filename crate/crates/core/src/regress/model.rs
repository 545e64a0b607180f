//! Per-state predictor: MIC-weighted windowed features, a region classifier,
//! and one regressor per region.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_svr, RegressError, Regressor, SvrParams};
use crate::dataset::{AnnotationTrace, EmState, FeatureSeries, Session, CHANNELS, N_CHANNELS};
use crate::regions::{
    fit_forest, label_regions, ForestParams, Region, RegionClassifier, TrainingMeta, DEFAULT_SLOPE_THRESHOLD,
};
use crate::stats::{mic_table, MicMatrix, MicParams};
use crate::temporal::{build_design_matrix, column_weights, ColumnTag, KindSet, WindowConfig, VELOCITY_PREFIX};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything that controls training of a [`StateModel`] or [`BaselineModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window: WindowConfig,
    /// Smoothing span for region labelling; `None` uses the window size.
    pub smooth: Option<usize>,
    /// Region slope threshold, units per second.
    pub slope_threshold: f64,
    pub mic: MicParams,
    /// Rows used for MIC weights (evenly strided subsample).
    pub mic_max_points: usize,
    /// Score velocity series too, so derived columns can inherit the larger
    /// of the channel and velocity MIC.
    pub velocity_weights: bool,
    pub forest: ForestParams,
    pub svr: SvrParams,
    pub classifier_kinds: KindSet,
    pub rise_kinds: KindSet,
    pub sustain_kinds: KindSet,
    pub decay_kinds: KindSet,
    /// Kinds for the single ungated regressor.
    pub baseline_kinds: KindSet,
    /// Cap on rows per classifier or regressor (evenly strided subsample).
    pub max_train_rows: usize,
}

impl ModelConfig {
    pub fn for_state(state: EmState) -> Self {
        ModelConfig { window: WindowConfig::for_state(state), ..ModelConfig::default() }
    }

    pub fn region_kinds(&self, r: Region) -> KindSet {
        match r {
            Region::Rise => self.rise_kinds,
            Region::Sustain => self.sustain_kinds,
            Region::Decay => self.decay_kinds,
        }
    }

    pub fn smooth(&self) -> usize {
        self.smooth.unwrap_or(self.window.size)
    }

    fn validate(&self) -> Result<(), RegressError> {
        self.window.validate()?;
        self.mic.validate()?;
        self.svr.validate()?;
        for k in [self.classifier_kinds, self.rise_kinds, self.sustain_kinds, self.decay_kinds, self.baseline_kinds] {
            if k.is_empty() {
                return Err(crate::temporal::TemporalError::EmptyKinds.into());
            }
        }
        if self.mic_max_points < 4 || self.max_train_rows < 2 {
            return Err(RegressError::InvalidParams("mic_max_points >= 4 and max_train_rows >= 2 required".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: WindowConfig::for_state(EmState::Concentration),
            smooth: None,
            slope_threshold: DEFAULT_SLOPE_THRESHOLD,
            mic: MicParams::default(),
            mic_max_points: 500,
            velocity_weights: true,
            forest: ForestParams::default(),
            svr: SvrParams::default(),
            classifier_kinds: KindSet::ALL,
            rise_kinds: KindSet::ALL,
            sustain_kinds: KindSet::ORIGINAL,
            decay_kinds: KindSet::ALL,
            baseline_kinds: KindSet::ALL,
            max_train_rows: 1000,
        }
    }
}

/// Anything that maps a feature series to a predicted trace.
pub trait TracePredictor {
    fn state(&self) -> EmState;
    fn window(&self) -> usize;
    fn predict_trace(&self, features: &FeatureSeries) -> Result<AnnotationTrace, RegressError>;
}

/// Column statistics and MIC weights shared by every sub-model: a full
/// design row is standardized per column, then scaled by its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Transform {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weight: Vec<f64>,
}

impl Transform {
    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j] * self.weight[j];
            }
        }
        out
    }
}

/// Training rows from every session: full design (all kinds, unweighted),
/// targets at window-end frames, and ground-truth regions.
struct Prepared {
    x: Array2<f64>,
    y: Vec<f64>,
    labels: Vec<Region>,
    tags: Vec<ColumnTag>,
}

fn prepare(sessions: &[Session], state: EmState, cfg: &ModelConfig) -> Result<Prepared, RegressError> {
    if sessions.is_empty() {
        return Err(RegressError::NoSessions);
    }
    let parts = sessions
        .par_iter()
        .map(|s| {
            let trace = s
                .trace(state)
                .ok_or_else(|| RegressError::MissingTrace { session: s.id.clone(), state: state.to_string() })?;
            let m = build_design_matrix(&s.features, &cfg.window, KindSet::ALL)?;
            let labels = label_regions(trace, cfg.smooth(), cfg.slope_threshold)?.from_frame(m.first_frame());
            let y = trace.values()[m.first_frame()..].to_vec();
            Ok((m, y, labels))
        })
        .collect::<Result<Vec<_>, RegressError>>()?;
    let tags = parts[0].0.tags().to_vec();
    let views: Vec<_> = parts.iter().map(|p| p.0.values()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("same column layout");
    let y = parts.iter().flat_map(|p| p.1.iter().copied()).collect();
    let labels = parts.iter().flat_map(|p| p.2.labels().iter().copied()).collect();
    Ok(Prepared { x, y, labels, tags })
}

/// Evenly spaced subsample of `idx` with at most `max` entries.
fn stride(idx: &[usize], max: usize) -> Vec<usize> {
    if idx.len() <= max {
        return idx.to_vec();
    }
    (0..max).map(|k| idx[k * idx.len() / max]).collect()
}

fn mic_weights(p: &Prepared, state: EmState, cfg: &ModelConfig) -> Result<MicMatrix, RegressError> {
    let all: Vec<usize> = (0..p.y.len()).collect();
    let rows = stride(&all, cfg.mic_max_points);
    let target = vec![(state.to_string(), rows.iter().map(|&i| p.y[i]).collect::<Vec<f64>>())];
    let col = |j: usize| rows.iter().map(|&i| p.x[[i, j]]).collect::<Vec<f64>>();
    let mut series: Vec<(String, Vec<f64>)> = CHANNELS.iter().enumerate().map(|(c, n)| (n.to_string(), col(c))).collect();
    if cfg.velocity_weights {
        // velocity block follows the original block in an all-kinds design
        series.extend(CHANNELS.iter().enumerate().map(|(c, n)| (format!("{VELOCITY_PREFIX}{n}"), col(N_CHANNELS + c))));
    }
    Ok(mic_table(&series, &target, &cfg.mic)?)
}

fn fit_transform(p: &Prepared, weights: &MicMatrix, state: EmState) -> Result<Transform, RegressError> {
    let n = p.x.nrows() as f64;
    let mut mean = Vec::with_capacity(p.x.ncols());
    let mut scale = Vec::with_capacity(p.x.ncols());
    for col in p.x.axis_iter(Axis(1)) {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(m);
        scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    let weight = column_weights(&p.tags, weights, state)?;
    Ok(Transform { mean, scale, weight })
}

fn kind_columns(tags: &[ColumnTag], kinds: KindSet) -> Vec<usize> {
    (0..tags.len()).filter(|&j| kinds.contains(tags[j].kind)).collect()
}

fn fit_regressor(z: &Array2<f64>, y: &[f64], rows: &[usize], cols: &[usize], svr: &SvrParams) -> Result<Regressor, RegressError> {
    let x = z.select(Axis(0), rows).select(Axis(1), cols);
    let t: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    train_svr(x.view(), &t, &SvrParams { standardize: false, ..*svr })
}

/// One region's regressor and the design columns it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRegressor {
    pub kinds: KindSet,
    pub columns: Vec<usize>,
    /// Region whose rows trained it (differs from the key after a fallback).
    pub trained_on: Region,
    pub regressor: Regressor,
}

/// Region-gated predictor for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub version: u32,
    pub state: EmState,
    pub config: ModelConfig,
    pub weights: MicMatrix,
    transform: Transform,
    pub classifier_columns: Vec<usize>,
    pub classifier: RegionClassifier,
    pub regressors: BTreeMap<Region, RegionRegressor>,
    /// Regions with too few training rows, served by a fallback regressor.
    pub fallbacks: Vec<Region>,
    pub region_rows: [usize; 3],
}

/// Trains the gated model: MIC weights from these sessions only, regions
/// labelled from the traces, a forest over `classifier_kinds`, and one SVR
/// per region over that region's kinds.
pub fn train_state_model(sessions: &[Session], state: EmState, cfg: &ModelConfig) -> Result<StateModel, RegressError> {
    cfg.validate()?;
    let p = prepare(sessions, state, cfg)?;
    let weights = mic_weights(&p, state, cfg)?;
    let transform = fit_transform(&p, &weights, state)?;
    gated_from(&p, state, cfg, weights, transform)
}

fn gated_from(
    p: &Prepared,
    state: EmState,
    cfg: &ModelConfig,
    weights: MicMatrix,
    transform: Transform,
) -> Result<StateModel, RegressError> {
    let z = transform.apply(p.x.view());

    let min_rows = cfg.forest.min_leaf.max(2);
    let mut region_rows = [0usize; 3];
    for r in &p.labels {
        region_rows[r.index()] += 1;
    }
    let present: Vec<Region> = Region::ALL.into_iter().filter(|r| region_rows[r.index()] >= min_rows).collect();
    let missing: Vec<Region> = Region::ALL.into_iter().filter(|r| !present.contains(r)).collect();

    let classifier_columns = kind_columns(&p.tags, cfg.classifier_kinds);
    let train_classifier = || -> Result<RegionClassifier, RegressError> {
        let idx: Vec<usize> = (0..p.labels.len()).filter(|&i| present.contains(&p.labels[i])).collect();
        let rows = stride(&idx, cfg.max_train_rows);
        let x = z.select(Axis(0), &rows).select(Axis(1), &classifier_columns);
        let labels: Vec<Region> = rows.iter().map(|&i| p.labels[i]).collect();
        let meta = TrainingMeta {
            window: Some(cfg.window.size),
            kinds: cfg.classifier_kinds.to_string(),
            seed: cfg.forest.seed,
            rows: rows.len(),
        };
        Ok(fit_forest(x.view(), &labels, &cfg.forest, meta)?)
    };
    let train_regressors = || -> Result<Vec<(Region, RegionRegressor)>, RegressError> {
        present
            .par_iter()
            .map(|&r| {
                let idx: Vec<usize> = (0..p.labels.len()).filter(|&i| p.labels[i] == r).collect();
                let rows = stride(&idx, cfg.max_train_rows);
                let kinds = cfg.region_kinds(r);
                let columns = kind_columns(&p.tags, kinds);
                let regressor = fit_regressor(&z, &p.y, &rows, &columns, &cfg.svr)?;
                Ok((r, RegionRegressor { kinds, columns, trained_on: r, regressor }))
            })
            .collect()
    };
    let (classifier, trained) = rayon::join(train_classifier, train_regressors);
    let classifier = classifier?;
    let mut regressors: BTreeMap<Region, RegionRegressor> = trained?.into_iter().collect();

    for &r in &missing {
        let source = [Region::Sustain, Region::Rise, Region::Decay]
            .into_iter()
            .find(|s| regressors.contains_key(s))
            .ok_or(RegressError::MissingRegion(r))?;
        log::warn!(
            "{state}: region {r} has {} training rows; using the {source} regressor in its place",
            region_rows[r.index()]
        );
        let fallback = regressors[&source].clone();
        regressors.insert(r, fallback);
    }

    Ok(StateModel {
        version: MODEL_FORMAT_VERSION,
        state,
        config: cfg.clone(),
        weights,
        transform,
        classifier_columns,
        classifier,
        regressors,
        fallbacks: missing,
        region_rows,
    })
}

/// Per-frame output of the gated model.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePrediction {
    pub trace: AnnotationTrace,
    /// Region routed to at each frame (first `window - 1` frames back-filled).
    pub regions: Vec<Region>,
    /// Vote fractions at each window end.
    pub probabilities: Vec<[f64; 3]>,
    /// Unclipped regressor output at each window end.
    pub raw: Vec<f64>,
}

fn backfill<T: Copy>(window: usize, values: &[T]) -> Vec<T> {
    let mut out = vec![values[0]; window - 1];
    out.extend_from_slice(values);
    out
}

/// Runs the gated model and returns the routing details alongside the trace.
pub fn predict_state_detailed(model: &StateModel, features: &FeatureSeries) -> Result<StatePrediction, RegressError> {
    let w = &model.config.window;
    let z = model.transformed_design(features)?;
    let xc = z.select(Axis(1), &model.classifier_columns);
    let per_region: BTreeMap<Region, Array2<f64>> =
        model.regressors.iter().map(|(r, rr)| (*r, z.select(Axis(1), &rr.columns))).collect();
    let rows: Vec<(Region, [f64; 3], f64)> = (0..z.nrows())
        .into_par_iter()
        .map(|i| {
            let (region, probs) = model.classifier.classify(xc.row(i))?;
            let raw = model.regressors[&region].regressor.predict_raw(per_region[&region].row(i))?;
            Ok((region, probs, raw))
        })
        .collect::<Result<_, RegressError>>()?;
    let raw: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let clipped: Vec<f64> = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let regions: Vec<Region> = rows.iter().map(|r| r.0).collect();
    let trace = AnnotationTrace::new(model.state, backfill(w.size, &clipped), features.fps())?;
    Ok(StatePrediction {
        trace,
        regions: backfill(w.size, &regions),
        probabilities: rows.iter().map(|r| r.1).collect(),
        raw,
    })
}

/// Predicted trace, one value per input frame.
pub fn predict_state(model: &StateModel, features: &FeatureSeries) -> Result<AnnotationTrace, RegressError> {
    Ok(predict_state_detailed(model, features)?.trace)
}

impl StateModel {
    /// All-kinds design matrix of `features`, standardized and weighted as
    /// in training; regressor and classifier columns index into it.
    pub fn transformed_design(&self, features: &FeatureSeries) -> Result<Array2<f64>, RegressError> {
        let m = build_design_matrix(features, &self.config.window, KindSet::ALL)?;
        Ok(self.transform.apply(m.values()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegressError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| RegressError::Format(e.to_string()))?;
        let version = v.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(RegressError::UnsupportedVersion(version));
        }
        serde_json::from_value(v).map_err(|e| RegressError::Format(e.to_string()))
    }
}

impl TracePredictor for StateModel {
    fn state(&self) -> EmState {
        self.state
    }

    fn window(&self) -> usize {
        self.config.window.size
    }

    fn predict_trace(&self, features: &FeatureSeries) -> Result<AnnotationTrace, RegressError> {
        predict_state(self, features)
    }
}

/// A single ungated regressor over `baseline_kinds`, weighted and
/// standardized exactly like the gated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub version: u32,
    pub state: EmState,
    pub config: ModelConfig,
    pub weights: MicMatrix,
    transform: Transform,
    pub columns: Vec<usize>,
    pub regressor: Regressor,
}

pub fn train_baseline_model(sessions: &[Session], state: EmState, cfg: &ModelConfig) -> Result<BaselineModel, RegressError> {
    cfg.validate()?;
    let p = prepare(sessions, state, cfg)?;
    let weights = mic_weights(&p, state, cfg)?;
    let transform = fit_transform(&p, &weights, state)?;
    baseline_from(&p, state, cfg, weights, transform)
}

fn baseline_from(
    p: &Prepared,
    state: EmState,
    cfg: &ModelConfig,
    weights: MicMatrix,
    transform: Transform,
) -> Result<BaselineModel, RegressError> {
    let z = transform.apply(p.x.view());
    let columns = kind_columns(&p.tags, cfg.baseline_kinds);
    let all: Vec<usize> = (0..p.y.len()).collect();
    let rows = stride(&all, cfg.max_train_rows);
    let regressor = fit_regressor(&z, &p.y, &rows, &columns, &cfg.svr)?;
    Ok(BaselineModel { version: MODEL_FORMAT_VERSION, state, config: cfg.clone(), weights, transform, columns, regressor })
}

/// Trains the gated model and the ungated baseline on the same weights and
/// column statistics.
pub fn train_with_baseline(
    sessions: &[Session],
    state: EmState,
    cfg: &ModelConfig,
) -> Result<(StateModel, BaselineModel), RegressError> {
    cfg.validate()?;
    let p = prepare(sessions, state, cfg)?;
    let weights = mic_weights(&p, state, cfg)?;
    let transform = fit_transform(&p, &weights, state)?;
    let (gated, baseline) = rayon::join(
        || gated_from(&p, state, cfg, weights.clone(), transform.clone()),
        || baseline_from(&p, state, cfg, weights.clone(), transform.clone()),
    );
    Ok((gated?, baseline?))
}

impl TracePredictor for BaselineModel {
    fn state(&self) -> EmState {
        self.state
    }

    fn window(&self) -> usize {
        self.config.window.size
    }

    fn predict_trace(&self, features: &FeatureSeries) -> Result<AnnotationTrace, RegressError> {
        let w = &self.config.window;
        let m = build_design_matrix(features, w, KindSet::ALL)?;
        let z = self.transform.apply(m.values()).select(Axis(1), &self.columns);
        let preds = self.regressor.predict_rows(z.view())?;
        Ok(AnnotationTrace::new(self.state, backfill(w.size, &preds), features.fps())?)
    }
}
