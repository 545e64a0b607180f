//! CoERR, session-level k-fold cross-validation, the with/without-region
//! ablation, and the window-size sweep.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationTrace, EmState, Session};
use crate::regress::{train_state_model, train_with_baseline, ModelConfig, RegressError, TracePredictor};
use crate::stats::{pearson, StatsError};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SWEEP: [usize; 7] = [5, 10, 20, 40, 60, 80, 100];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{sessions} sessions cannot form {k} folds")]
    TooFewSessions { sessions: usize, k: usize },
    #[error("invalid evaluation setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("report document: {0}")]
    Format(String),
}

/// Pearson correlation between a predicted and a ground-truth trace.
pub fn coerr(pred: &AnnotationTrace, truth: &AnnotationTrace) -> Result<f64, EvalError> {
    Ok(pearson(pred.values(), truth.values())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl EvalConfig {
    pub fn new(state: EmState) -> Self {
        EvalConfig { k: 10, seed: 0, model: ModelConfig::for_state(state) }
    }
}

/// How held-out data was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldUnit {
    /// Whole sessions, shuffled by seed and dealt round-robin.
    Session,
    /// Contiguous frame blocks within each session, with `gap` frames
    /// dropped from training on each side of the test block.
    Block { gap: usize },
}

/// Session indices per test fold: a seeded shuffle dealt round-robin.
pub fn assign_folds(n_sessions: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    if n_sessions < k {
        return Err(EvalError::TooFewSessions { sessions: n_sessions, k });
    }
    let mut order: Vec<usize> = (0..n_sessions).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, s) in order.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

struct Split {
    train: Vec<Session>,
    test: Vec<Session>,
}

fn session_splits(sessions: &[Session], k: usize, seed: u64) -> Result<Vec<Split>, EvalError> {
    let folds = assign_folds(sessions.len(), k, seed)?;
    Ok(folds
        .iter()
        .map(|test_idx| Split {
            train: (0..sessions.len()).filter(|i| !test_idx.contains(i)).map(|i| sessions[i].clone()).collect(),
            test: test_idx.iter().map(|&i| sessions[i].clone()).collect(),
        })
        .collect())
}

fn block_splits(sessions: &[Session], k: usize, gap: usize, min_len: usize) -> Result<Vec<Split>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let too_few = || EvalError::TooFewSessions { sessions: sessions.len(), k };
    if sessions.is_empty() {
        return Err(too_few());
    }
    let mut splits: Vec<Split> = (0..k).map(|_| Split { train: Vec::new(), test: Vec::new() }).collect();
    for s in sessions {
        let n = s.n_frames();
        let bounds: Vec<usize> = (0..=k).map(|b| b * n / k).collect();
        for f in 0..k {
            let (lo, hi) = (bounds[f], bounds[f + 1]);
            if hi - lo < min_len {
                return Err(too_few());
            }
            splits[f].test.push(s.frames(format!("{}#test{f}", s.id), lo, hi));
            let before = lo.saturating_sub(gap);
            if before >= min_len {
                splits[f].train.push(s.frames(format!("{}#pre{f}", s.id), 0, before));
            }
            let after = (hi + gap).min(n);
            if n - after >= min_len {
                splits[f].train.push(s.frames(format!("{}#post{f}", s.id), after, n));
            }
        }
    }
    if splits.iter().any(|s| s.train.is_empty()) {
        return Err(too_few());
    }
    Ok(splits)
}

fn make_splits(sessions: &[Session], cfg: &EvalConfig) -> Result<(FoldUnit, Vec<Split>), EvalError> {
    if sessions.len() >= cfg.k {
        Ok((FoldUnit::Session, session_splits(sessions, cfg.k, cfg.seed)?))
    } else {
        let w = cfg.model.window.size;
        let min_len = w.max(cfg.model.smooth()).max(2);
        Ok((FoldUnit::Block { gap: w }, block_splits(sessions, cfg.k, w, min_len)?))
    }
}

/// CoERR on the concatenation of every held-out session in a fold. A
/// constant prediction scores 0 and is flagged.
fn held_out_coerr(model: &dyn TracePredictor, test: &[Session]) -> Result<(f64, bool, usize), EvalError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in test {
        let t = s.trace(model.state()).ok_or_else(|| RegressError::MissingTrace {
            session: s.id.clone(),
            state: model.state().to_string(),
        })?;
        pred.extend_from_slice(model.predict_trace(&s.features)?.values());
        truth.extend_from_slice(t.values());
    }
    match pearson(&pred, &truth) {
        Ok(r) => Ok((r, false, pred.len())),
        Err(StatsError::ZeroVariance) => {
            log::warn!("held-out fold has a constant prediction or truth; scoring CoERR 0");
            Ok((0.0, true, pred.len()))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_sessions: Vec<String>,
    pub test_frames: usize,
    pub coerr: f64,
    /// Ungated single-regressor CoERR, when the ablation ran.
    pub coerr_without_regions: Option<f64>,
    /// A prediction or truth was constant and the score was set to 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub state: EmState,
    pub window: usize,
    pub k: usize,
    pub unit: FoldUnit,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub with_regions: f64,
    pub without_regions: f64,
    /// `100 * (with - without) / without`, a relative change in percent.
    pub percent_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub window: usize,
    pub mean: f64,
    pub std: f64,
}

/// Reproducibility facts that do not vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub crate_version: String,
    pub sessions: usize,
    pub folds_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub state: EmState,
    pub config: EvalConfig,
    pub cv: Option<CvSummary>,
    pub ablation: Option<Ablation>,
    pub sweep: Vec<SweepPoint>,
    pub run: RunInfo,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

fn cross_validate(sessions: &[Session], state: EmState, cfg: &EvalConfig, baseline: bool) -> Result<CvSummary, EvalError> {
    let (unit, splits) = make_splits(sessions, cfg)?;
    let folds = splits
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            let (model, base) = if baseline {
                let (m, b) = train_with_baseline(&split.train, state, &cfg.model)?;
                (m, Some(b))
            } else {
                (train_state_model(&split.train, state, &cfg.model)?, None)
            };
            let (coerr, degenerate, test_frames) = held_out_coerr(&model, &split.test)?;
            let (without, base_degenerate) = match &base {
                Some(b) => {
                    let (r, d, _) = held_out_coerr(b, &split.test)?;
                    (Some(r), d)
                }
                None => (None, false),
            };
            Ok(FoldResult {
                fold,
                test_sessions: split.test.iter().map(|s| s.id.clone()).collect(),
                test_frames,
                coerr,
                coerr_without_regions: without,
                degenerate: degenerate || base_degenerate,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let scores: Vec<f64> = folds.iter().map(|f| f.coerr).collect();
    let (mean, std) = mean_std(&scores);
    Ok(CvSummary { state, window: cfg.model.window.size, k: cfg.k, unit, folds, mean, std })
}

fn run_info(sessions: &[Session], folds: usize) -> RunInfo {
    RunInfo { crate_version: env!("CARGO_PKG_VERSION").to_string(), sessions: sessions.len(), folds_evaluated: folds }
}

/// k-fold cross-validation of the gated model.
pub fn kfold_cv(sessions: &[Session], state: EmState, k: usize, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let cfg = EvalConfig { k, ..cfg.clone() };
    let cv = cross_validate(sessions, state, &cfg, false)?;
    Ok(EvalReport {
        version: REPORT_FORMAT_VERSION,
        state,
        run: run_info(sessions, cv.folds.len()),
        config: cfg,
        cv: Some(cv),
        ablation: None,
        sweep: Vec::new(),
    })
}

/// Cross-validates the gated model and an ungated single regressor on the
/// same folds.
pub fn ablate_regions(sessions: &[Session], state: EmState, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let cv = cross_validate(sessions, state, cfg, true)?;
    let without: Vec<f64> = cv.folds.iter().filter_map(|f| f.coerr_without_regions).collect();
    let (without, _) = mean_std(&without);
    let ablation = Ablation {
        with_regions: cv.mean,
        without_regions: without,
        percent_delta: 100.0 * (cv.mean - without) / without,
    };
    Ok(EvalReport {
        version: REPORT_FORMAT_VERSION,
        state,
        run: run_info(sessions, cv.folds.len()),
        config: cfg.clone(),
        cv: Some(cv),
        ablation: Some(ablation),
        sweep: Vec::new(),
    })
}

/// Mean cross-validated CoERR at each window size.
pub fn window_sweep(sessions: &[Session], state: EmState, windows: &[usize], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::InvalidConfig("no window sizes".into()));
    }
    let shortest = sessions.iter().map(Session::n_frames).min().unwrap_or(0);
    if let Some(w) = windows.iter().find(|&&w| w < 2 || w > shortest) {
        return Err(EvalError::InvalidConfig(format!("window {w} outside [2, {shortest}]")));
    }
    let results = windows
        .par_iter()
        .map(|&w| {
            let mut c = cfg.clone();
            c.model.window.size = w;
            cross_validate(sessions, state, &c, false)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let sweep = results.iter().map(|cv| SweepPoint { window: cv.window, mean: cv.mean, std: cv.std }).collect();
    let folds = results.iter().map(|cv| cv.folds.len()).sum();
    Ok(EvalReport {
        version: REPORT_FORMAT_VERSION,
        state,
        run: run_info(sessions, folds),
        config: cfg.clone(),
        cv: None,
        ablation: None,
        sweep,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        if r.version != REPORT_FORMAT_VERSION {
            return Err(EvalError::Format(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }

    /// Sweep window with the highest mean CoERR (earliest on ties).
    pub fn best_window(&self) -> Option<usize> {
        self.sweep.iter().fold(None::<&SweepPoint>, |b, p| match b {
            Some(b) if b.mean >= p.mean => Some(b),
            _ => Some(p),
        })
        .map(|p| p.window)
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("state,window,fold,test_sessions,test_frames,coerr,coerr_without_regions,degenerate\n");
        if let Some(cv) = &self.cv {
            for f in &cv.folds {
                let without = f.coerr_without_regions.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    cv.state,
                    cv.window,
                    f.fold,
                    f.test_sessions.join(";"),
                    f.test_frames,
                    f.coerr,
                    without,
                    f.degenerate
                );
            }
        }
        s
    }

    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("state,window,mean_coerr,std_coerr\n");
        for p in &self.sweep {
            let _ = writeln!(s, "{},{},{},{}", self.state, p.window, p.mean, p.std);
        }
        s
    }
}
