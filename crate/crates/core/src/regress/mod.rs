//! Epsilon-SVR and the region-gated per-state predictor.

mod model;
mod svr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::regions::{Region, RegionError};
use crate::stats::StatsError;
use crate::temporal::TemporalError;

pub use model::{
    predict_state, predict_state_detailed, train_baseline_model, train_state_model, train_with_baseline, BaselineModel, ModelConfig,
    RegionRegressor, StatePrediction, StateModel, TracePredictor, MODEL_FORMAT_VERSION,
};
pub use svr::{default_gamma, predict, train_svr, Regressor};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("need at least {min} rows, got {rows}")]
    TooFewRows { rows: usize, min: usize },
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("target {value} at row {row} is outside [-1, 1]")]
    TargetOutOfRange { row: usize, value: f64 },
    #[error("non-finite input value")]
    NonFinite,
    #[error("row arity {found} does not match regressor arity {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("optimizer did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no training rows for region {0}")]
    MissingRegion(Region),
    #[error("session {session} has no trace for {state}")]
    MissingTrace { session: String, state: String },
    #[error("no training sessions")]
    NoSessions,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model document: {0}")]
    Format(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Kernel choice as configured; RBF width defaults from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Rbf { gamma: Option<f64> },
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf { gamma: None }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => f.write_str("linear"),
            KernelSpec::Rbf { gamma: None } => f.write_str("rbf"),
            KernelSpec::Rbf { gamma: Some(g) } => write!(f, "rbf:{g}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.split_once(':') {
            None if t == "rbf" => Ok(KernelSpec::Rbf { gamma: None }),
            None if t == "linear" => Ok(KernelSpec::Linear),
            Some(("rbf", g)) => g
                .parse()
                .map(|g| KernelSpec::Rbf { gamma: Some(g) })
                .map_err(|_| RegressError::InvalidParams(format!("bad gamma in {s:?}"))),
            _ => Err(RegressError::InvalidParams(format!("unknown kernel {s:?}"))),
        }
    }
}

/// Kernel with all parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub tol: f64,
    /// Optimizer step cap; `None` means ten per dual variable.
    pub max_iter: Option<usize>,
    /// Standardize columns with training mean and deviation.
    pub standardize: bool,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams { c: 1.0, epsilon: 0.05, kernel: KernelSpec::default(), tol: 1e-3, max_iter: None, standardize: true }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<(), RegressError> {
        let bad = |m: &str| Err(RegressError::InvalidParams(m.into()));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be > 0");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be >= 0");
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("tol must be > 0");
        }
        if self.max_iter == Some(0) {
            return bad("max_iter must be > 0");
        }
        if let KernelSpec::Rbf { gamma: Some(g) } = self.kernel {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be > 0");
            }
        }
        Ok(())
    }
}
