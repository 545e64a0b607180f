//! Run configuration: a key=value file, overridden by `--set` pairs and
//! dedicated flags, resolved into the library's parameter structs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ems_core::dataset::EmState;
use ems_core::eval::{EvalConfig, DEFAULT_SWEEP};
use ems_core::regress::{KernelSpec, ModelConfig};
use ems_core::temporal::KindSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
}

/// Every key the config file and `--set` accept.
pub const KEYS: &[&str] = &[
    "state",
    "seed",
    "k",
    "fps",
    "window",
    "deadband",
    "smooth",
    "slope_threshold",
    "mic.alpha",
    "mic.clump",
    "mic.max_points",
    "velocity_weights",
    "forest.trees",
    "forest.depth",
    "forest.min_leaf",
    "forest.features",
    "forest.bootstrap",
    "svr.c",
    "svr.epsilon",
    "svr.kernel",
    "svr.tol",
    "svr.max_iter",
    "kinds.classifier",
    "kinds.rise",
    "kinds.sustain",
    "kinds.decay",
    "kinds.baseline",
    "max_train_rows",
    "sweep.windows",
];

/// Raw overrides in the order they were given; later entries win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    values: BTreeMap<String, String>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.into().trim().to_string());
        Ok(())
    }

    /// `key=value` lines; blank lines and `#` comments are skipped.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        self.merge_text(&text)
    }

    /// One `KEY=VALUE` argument.
    pub fn merge_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: pair.to_string() })?;
        self.set(k, v)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub state: EmState,
    pub seed: u64,
    pub k: usize,
    pub fps: f64,
    pub model: ModelConfig,
    pub windows: Vec<usize>,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.into() }
}

/// `none` or a number.
fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.eq_ignore_ascii_case("none") || value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self, ConfigError> {
        let state = match o.get("state") {
            Some(v) => parse::<EmState>("state", v)?,
            None => EmState::Concentration,
        };
        let mut model = ModelConfig::for_state(state);
        let mut cfg = RunConfig { state, seed: 0, k: 10, fps: 25.0, model: model.clone(), windows: DEFAULT_SWEEP.to_vec() };
        for (key, value) in &o.values {
            let (key, value) = (key.as_str(), value.as_str());
            match key {
                "state" => {}
                "seed" => cfg.seed = parse(key, value)?,
                "k" => cfg.k = parse(key, value)?,
                "fps" => cfg.fps = parse(key, value)?,
                "window" => model.window.size = parse(key, value)?,
                "deadband" => model.window.deadband = parse(key, value)?,
                "smooth" => model.smooth = parse_optional(key, value)?,
                "slope_threshold" => model.slope_threshold = parse(key, value)?,
                "mic.alpha" => model.mic.alpha = parse(key, value)?,
                "mic.clump" => model.mic.clump = parse(key, value)?,
                "mic.max_points" => model.mic_max_points = parse(key, value)?,
                "velocity_weights" => model.velocity_weights = parse(key, value)?,
                "forest.trees" => model.forest.n_trees = parse(key, value)?,
                "forest.depth" => model.forest.max_depth = parse(key, value)?,
                "forest.min_leaf" => model.forest.min_leaf = parse(key, value)?,
                "forest.features" => model.forest.features_per_split = parse_optional(key, value)?,
                "forest.bootstrap" => model.forest.bootstrap = parse(key, value)?,
                "svr.c" => model.svr.c = parse(key, value)?,
                "svr.epsilon" => model.svr.epsilon = parse(key, value)?,
                "svr.kernel" => model.svr.kernel = parse::<KernelSpec>(key, value)?,
                "svr.tol" => model.svr.tol = parse(key, value)?,
                "svr.max_iter" => model.svr.max_iter = parse_optional(key, value)?,
                "kinds.classifier" => model.classifier_kinds = parse::<KindSet>(key, value)?,
                "kinds.rise" => model.rise_kinds = parse::<KindSet>(key, value)?,
                "kinds.sustain" => model.sustain_kinds = parse::<KindSet>(key, value)?,
                "kinds.decay" => model.decay_kinds = parse::<KindSet>(key, value)?,
                "kinds.baseline" => model.baseline_kinds = parse::<KindSet>(key, value)?,
                "max_train_rows" => model.max_train_rows = parse(key, value)?,
                "sweep.windows" => {
                    cfg.windows = value.split(',').map(|w| parse::<usize>(key, w.trim())).collect::<Result<_, _>>()?;
                    if cfg.windows.is_empty() {
                        return Err(bad(key, value, "empty list"));
                    }
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }
        if !(cfg.fps.is_finite() && cfg.fps > 0.0) {
            return Err(bad("fps", &cfg.fps.to_string(), "must be positive"));
        }
        if cfg.k < 2 {
            return Err(bad("k", &cfg.k.to_string(), "must be >= 2"));
        }
        if model.max_train_rows < 10 {
            return Err(bad("max_train_rows", &model.max_train_rows.to_string(), "must be >= 10"));
        }
        if model.mic_max_points < 4 {
            return Err(bad("mic.max_points", &model.mic_max_points.to_string(), "must be >= 4"));
        }
        model.forest.seed = cfg.seed;
        cfg.model = model;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { k: self.k, seed: self.seed, model: self.model.clone() }
    }

    /// Canonical `key=value` rendering of every setting, in [`KEYS`] order.
    /// Feeding it back through [`Overrides::merge_text`] reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let windows: Vec<String> = self.windows.iter().map(usize::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("state", self.state.to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("fps", self.fps.to_string()),
            ("window", m.window.size.to_string()),
            ("deadband", m.window.deadband.to_string()),
            ("smooth", opt(m.smooth)),
            ("slope_threshold", m.slope_threshold.to_string()),
            ("mic.alpha", m.mic.alpha.to_string()),
            ("mic.clump", m.mic.clump.to_string()),
            ("mic.max_points", m.mic_max_points.to_string()),
            ("velocity_weights", m.velocity_weights.to_string()),
            ("forest.trees", m.forest.n_trees.to_string()),
            ("forest.depth", m.forest.max_depth.to_string()),
            ("forest.min_leaf", m.forest.min_leaf.to_string()),
            ("forest.features", opt(m.forest.features_per_split)),
            ("forest.bootstrap", m.forest.bootstrap.to_string()),
            ("svr.c", m.svr.c.to_string()),
            ("svr.epsilon", m.svr.epsilon.to_string()),
            ("svr.kernel", m.svr.kernel.to_string()),
            ("svr.tol", m.svr.tol.to_string()),
            ("svr.max_iter", opt(m.svr.max_iter)),
            ("kinds.classifier", m.classifier_kinds.to_string()),
            ("kinds.rise", m.rise_kinds.to_string()),
            ("kinds.sustain", m.sustain_kinds.to_string()),
            ("kinds.decay", m.decay_kinds.to_string()),
            ("kinds.baseline", m.baseline_kinds.to_string()),
            ("max_train_rows", m.max_train_rows.to_string()),
            ("sweep.windows", windows.join(",")),
        ];
        debug_assert_eq!(pairs.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_state() {
        let mut o = Overrides::default();
        o.set("state", "agreement").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.state, EmState::Agreement);
        assert_eq!(c.model.window.size, 20);
        assert_eq!(c.windows, DEFAULT_SWEEP.to_vec());
    }

    #[test]
    fn later_values_win_and_seed_reaches_forest() {
        let mut o = Overrides::default();
        o.merge_text("# base\nwindow = 30\nseed=4\n\nsvr.kernel=rbf:0.5\n").unwrap();
        o.merge_pair("window=12").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.model.window.size, 12);
        assert_eq!(c.model.forest.seed, 4);
        assert_eq!(c.model.svr.kernel, KernelSpec::Rbf { gamma: Some(0.5) });
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut o = Overrides::default();
        assert!(matches!(o.merge_text("windw=3"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(o.merge_text("window"), Err(ConfigError::Syntax { line: 1, .. })));
        o.set("k", "ten").unwrap();
        assert!(matches!(RunConfig::resolve(&o), Err(ConfigError::BadValue { .. })));
        let mut o = Overrides::default();
        o.set("k", "1").unwrap();
        assert!(RunConfig::resolve(&o).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut o = Overrides::default();
        o.merge_text("state=Interest\nsmooth=15\nforest.features=3\nkinds.sustain=i,ii\nsweep.windows=10,20\nsvr.max_iter=500")
            .unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        let mut again = Overrides::default();
        again.merge_text(&c.to_text()).unwrap();
        assert_eq!(RunConfig::resolve(&again).unwrap(), c);
    }
}
