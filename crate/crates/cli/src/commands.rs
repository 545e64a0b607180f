//! One function per subcommand. Each writes its artifacts plus a
//! `manifest.txt` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ems_core::dataset::{
    align, load_annotation_trace, load_feature_series, load_session_dir, presets, write_annotation_trace,
    write_feature_series, write_session_dir, AnnotationTrace, DatasetError, EmState, FeatureSeries, Session,
    SynthManifest, CHANNELS,
};
use ems_core::eval::{ablate_regions, kfold_cv, window_sweep, EvalError};
use ems_core::facefeat::{extract_series, load_landmarks, load_reference_shape, FaceError, ReferenceShape};
use ems_core::regions::RegionError;
use ems_core::regress::{predict_state_detailed, train_state_model, RegressError, StateModel};
use ems_core::stats::{emotion_mic_matrix, mic_matrix, StatsError};
use ems_core::temporal::TemporalError;

use crate::config::{ConfigError, RunConfig};

/// A failed run, sorted by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or settings: exit 2.
    Validation(String),
    /// The numerics failed on valid input: exit 3.
    Numeric(String),
    /// Anything else, such as an unwritable output directory: exit 1.
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) | Failure::Other(m) => f.write_str(m),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Validation(e.to_string())
            }
        })*
    };
}

validation_from!(ConfigError, DatasetError, FaceError, TemporalError, RegionError);

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::ZeroVariance => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<RegressError> for Failure {
    fn from(e: RegressError) -> Self {
        match e {
            RegressError::NotConverged { .. } => Failure::Numeric(e.to_string()),
            RegressError::Stats(s) => s.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Regress(r) => r.into(),
            EvalError::Stats(s) => s.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn write(out: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Other(format!("creating {}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Other(format!("writing {}: {e}", path.display())))
}

fn output_err(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

/// Everything needed to rerun: tool version, command, inputs, resolved
/// settings. No timestamps or thread counts, so reruns match byte for byte.
fn manifest(out: &Path, command: &str, cfg: &RunConfig, inputs: &[(&str, String)], outputs: &[String]) -> Result<(), Failure> {
    let mut s = String::new();
    let _ = writeln!(s, "tool=ems");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command={command}");
    for (k, v) in inputs {
        let _ = writeln!(s, "input.{k}={v}");
    }
    for o in outputs {
        let _ = writeln!(s, "output={o}");
    }
    s.push_str(&cfg.to_text());
    write(out, "manifest.txt", s.as_bytes())
}

fn features_csv(series: &FeatureSeries) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write_feature_series(&mut buf, series).map_err(output_err)?;
    Ok(buf)
}

pub fn features(out: &Path, cfg: &RunConfig, landmarks: &Path, reference: Option<&Path>) -> Result<(), Failure> {
    let frames = load_landmarks(landmarks)?;
    let shape = match reference {
        Some(p) => load_reference_shape(p)?,
        None => ReferenceShape::builtin(),
    };
    let series = extract_series(&frames, &shape, cfg.fps)?;
    write(out, "features.csv", &features_csv(&series)?)?;
    let inputs = [
        ("landmarks", landmarks.display().to_string()),
        ("reference", reference.map_or("builtin".to_string(), |p| p.display().to_string())),
    ];
    manifest(out, "features", cfg, &inputs, &["features.csv".into()])?;
    println!("{} frames -> {}", series.n_frames(), out.join("features.csv").display());
    Ok(())
}

/// Features plus one trace per `STATE=PATH`, aligned to a common length.
fn load_pairs(features: &Path, traces: &[String], fps: f64) -> Result<(FeatureSeries, Vec<AnnotationTrace>), Failure> {
    let series = load_feature_series(features, fps)?;
    let mut loaded = Vec::new();
    for spec in traces {
        let (state, path) =
            spec.split_once('=').ok_or_else(|| Failure::Validation(format!("--trace expects STATE=PATH, got {spec:?}")))?;
        let state: EmState = state.parse()?;
        if loaded.iter().any(|t: &AnnotationTrace| t.state() == state) {
            return Err(Failure::Validation(format!("{state} given twice")));
        }
        let trace = load_annotation_trace(path, state, fps)?;
        loaded.push(align(&series, &trace)?.1);
    }
    let n = loaded.iter().map(AnnotationTrace::len).min().unwrap_or(0).min(series.n_frames());
    if n < series.n_frames() || loaded.iter().any(|t| t.len() != n) {
        log::warn!("truncating to {n} common frames");
    }
    Ok((series.truncated(n), loaded.into_iter().map(|t| t.truncated(n)).collect()))
}

fn pair_inputs<'a>(features: &Path, traces: &'a [String]) -> Vec<(&'a str, String)> {
    let mut inputs = vec![("features", features.display().to_string())];
    inputs.extend(traces.iter().map(|t| ("trace", t.clone())));
    inputs
}

pub fn mic(out: &Path, cfg: &RunConfig, features: &Path, traces: &[String]) -> Result<(), Failure> {
    let (series, loaded) = load_pairs(features, traces, cfg.fps)?;
    let p = &cfg.model.mic;
    let m = mic_matrix(&series, &loaded, p)?;
    let mut csv = Vec::new();
    m.write_csv(&mut csv).map_err(output_err)?;
    write(out, "mic.csv", &csv)?;
    let header = format!("MIC alpha={} clump={} frames={} seed={}", p.alpha, p.clump, series.n_frames(), cfg.seed);
    let report = m.ranked_report(CHANNELS.len(), &header);
    write(out, "mic_report.txt", report.as_bytes())?;
    let mut outputs = vec!["mic.csv".to_string(), "mic_report.txt".to_string()];
    if loaded.len() >= 2 {
        let e = emotion_mic_matrix(&loaded, p)?;
        let mut csv = Vec::new();
        e.write_csv(&mut csv).map_err(output_err)?;
        write(out, "state_mic.csv", &csv)?;
        outputs.push("state_mic.csv".into());
    }
    manifest(out, "mic", cfg, &pair_inputs(features, traces), &outputs)?;
    print!("{report}");
    Ok(())
}

pub fn pearson(out: &Path, cfg: &RunConfig, features: &Path, traces: &[String]) -> Result<(), Failure> {
    let (series, loaded) = load_pairs(features, traces, cfg.fps)?;
    let mut csv = String::from("feature");
    for t in &loaded {
        let _ = write!(csv, ",{}", t.state());
    }
    csv.push('\n');
    for (c, name) in CHANNELS.iter().enumerate() {
        csv.push_str(name);
        let x = series.channel(c).to_vec();
        for t in &loaded {
            match ems_core::stats::pearson(&x, t.values()) {
                Ok(r) => {
                    let _ = write!(csv, ",{r}");
                }
                Err(StatsError::ZeroVariance) => {
                    log::warn!("{name} or {} is constant; correlation undefined", t.state());
                    csv.push_str(",NaN");
                }
                Err(e) => return Err(e.into()),
            }
        }
        csv.push('\n');
    }
    write(out, "pearson.csv", csv.as_bytes())?;
    manifest(out, "pearson", cfg, &pair_inputs(features, traces), &["pearson.csv".into()])?;
    print!("{csv}");
    Ok(())
}

/// Session directories under each path: the path itself when it holds a
/// `features.csv`, else its immediate subdirectories that do, in name order.
fn session_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut dirs = Vec::new();
    for p in paths {
        if p.join("features.csv").is_file() {
            dirs.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| Failure::Validation(format!("reading {}: {e}", p.display())))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("features.csv").is_file())
            .collect();
        if found.is_empty() {
            return Err(Failure::Validation(format!("no session directories under {}", p.display())));
        }
        found.sort();
        dirs.extend(found);
    }
    Ok(dirs)
}

/// Manifest input lines as key and value.
type Inputs = Vec<(&'static str, String)>;

fn load_sessions(paths: &[PathBuf], cfg: &RunConfig) -> Result<(Vec<Session>, Inputs), Failure> {
    let dirs = session_dirs(paths)?;
    let sessions = dirs.iter().map(|d| load_session_dir(d, cfg.state, cfg.fps)).collect::<Result<Vec<_>, _>>()?;
    let inputs = dirs.iter().map(|d| ("session", d.display().to_string())).collect();
    Ok((sessions, inputs))
}

pub fn train(out: &Path, cfg: &RunConfig, data: &[PathBuf], strict: bool) -> Result<(), Failure> {
    let (sessions, inputs) = load_sessions(data, cfg)?;
    let model = train_state_model(&sessions, cfg.state, &cfg.model)?;
    for (region, r) in &model.regressors {
        if let Err(e) = r.regressor.ensure_converged() {
            if strict {
                return Err(Failure::Numeric(format!("{region} regressor: {e}")));
            }
            log::warn!("{region} regressor stopped at the iteration cap");
        }
    }
    write(out, "model.json", model.to_json().as_bytes())?;
    manifest(out, "train", cfg, &inputs, &["model.json".into()])?;
    println!(
        "{} model from {} sessions, window {}, region rows RISE/SUSTAIN/DECAY {:?}",
        cfg.state,
        sessions.len(),
        cfg.model.window.size,
        model.region_rows
    );
    Ok(())
}

pub fn predict(out: &Path, cfg: &RunConfig, model_path: &Path, features: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(model_path).map_err(|e| Failure::Validation(format!("reading {}: {e}", model_path.display())))?;
    let model = StateModel::from_json(&text)?;
    let series = load_feature_series(features, cfg.fps)?;
    let pred = predict_state_detailed(&model, &series)?;
    let mut trace = Vec::new();
    write_annotation_trace(&mut trace, &pred.trace).map_err(output_err)?;
    write(out, "prediction.csv", &trace)?;
    let mut regions = String::from("frame,region\n");
    for (i, r) in pred.regions.iter().enumerate() {
        let _ = writeln!(regions, "{i},{}", r.name());
    }
    write(out, "predicted_regions.csv", regions.as_bytes())?;
    let inputs = [("model", model_path.display().to_string()), ("features", features.display().to_string())];
    manifest(out, "predict", cfg, &inputs, &["prediction.csv".into(), "predicted_regions.csv".into()])?;
    println!("{} frames of {} -> {}", pred.trace.len(), model.state, out.join("prediction.csv").display());
    Ok(())
}

pub fn eval(out: &Path, cfg: &RunConfig, data: &[PathBuf], ablation: bool) -> Result<(), Failure> {
    let (sessions, inputs) = load_sessions(data, cfg)?;
    let ecfg = cfg.eval_config();
    let report =
        if ablation { ablate_regions(&sessions, cfg.state, &ecfg)? } else { kfold_cv(&sessions, cfg.state, cfg.k, &ecfg)? };
    write(out, "report.json", report.to_json().as_bytes())?;
    write(out, "folds.csv", report.folds_csv().as_bytes())?;
    manifest(out, "eval", cfg, &inputs, &["report.json".into(), "folds.csv".into()])?;
    if let Some(cv) = &report.cv {
        println!("{} CoERR {:.4} +/- {:.4} over {} folds", cfg.state, cv.mean, cv.std, cv.folds.len());
    }
    if let Some(a) = &report.ablation {
        println!(
            "without regions {:.4}; relative change {:+.2}%",
            a.without_regions, a.percent_delta
        );
    }
    Ok(())
}

pub fn sweep(out: &Path, cfg: &RunConfig, data: &[PathBuf]) -> Result<(), Failure> {
    let (sessions, inputs) = load_sessions(data, cfg)?;
    let report = window_sweep(&sessions, cfg.state, &cfg.windows, &cfg.eval_config())?;
    write(out, "sweep.json", report.to_json().as_bytes())?;
    write(out, "sweep.csv", report.sweep_csv().as_bytes())?;
    manifest(out, "sweep", cfg, &inputs, &["sweep.json".into(), "sweep.csv".into()])?;
    for p in &report.sweep {
        println!("window {:>4}  CoERR {:.4} +/- {:.4}", p.window, p.mean, p.std);
    }
    if let Some(w) = report.best_window() {
        println!("best window {w}");
    }
    Ok(())
}

pub fn synth(
    out: &Path,
    cfg: &RunConfig,
    manifest_path: Option<&Path>,
    preset: Option<&str>,
    sessions: Option<usize>,
    seed_flag: Option<u64>,
) -> Result<(), Failure> {
    let mut m = match (manifest_path, preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Validation(format!("reading {}: {e}", p.display())))?;
            let mut m = SynthManifest::parse(&text)?;
            if let Some(seed) = seed_flag {
                m.config.seed = seed;
            }
            m
        }
        (None, Some("region")) => presets::region_benchmark(cfg.seed, 20),
        (None, Some("window")) => presets::window_benchmark(cfg.seed, 20),
        (None, Some(other)) => return Err(Failure::Validation(format!("unknown preset {other:?} (region, window)"))),
        (None, None) => return Err(Failure::Validation("synth needs --manifest or --preset".into())),
    };
    if let Some(n) = sessions {
        if n == 0 {
            return Err(Failure::Validation("--sessions must be >= 1".into()));
        }
        m.sessions = n;
    }
    let generated = presets::generate(&m)?;
    let root = out.join("sessions");
    for s in &generated {
        write_session_dir(root.join(&s.id), s).map_err(output_err)?;
    }
    let text = m.to_text();
    write(out, "synth.txt", text.as_bytes())?;
    let mut inputs = Vec::new();
    if let Some(p) = manifest_path {
        inputs.push(("manifest", p.display().to_string()));
    }
    if let Some(p) = preset {
        inputs.push(("preset", p.to_string()));
    }
    manifest(out, "synth", cfg, &inputs, &["synth.txt".into(), "sessions/".into()])?;
    println!("{} sessions -> {}", generated.len(), root.display());
    Ok(())
}
