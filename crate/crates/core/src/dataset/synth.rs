//! Synthetic sessions with a planted latent rating, planted region labels and
//! channels coupled to the rating through known functions.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{channel_index, AnnotationTrace, DatasetError, EmState, FeatureSeries, Session, CHANNELS, N_CHANNELS};
use crate::regions::{Region, RegionLabels};

/// How a channel depends on the latent rating `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coupling {
    /// `level + noise`
    Independent { level: f64 },
    /// `gain * r + offset`
    Linear { gain: f64, offset: f64 },
    /// `gain * r^2 + offset`
    Quadratic { gain: f64, offset: f64 },
    /// `gain * sin(2 pi cycles r)`
    Sinusoidal { gain: f64, cycles: f64 },
    /// `gain * (running sum of r) / fps`: the rating shows up in the
    /// channel's slope rather than its level.
    Integrator { gain: f64 },
    /// `gain * r` seen through a first-order lag of `frames` frames: the
    /// channel trails the rating on ramps and catches up on plateaus.
    Lagged { gain: f64, frames: f64 },
    /// `gain * sign(r[t] - r[t-1])`: marks which way the rating is moving
    /// while saying nothing about its level.
    Direction { gain: f64 },
    /// `gain * r` inside planned `region` segments and 0 elsewhere.
    Phased { gain: f64, region: Region },
}

impl Coupling {
    fn apply(self, r: f64) -> f64 {
        match self {
            Coupling::Independent { level } => level,
            Coupling::Linear { gain, offset } => gain * r + offset,
            Coupling::Quadratic { gain, offset } => gain * r * r + offset,
            Coupling::Sinusoidal { gain, cycles } => gain * (2.0 * std::f64::consts::PI * cycles * r).sin(),
            Coupling::Integrator { .. } | Coupling::Lagged { .. } | Coupling::Direction { .. } | Coupling::Phased { .. } => unreachable!("stateful couplings run over the whole series"),
        }
    }

    fn to_manifest(self) -> String {
        match self {
            Coupling::Independent { level } => format!("independent:{level}"),
            Coupling::Linear { gain, offset } => format!("linear:{gain}:{offset}"),
            Coupling::Quadratic { gain, offset } => format!("quadratic:{gain}:{offset}"),
            Coupling::Sinusoidal { gain, cycles } => format!("sinusoidal:{gain}:{cycles}"),
            Coupling::Integrator { gain } => format!("integrator:{gain}"),
            Coupling::Lagged { gain, frames } => format!("lagged:{gain}:{frames}"),
            Coupling::Direction { gain } => format!("direction:{gain}"),
            Coupling::Phased { gain, region } => format!("phased:{gain}:{}", region.name()),
        }
    }
}

impl FromStr for Coupling {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidConfig(format!("bad coupling {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, default: f64| -> Result<f64, DatasetError> {
            match parts.get(i) {
                Some(p) => p.trim().parse::<f64>().map_err(|_| bad()),
                None => Ok(default),
            }
        };
        if parts.len() > 3 {
            return Err(bad());
        }
        Ok(match parts[0].to_ascii_lowercase().as_str() {
            "independent" => Coupling::Independent { level: num(1, 0.0)? },
            "linear" => Coupling::Linear { gain: num(1, 1.0)?, offset: num(2, 0.0)? },
            "quadratic" => Coupling::Quadratic { gain: num(1, 1.0)?, offset: num(2, 0.0)? },
            "sinusoidal" => Coupling::Sinusoidal { gain: num(1, 1.0)?, cycles: num(2, 1.0)? },
            "integrator" => Coupling::Integrator { gain: num(1, 1.0)? },
            "lagged" => Coupling::Lagged { gain: num(1, 1.0)?, frames: num(2, 10.0)? },
            "direction" => Coupling::Direction { gain: num(1, 1.0)? },
            "phased" => Coupling::Phased {
                gain: num(1, 1.0)?,
                region: parts.get(2).ok_or_else(bad)?.parse::<Region>().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        })
    }
}

/// One planned stretch of the latent rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: Region,
    pub frames: usize,
    /// Rating change per frame.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanSpec {
    Explicit(Vec<Segment>),
    /// Segments drawn from the seed: alternating SUSTAIN and RISE/DECAY,
    /// lengths uniform in `min_len..=max_len`, ramps at `±slope` per frame.
    Random { min_len: usize, max_len: usize, slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub fps: f64,
    pub state: EmState,
    /// Latent rating at frame 0.
    pub start: f64,
    pub plan: PlanSpec,
    pub couplings: [Coupling; N_CHANNELS],
    /// Gaussian noise added to every channel.
    pub noise: f64,
    /// Gaussian noise added to the emitted rating.
    pub trace_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 300,
            fps: 25.0,
            state: EmState::Concentration,
            start: -0.5,
            plan: PlanSpec::Explicit(vec![
                Segment { kind: Region::Rise, frames: 100, slope: 0.01 },
                Segment { kind: Region::Sustain, frames: 100, slope: 0.0 },
                Segment { kind: Region::Decay, frames: 100, slope: -0.01 },
            ]),
            couplings: [Coupling::Independent { level: 0.0 }; N_CHANNELS],
            noise: 0.0,
            trace_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_frames < 100 {
            return Err(DatasetError::InvalidConfig(format!("n_frames must be >= 100, got {}", self.n_frames)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(DatasetError::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.noise >= 0.0 && self.trace_noise >= 0.0) {
            return Err(DatasetError::InvalidConfig("noise must be >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.start) {
            return Err(DatasetError::InvalidConfig(format!("start must be in [-1, 1], got {}", self.start)));
        }
        for c in &self.couplings {
            if let Coupling::Lagged { frames, .. } = c {
                if !(frames.is_finite() && *frames >= 1.0) {
                    return Err(DatasetError::InvalidConfig(format!("lag must be >= 1 frame, got {frames}")));
                }
            }
        }
        match &self.plan {
            PlanSpec::Explicit(segments) => {
                let total: usize = segments.iter().map(|s| s.frames).sum();
                if total != self.n_frames {
                    return Err(DatasetError::InvalidPlan(format!(
                        "segment durations sum to {total}, expected {}",
                        self.n_frames
                    )));
                }
            }
            PlanSpec::Random { min_len, max_len, slope } => {
                if *min_len == 0 || min_len > max_len || !(slope.is_finite() && *slope > 0.0) {
                    return Err(DatasetError::InvalidPlan(format!(
                        "random plan needs 0 < min_len <= max_len and slope > 0 (got {min_len}, {max_len}, {slope})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws a random segment plan covering exactly `n_frames`, steering ramps
/// away from the rating bounds.
pub fn random_plan<R: Rng>(
    n_frames: usize,
    start: f64,
    min_len: usize,
    max_len: usize,
    slope: f64,
    rng: &mut R,
) -> Vec<Segment> {
    let mut plan = Vec::new();
    let mut level = start;
    let mut remaining = n_frames;
    let mut prev: Option<Region> = None;
    while remaining > 0 {
        let len = rng.gen_range(min_len..=max_len).min(remaining);
        let kind = match prev {
            Some(Region::Rise) | Some(Region::Decay) => Region::Sustain,
            _ => {
                let up_ok = level + slope * len as f64 <= 0.95;
                let down_ok = level - slope * len as f64 >= -0.95;
                match (up_ok, down_ok) {
                    (true, true) => {
                        if rng.gen_bool(0.5) {
                            Region::Rise
                        } else {
                            Region::Decay
                        }
                    }
                    (true, false) => Region::Rise,
                    (false, true) => Region::Decay,
                    (false, false) => Region::Sustain,
                }
            }
        };
        let seg_slope = match kind {
            Region::Rise => slope,
            Region::Decay => -slope,
            Region::Sustain => 0.0,
        };
        level += seg_slope * len as f64;
        plan.push(Segment { kind, frames: len, slope: seg_slope });
        prev = Some(kind);
        remaining -= len;
    }
    plan
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("sigma checked non-negative").sample(rng)
    }
}

/// Generates one session. Deterministic for a fixed config; every random
/// component draws from its own ChaCha stream of `seed`.
pub fn synth_session(cfg: &SynthConfig) -> Result<Session, DatasetError> {
    cfg.validate()?;
    let plan = match &cfg.plan {
        PlanSpec::Explicit(segments) => segments.clone(),
        PlanSpec::Random { min_len, max_len, slope } => {
            random_plan(cfg.n_frames, cfg.start, *min_len, *max_len, *slope, &mut stream(cfg.seed, 0))
        }
    };

    let n = cfg.n_frames;
    let mut latent = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut level = cfg.start;
    for seg in &plan {
        for _ in 0..seg.frames {
            if !latent.is_empty() {
                level = (level + seg.slope).clamp(-1.0, 1.0);
            }
            latent.push(level);
            labels.push(seg.kind);
        }
    }

    let mut trace_rng = stream(cfg.seed, 1);
    let rating: Vec<f64> =
        latent.iter().map(|&r| (r + gaussian(&mut trace_rng, cfg.trace_noise)).clamp(-1.0, 1.0)).collect();

    let mut data = Array2::zeros((n, N_CHANNELS));
    for (ch, coupling) in cfg.couplings.iter().enumerate() {
        let mut rng = stream(cfg.seed, 2 + ch as u64);
        let mut acc = 0.0;
        for (t, &r) in latent.iter().enumerate() {
            let clean = match *coupling {
                Coupling::Integrator { gain } => {
                    acc += r / cfg.fps;
                    gain * acc
                }
                Coupling::Lagged { gain, frames } => {
                    acc = if t == 0 { gain * r } else { acc + (gain * r - acc) / frames };
                    acc
                }
                Coupling::Phased { gain, region } => {
                    if labels[t] == region { gain * r } else { 0.0 }
                }
                Coupling::Direction { gain } => {
                    let step = if t == 0 { 0.0 } else { r - latent[t - 1] };
                    if step.abs() < 1e-12 { 0.0 } else { gain * step.signum() }
                }
                c => c.apply(r),
            };
            data[[t, ch]] = clean + gaussian(&mut rng, cfg.noise);
        }
    }

    let features = FeatureSeries::new(data, cfg.fps)?;
    let trace = AnnotationTrace::new(cfg.state, rating, cfg.fps)?;
    let mut session = Session::new(format!("synth-{}", cfg.seed), features, vec![trace])?;
    session.regions.insert(cfg.state, RegionLabels::new(labels));
    Ok(session)
}

/// A key=value synthetic run description: one [`SynthConfig`] plus the number
/// of sessions to emit (session `i` uses seed `seed + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub sessions: usize,
}

fn parse_plan(value: &str) -> Result<Vec<Segment>, DatasetError> {
    value
        .split(',')
        .map(|part| {
            let bits: Vec<&str> = part.trim().split(':').collect();
            if bits.len() != 3 {
                return Err(DatasetError::InvalidPlan(format!("segment {part:?} is not KIND:FRAMES:SLOPE")));
            }
            let kind = bits[0].parse::<Region>().map_err(|_| DatasetError::InvalidPlan(format!("unknown region {}", bits[0])))?;
            let frames = bits[1].trim().parse::<usize>().map_err(|_| DatasetError::InvalidPlan(format!("bad duration {}", bits[1])))?;
            let slope = bits[2].trim().parse::<f64>().map_err(|_| DatasetError::InvalidPlan(format!("bad slope {}", bits[2])))?;
            Ok(Segment { kind, frames, slope })
        })
        .collect()
}

impl SynthManifest {
    /// Parses `key=value` lines; `#` starts a comment. Unknown keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut cfg = SynthConfig::default();
        let mut sessions = 1;
        let mut plan_kind: Option<String> = None;
        let (mut min_len, mut max_len, mut slope) = (30usize, 60usize, 0.01f64);
        let bad = |k: &str, v: &str| DatasetError::InvalidConfig(format!("bad value for {k}: {v:?}"));
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DatasetError::InvalidConfig(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n_frames" => cfg.n_frames = value.parse().map_err(|_| bad(key, value))?,
                "fps" => cfg.fps = value.parse().map_err(|_| bad(key, value))?,
                "state" => cfg.state = value.parse()?,
                "start" => cfg.start = value.parse().map_err(|_| bad(key, value))?,
                "noise" => cfg.noise = value.parse().map_err(|_| bad(key, value))?,
                "trace_noise" => cfg.trace_noise = value.parse().map_err(|_| bad(key, value))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                "sessions" => sessions = value.parse().map_err(|_| bad(key, value))?,
                "plan" => plan_kind = Some(value.to_string()),
                "segment_min" => min_len = value.parse().map_err(|_| bad(key, value))?,
                "segment_max" => max_len = value.parse().map_err(|_| bad(key, value))?,
                "slope" => slope = value.parse().map_err(|_| bad(key, value))?,
                _ => {
                    let Some(channel) = key.strip_prefix("coupling.") else {
                        return Err(DatasetError::InvalidConfig(format!("unknown key {key}")));
                    };
                    let idx = channel_index(channel).ok_or_else(|| DatasetError::MissingChannel(channel.to_string()))?;
                    cfg.couplings[idx] = value.parse()?;
                }
            }
        }
        cfg.plan = match plan_kind.as_deref() {
            None => cfg.plan,
            Some("random") => PlanSpec::Random { min_len, max_len, slope },
            Some(p) => PlanSpec::Explicit(parse_plan(p)?),
        };
        if sessions == 0 {
            return Err(DatasetError::InvalidConfig("sessions must be >= 1".into()));
        }
        cfg.validate()?;
        Ok(SynthManifest { config: cfg, sessions })
    }

    /// Canonical key=value rendering; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "n_frames={}", c.n_frames);
        let _ = writeln!(out, "fps={}", c.fps);
        let _ = writeln!(out, "state={}", c.state);
        let _ = writeln!(out, "start={}", c.start);
        let _ = writeln!(out, "noise={}", c.noise);
        let _ = writeln!(out, "trace_noise={}", c.trace_noise);
        let _ = writeln!(out, "seed={}", c.seed);
        let _ = writeln!(out, "sessions={}", self.sessions);
        match &c.plan {
            PlanSpec::Explicit(segs) => {
                let parts: Vec<String> =
                    segs.iter().map(|s| format!("{}:{}:{}", s.kind.name(), s.frames, s.slope)).collect();
                let _ = writeln!(out, "plan={}", parts.join(","));
            }
            PlanSpec::Random { min_len, max_len, slope } => {
                let _ = writeln!(out, "plan=random");
                let _ = writeln!(out, "segment_min={min_len}");
                let _ = writeln!(out, "segment_max={max_len}");
                let _ = writeln!(out, "slope={slope}");
            }
        }
        for (name, coupling) in CHANNELS.iter().zip(c.couplings.iter()) {
            let _ = writeln!(out, "coupling.{name}={}", coupling.to_manifest());
        }
        out
    }

    /// Config for the `i`-th emitted session.
    pub fn session_config(&self, i: usize) -> SynthConfig {
        SynthConfig { seed: self.config.seed.wrapping_add(i as u64), ..self.config.clone() }
    }
}
