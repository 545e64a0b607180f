//! Ready-made synthetic benchmarks.

use super::synth::{Coupling, PlanSpec, SynthConfig, SynthManifest};
use crate::regions::Region;
use super::{DatasetError, EmState, Session, N_CHANNELS};

fn independent() -> [Coupling; N_CHANNELS] {
    [Coupling::Independent { level: 0.0 }; N_CHANNELS]
}

/// Region benchmark: random RISE/SUSTAIN/DECAY plans where inBrL tracks the
/// rating only on RISE, LpCDt only on DECAY, eyeOL weakly throughout, and
/// Roll signals the direction of change. Sigma 0.02 on every channel and
/// the trace.
pub fn region_benchmark(seed: u64, sessions: usize) -> SynthManifest {
    let mut couplings = independent();
    couplings[0] = Coupling::Phased { gain: 0.8, region: Region::Rise };
    couplings[8] = Coupling::Phased { gain: 0.8, region: Region::Decay };
    couplings[4] = Coupling::Linear { gain: 0.3, offset: 0.0 };
    couplings[11] = Coupling::Direction { gain: 0.3 };
    SynthManifest {
        config: SynthConfig {
            n_frames: 400,
            fps: 25.0,
            state: EmState::Concentration,
            start: 0.0,
            plan: PlanSpec::Random { min_len: 40, max_len: 100, slope: 0.01 },
            couplings,
            noise: 0.02,
            trace_noise: 0.02,
            seed,
        },
        sessions,
    }
}

/// Window benchmark: the rating is visible only through the slope of
/// integrator channels, and segments last about 40 frames, so short windows
/// are noisy and long ones lag.
pub fn window_benchmark(seed: u64, sessions: usize) -> SynthManifest {
    let mut couplings = independent();
    couplings[9] = Coupling::Integrator { gain: 1.0 };
    couplings[10] = Coupling::Integrator { gain: 1.0 };
    couplings[11] = Coupling::Integrator { gain: 1.0 };
    SynthManifest {
        config: SynthConfig {
            n_frames: 400,
            fps: 25.0,
            state: EmState::Concentration,
            start: 0.0,
            plan: PlanSpec::Random { min_len: 30, max_len: 50, slope: 0.02 },
            couplings,
            noise: 0.05,
            trace_noise: 0.02,
            seed,
        },
        sessions,
    }
}

/// Every session a manifest describes.
pub fn generate(manifest: &SynthManifest) -> Result<Vec<Session>, DatasetError> {
    (0..manifest.sessions).map(|i| super::synth_session(&manifest.session_config(i))).collect()
}
