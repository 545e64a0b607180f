//! Region labelling against planted plans, and the forest on held-out data.

use ems_core::dataset::{presets, synth_session, EmState, Session, SynthConfig};
use ems_core::regions::{label_regions, region_roc, train_region_classifier, ForestParams, RegionLabels};
use ems_core::temporal::{build_design_matrix, DesignMatrix, KindSet, WindowConfig};

const TAU: f64 = 0.125;

fn planted(s: &Session) -> &RegionLabels {
    &s.regions[&EmState::Concentration]
}

#[test]
fn noiseless_trapezoid_matches_plan_away_from_transitions() {
    let s = synth_session(&SynthConfig::default()).unwrap();
    let trace = s.trace(EmState::Concentration).unwrap();
    for smooth in [4, 10, 20, 40] {
        let labels = label_regions(trace, smooth, TAU).unwrap();
        assert_eq!(planted(&s).agreement_excluding(&labels, smooth), 1.0, "smooth {smooth}");
    }
}

#[test]
fn random_noiseless_plans_match_exactly_away_from_transitions() {
    for seed in 0..10 {
        let m = presets::region_benchmark(seed, 1);
        let mut cfg = m.session_config(0);
        cfg.noise = 0.0;
        cfg.trace_noise = 0.0;
        let s = synth_session(&cfg).unwrap();
        let labels = label_regions(s.trace(EmState::Concentration).unwrap(), 20, TAU).unwrap();
        assert_eq!(planted(&s).agreement_excluding(&labels, 20), 1.0, "seed {seed}");
    }
}

#[test]
fn light_noise_keeps_ninety_five_percent_agreement() {
    let mut worst = 1.0f64;
    for seed in 0..10 {
        let cfg = SynthConfig { trace_noise: 0.01, seed, ..SynthConfig::default() };
        let s = synth_session(&cfg).unwrap();
        let labels = label_regions(s.trace(EmState::Concentration).unwrap(), 20, TAU).unwrap();
        let agree = planted(&s).agreement_excluding(&labels, 0);
        worst = worst.min(agree);
    }
    assert!(worst >= 0.95, "worst agreement {worst}");
}

fn design(sessions: &[Session], w: &WindowConfig) -> (DesignMatrix, RegionLabels) {
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for s in sessions {
        parts.push(build_design_matrix(&s.features, w, KindSet::ALL).unwrap());
        let l = label_regions(s.trace(EmState::Concentration).unwrap(), w.size, TAU).unwrap();
        labels.extend_from_slice(l.from_frame(w.size - 1).labels());
    }
    (DesignMatrix::vstack(&parts).unwrap(), RegionLabels::new(labels))
}

#[test]
fn forest_separates_regions_on_held_out_sessions() {
    let sessions = presets::generate(&presets::region_benchmark(42, 20)).unwrap();
    let w = WindowConfig::for_state(EmState::Concentration);
    let (train_x, train_y) = design(&sessions[..15], &w);
    let (test_x, test_y) = design(&sessions[15..], &w);
    let params = ForestParams { n_trees: 30, seed: 42, ..ForestParams::default() };
    let c = train_region_classifier(&train_x, &train_y, &params).unwrap();
    let auc = region_roc(&c, &test_x, &test_y).unwrap();
    assert!(auc.min() >= 0.9, "{auc:?}");
}
