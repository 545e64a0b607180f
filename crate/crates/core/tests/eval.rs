//! Cross-validation, ablation and sweep contracts.

use ems_core::dataset::{presets, synth_session, AnnotationTrace, EmState, Session, SynthConfig};
use ems_core::eval::{ablate_regions, assign_folds, coerr, kfold_cv, window_sweep, EvalConfig, EvalReport, FoldUnit};

const ST: EmState = EmState::Concentration;

fn quick(k: usize) -> EvalConfig {
    let mut cfg = EvalConfig::new(ST);
    cfg.k = k;
    cfg.model.window.size = 20;
    cfg.model.forest.n_trees = 15;
    cfg.model.max_train_rows = 400;
    cfg.model.mic_max_points = 200;
    cfg
}

fn trace(v: Vec<f64>) -> AnnotationTrace {
    AnnotationTrace::new(ST, v, 25.0).unwrap()
}

#[test]
fn coerr_is_symmetric_and_affine_invariant() {
    let a: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.3).sin() * 0.5).collect();
    let b: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.3 + 0.4).sin() * 0.6).collect();
    let r = coerr(&trace(a.clone()), &trace(b.clone())).unwrap();
    assert!((r - coerr(&trace(b.clone()), &trace(a.clone())).unwrap()).abs() < 1e-12);
    let shifted: Vec<f64> = a.iter().map(|v| 0.5 * v + 0.2).collect();
    assert!((r - coerr(&trace(shifted), &trace(b.clone())).unwrap()).abs() < 1e-12);
    let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((r + coerr(&trace(flipped), &trace(b)).unwrap()).abs() < 1e-12);
    assert!(coerr(&trace(vec![0.1; 50]), &trace(a)).is_err());
}

#[test]
fn fold_assignment_is_a_seeded_partition() {
    for (n, k) in [(10, 10), (23, 5), (7, 2)] {
        let folds = assign_folds(n, k, 3).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == n / k || f.len() == n / k + 1));
        assert_eq!(folds, assign_folds(n, k, 3).unwrap());
    }
    assert_ne!(assign_folds(20, 4, 1).unwrap(), assign_folds(20, 4, 2).unwrap());
}

fn identical_sessions(n: usize) -> Vec<Session> {
    let mut cfg = presets::region_benchmark(5, 1).session_config(0);
    cfg.n_frames = 200;
    let base = synth_session(&cfg).unwrap();
    (0..n).map(|i| Session { id: format!("copy-{i:02}"), ..base.clone() }).collect()
}

#[test]
fn identical_sessions_give_identical_folds() {
    let sessions = identical_sessions(10);
    let report = kfold_cv(&sessions, ST, 10, &quick(10)).unwrap();
    let cv = report.cv.unwrap();
    assert_eq!(cv.folds.len(), 10);
    assert_eq!(cv.unit, FoldUnit::Session);
    let var = cv.std * cv.std;
    assert!(var <= 1e-3, "fold variance {var}");
}

#[test]
fn few_sessions_fall_back_to_blocks() {
    let cfg = SynthConfig {
        n_frames: 600,
        plan: ems_core::dataset::PlanSpec::Random { min_len: 30, max_len: 60, slope: 0.01 },
        couplings: presets::region_benchmark(0, 1).config.couplings,
        noise: 0.02,
        ..SynthConfig::default()
    };
    let sessions: Vec<Session> = (0..2).map(|i| synth_session(&SynthConfig { seed: 50 + i, ..cfg.clone() }).unwrap()).collect();
    let report = kfold_cv(&sessions, ST, 3, &quick(3)).unwrap();
    let cv = report.cv.unwrap();
    assert_eq!(cv.unit, FoldUnit::Block { gap: 20 });
    assert_eq!(cv.folds.len(), 3);
    assert!(cv.folds.iter().all(|f| f.test_frames == 400));
}

#[test]
fn ablation_and_sweep_reports_round_trip() {
    let sessions = presets::generate(&presets::region_benchmark(11, 6)).unwrap();
    let cfg = quick(3);
    let report = ablate_regions(&sessions, ST, &cfg).unwrap();
    let a = report.ablation.unwrap();
    assert!((a.percent_delta - 100.0 * (a.with_regions - a.without_regions) / a.without_regions).abs() < 1e-12);
    assert!(report.cv.as_ref().unwrap().folds.iter().all(|f| f.coerr_without_regions.is_some()));
    assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
    assert_eq!(report.folds_csv().lines().count(), 4);

    let sweep = window_sweep(&sessions, ST, &[10, 30], &cfg).unwrap();
    assert_eq!(sweep.sweep.iter().map(|p| p.window).collect::<Vec<_>>(), vec![10, 30]);
    assert!(sweep.sweep.iter().all(|p| (-1.0..=1.0).contains(&p.mean)));
    assert!(sweep.best_window().is_some());
    assert_eq!(EvalReport::from_json(&sweep.to_json()).unwrap(), sweep);
    assert!(window_sweep(&sessions, ST, &[1], &cfg).is_err());
    assert!(window_sweep(&sessions, ST, &[], &cfg).is_err());
}

#[test]
fn evaluation_is_deterministic() {
    let sessions = presets::generate(&presets::region_benchmark(21, 4)).unwrap();
    let cfg = quick(2);
    let a = kfold_cv(&sessions, ST, 2, &cfg).unwrap().to_json();
    let b = kfold_cv(&sessions, ST, 2, &cfg).unwrap().to_json();
    assert_eq!(a, b);
}
