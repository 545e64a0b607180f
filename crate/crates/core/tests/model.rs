//! Gated model end to end on the region benchmark.

use ems_core::dataset::{presets, EmState};
use ems_core::eval::coerr;
use ems_core::regress::{predict_state, predict_state_detailed, train_state_model, ModelConfig, StateModel};

#[test]
fn held_out_prediction_tracks_the_rating() {
    let st = EmState::Concentration;
    let sessions = presets::generate(&presets::region_benchmark(300, 10)).unwrap();
    let mut cfg = ModelConfig::for_state(st);
    cfg.forest.n_trees = 30;
    let model = train_state_model(&sessions[..8], st, &cfg).unwrap();

    let reloaded = StateModel::from_json(&model.to_json()).unwrap();
    assert_eq!(reloaded.to_json(), model.to_json());

    for s in &sessions[8..] {
        let pred = predict_state(&model, &s.features).unwrap();
        assert_eq!(pred.len(), s.n_frames());
        assert!(pred.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(predict_state(&reloaded, &s.features).unwrap(), pred);
        let r = coerr(&pred, s.trace(st).unwrap()).unwrap();
        assert!(r >= 0.8, "{}: CoERR {r}", s.id);

        let detail = predict_state_detailed(&model, &s.features).unwrap();
        let w = cfg.window.size;
        assert_eq!(detail.raw.len(), s.n_frames() - w + 1);
        assert_eq!(detail.regions.len(), s.n_frames());
        assert!(detail.probabilities.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }
}
