use ems_core::stats::{characteristic_matrix, mic, optimize_axis_partition, MicParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod support;
use support::brute_force;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen()).collect()
}

#[test]
fn dp_matches_exhaustive_on_fifty_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let n = rng.gen_range(4..=12);
        let x = uniform(&mut rng, n);
        let y: Vec<f64> = if case % 2 == 0 { uniform(&mut rng, n) } else { x.iter().map(|v| (6.0 * v).sin() + 0.3 * rng.gen::<f64>()).collect() };
        for (rows, max_cols) in [(2, 3), (3, 2)] {
            let opt = optimize_axis_partition(&x, &y, rows, max_cols, 15).unwrap();
            for p in &opt.partitions {
                assert_eq!(p.mutual_information, brute_force(&x, &y, rows, p.columns), "case {case} rows {rows} cols {}", p.columns);
            }
        }
    }
}

#[test]
fn characteristic_matrix_matches_exhaustive_grid_search() {
    let p = MicParams { alpha: 0.75, clump: 15 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x = uniform(&mut rng, 12);
        let y = uniform(&mut rng, 12);
        let m = characteristic_matrix(&x, &y, &p).unwrap();
        assert_eq!(m.budget(), 6);
        for &(cols, rows, value) in m.entries() {
            let a = brute_force(&x, &y, rows, cols);
            let b = brute_force(&y, &x, cols, rows);
            assert_eq!(value, a.max(b) / (cols.min(rows) as f64).log2(), "{cols}x{rows}");
        }
    }
}

#[test]
fn noiseless_functions_score_high() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = uniform(&mut rng, 1000);
    let p = MicParams::default();
    for f in [|v: f64| v, |v: f64| v * v, |v: f64| (4.0 * std::f64::consts::PI * v).sin()] {
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let s = mic(&x, &y, &p).unwrap();
        assert!(s >= 0.97, "mic {s}");
    }
}

#[test]
fn independent_uniforms_score_low() {
    let p = MicParams::default();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = uniform(&mut rng, 1000);
        let y = uniform(&mut rng, 1000);
        let s = mic(&x, &y, &p).unwrap();
        assert!(s <= 0.25, "seed {seed}: mic {s}");
    }
}

#[test]
fn deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = uniform(&mut rng, 400);
    let y: Vec<f64> = x.iter().map(|v| v * v + 0.1 * rng.gen::<f64>()).collect();
    let p = MicParams::default();
    assert_eq!(mic(&x, &y, &p).unwrap().to_bits(), mic(&x, &y, &p).unwrap().to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_and_bounded(seed in any::<u64>(), n in 4usize..200, ties in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // quantize to create ties on some cases
        let q = [0.0, 10.0, 3.0][ties];
        let round = |v: f64| if q > 0.0 { (v * q).round() / q } else { v };
        let x: Vec<f64> = (0..n).map(|_| round(rng.gen())).collect();
        let y: Vec<f64> = x.iter().map(|v| round(v + rng.gen::<f64>())).collect();
        let p = MicParams::default();
        let a = mic(&x, &y, &p).unwrap();
        let b = mic(&y, &x, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn invariant_under_increasing_transforms(seed in any::<u64>(), n in 4usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v).cos() + 0.5 * rng.gen::<f64>()).collect();
        let gx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 - 1.0).collect();
        let hy: Vec<f64> = y.iter().map(|v| v.powi(3) + v).collect();
        let p = MicParams::default();
        prop_assert_eq!(mic(&x, &y, &p).unwrap(), mic(&gx, &hy, &p).unwrap());
    }

    #[test]
    fn dp_matches_exhaustive(seed in any::<u64>(), n in 4usize..=12, rows in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let max_cols = 6 / rows;
        let opt = optimize_axis_partition(&x, &y, rows, max_cols, 15).unwrap();
        for p in &opt.partitions {
            prop_assert_eq!(p.mutual_information, brute_force(&x, &y, rows, p.columns));
        }
    }
}
