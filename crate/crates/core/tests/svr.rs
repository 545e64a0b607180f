//! Epsilon-SVR against closed-form and property oracles.

use ems_core::regress::{train_svr, KernelSpec, Regressor, SvrParams};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn assert_feasible(r: &Regressor) {
    let coef = r.dual_coefficients();
    for a in coef {
        assert!(a.abs() <= r.c() + 1e-9, "coefficient {a} exceeds C {}", r.c());
    }
    let total: f64 = coef.iter().sum();
    assert!(total.abs() <= 1e-8 * coef.len().max(1) as f64, "equality constraint off by {total}");
    let obj = r.objective_trace();
    for pair in obj.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "objective rose from {} to {}", pair[0], pair[1]);
    }
}

fn predict_all(r: &Regressor, x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.rows().into_iter().map(|row| r.predict_raw(row).unwrap()).collect()
}

#[test]
fn sine_fit_generalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let f = |x: f64| 0.8 * (2.0 * std::f64::consts::PI * x).sin();
    let xs: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| (f(x) + noise.sample(&mut rng)).clamp(-1.0, 1.0)).collect();
    let x = Array2::from_shape_vec((200, 1), xs).unwrap();
    let r = train_svr(x.view(), &ys, &SvrParams::default()).unwrap();
    assert_feasible(&r);
    assert!(r.converged());

    let test: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
    let tx = Array2::from_shape_vec((500, 1), test.clone()).unwrap();
    let pred = predict_all(&r, tx.view());
    let rmse = (pred.iter().zip(&test).map(|(p, &x)| (p - f(x)).powi(2)).sum::<f64>() / 500.0).sqrt();
    assert!(rmse <= 0.1, "held-out RMSE {rmse}");
}

/// Least-squares plane through noiseless data, from the normal equations.
fn least_squares(x: &Array2<f64>, y: &[f64]) -> [f64; 3] {
    let mut a = [[0.0; 4]; 3];
    for (row, &t) in x.rows().into_iter().zip(y) {
        let v = [row[0], row[1], 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += v[i] * v[j];
            }
            a[i][3] += v[i] * t;
        }
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

#[test]
fn linear_kernel_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((60, 2), |_| rng.gen_range(-1.0..1.0));
    let y: Vec<f64> = x.rows().into_iter().map(|r| 0.35 * r[0] - 0.25 * r[1] + 0.1).collect();
    let p = SvrParams { c: 100.0, epsilon: 0.0, kernel: KernelSpec::Linear, tol: 1e-6, standardize: false, ..SvrParams::default() };
    let r = train_svr(x.view(), &y, &p).unwrap();
    assert_feasible(&r);
    let [w0, w1, b] = least_squares(&x, &y);
    let probe = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.5..1.5));
    for (row, got) in probe.rows().into_iter().zip(predict_all(&r, probe.view())) {
        let want = w0 * row[0] + w1 * row[1] + b;
        assert!((got - want).abs() <= 1e-3, "{got} vs {want}");
    }
}

#[test]
fn wide_tube_gives_constant_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_fn((40, 3), |_| rng.gen::<f64>());
    let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let p = SvrParams { epsilon: 1.0, ..SvrParams::default() };
    let r = train_svr(x.view(), &y, &p).unwrap();
    assert_feasible(&r);
    assert!(r.dual_coefficients().iter().all(|&a| a == 0.0));
    let pred = predict_all(&r, x.view());
    assert!(pred.iter().all(|&v| v == r.bias()));
    assert!(y.iter().all(|t| (t - r.bias()).abs() <= 1.0));
}

#[test]
fn feasible_across_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..12 {
        let n = rng.gen_range(10..80);
        let d = rng.gen_range(1..6);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = [0.1, 1.0, 10.0][trial % 3];
        let kernel = if trial % 4 == 0 { KernelSpec::Linear } else { KernelSpec::Rbf { gamma: None } };
        let r = train_svr(x.view(), &y, &SvrParams { c, kernel, ..SvrParams::default() }).unwrap();
        assert_feasible(&r);
    }
}

#[test]
fn common_column_scale_leaves_default_gamma_predictions_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Array2::from_shape_fn((80, 4), |_| rng.gen::<f64>());
    let y: Vec<f64> = x.rows().into_iter().map(|r| (r[0] - r[2]).tanh()).collect();
    // Tight tolerance so both runs reach the same optimum rather than two
    // points inside the stopping band.
    let p = SvrParams { standardize: false, tol: 1e-9, ..SvrParams::default() };
    let a = train_svr(x.view(), &y, &p).unwrap();
    let scaled = x.mapv(|v| 3.0 * v);
    let b = train_svr(scaled.view(), &y, &p).unwrap();
    for (u, v) in predict_all(&a, x.view()).iter().zip(predict_all(&b, scaled.view())) {
        assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
    }
    // A fixed gamma needs the inverse-square rescale to compensate.
    let g = 0.7;
    let fixed = SvrParams { kernel: KernelSpec::Rbf { gamma: Some(g) }, ..p };
    let c = train_svr(x.view(), &y, &fixed).unwrap();
    let d = train_svr(scaled.view(), &y, &SvrParams { kernel: KernelSpec::Rbf { gamma: Some(g / 9.0) }, ..fixed }).unwrap();
    for (u, v) in predict_all(&c, x.view()).iter().zip(predict_all(&d, scaled.view())) {
        assert!((u - v).abs() <= 1e-9);
    }
}
