//! Epsilon-insensitive support vector regression trained by sequential
//! minimal optimization with second-order working-set selection.
//!
//! The dual has `2n` variables `beta = [alpha; alpha*]` with signs
//! `z = [+1; -1]`:
//!
//! ```text
//! min  1/2 beta' Q beta + p' beta   s.t.  z' beta = 0,  0 <= beta <= C
//! Q_tu = z_t z_u K(t mod n, u mod n),  p = [eps - y; eps + y]
//! ```
//!
//! and the regression function is `f(x) = sum_i (alpha_i - alpha*_i) K(x_i, x) + b`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Kernel, RegressError, SvrParams};

const TAU: f64 = 1e-12;

/// A trained regressor. Inputs are standardized with the stored statistics
/// before the kernel expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    kernel: Kernel,
    arity: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    support: Array2<f64>,
    coef: Vec<f64>,
    bias: f64,
    c: f64,
    converged: bool,
    iterations: usize,
    #[serde(skip)]
    objective: Vec<f64>,
}

impl Regressor {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Dual coefficients `alpha_i - alpha*_i` of the support rows.
    pub fn dual_coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn support_rows(&self) -> ArrayView2<'_, f64> {
        self.support.view()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Dual objective after each optimizer step (empty after
    /// deserialization).
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective
    }

    /// Errors with `NotConverged` if training hit the iteration cap.
    pub fn ensure_converged(&self) -> Result<(), RegressError> {
        if self.converged {
            Ok(())
        } else {
            Err(RegressError::NotConverged { iterations: self.iterations })
        }
    }

    /// Kernel expansion plus bias, unclipped.
    pub fn predict_raw(&self, row: ArrayView1<'_, f64>) -> Result<f64, RegressError> {
        if row.len() != self.arity {
            return Err(RegressError::ArityMismatch { expected: self.arity, found: row.len() });
        }
        let z: Vec<f64> = row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let mut f = self.bias;
        for (sv, &a) in self.support.rows().into_iter().zip(&self.coef) {
            f += a * self.kernel.eval(sv.as_slice().expect("standard layout"), &z);
        }
        Ok(f)
    }

    /// Prediction clipped to `[-1, 1]`.
    pub fn predict(&self, row: ArrayView1<'_, f64>) -> Result<f64, RegressError> {
        Ok(self.predict_raw(row)?.clamp(-1.0, 1.0))
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>, RegressError> {
        (0..x.nrows()).into_par_iter().map(|i| self.predict(x.row(i))).collect()
    }
}

/// Clipped prediction of `r` on `row`.
pub fn predict(r: &Regressor, row: ArrayView1<'_, f64>) -> Result<f64, RegressError> {
    r.predict(row)
}

fn standardization(x: ArrayView2<'_, f64>, on: bool) -> (Vec<f64>, Vec<f64>) {
    let d = x.ncols();
    if !on {
        return (vec![0.0; d], vec![1.0; d]);
    }
    let n = x.nrows() as f64;
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, scale)
}

/// `1 / (d * mean column variance)`, or `1 / d` for constant inputs.
pub fn default_gamma(x: ArrayView2<'_, f64>) -> f64 {
    let d = x.ncols().max(1) as f64;
    let n = x.nrows() as f64;
    let mean_var = x
        .axis_iter(Axis(1))
        .map(|col| {
            let m = col.sum() / n;
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / d;
    if mean_var > 0.0 {
        1.0 / (d * mean_var)
    } else {
        1.0 / d
    }
}

/// Fits an epsilon-SVR to `x` rows and `targets`.
pub fn train_svr(x: ArrayView2<'_, f64>, targets: &[f64], p: &SvrParams) -> Result<Regressor, RegressError> {
    p.validate()?;
    let n = x.nrows();
    if n != targets.len() {
        return Err(RegressError::LengthMismatch { rows: n, targets: targets.len() });
    }
    if n < 2 {
        return Err(RegressError::TooFewRows { rows: n, min: 2 });
    }
    if x.ncols() == 0 {
        return Err(RegressError::InvalidParams("design has no columns".into()));
    }
    if let Some((i, t)) = targets.iter().enumerate().find(|(_, t)| !(t.is_finite() && t.abs() <= 1.0 + 1e-9)) {
        return Err(RegressError::TargetOutOfRange { row: i, value: *t });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite);
    }

    let (mean, scale) = standardization(x, p.standardize);
    let mut z = x.as_standard_layout().into_owned();
    for mut row in z.axis_iter_mut(Axis(0)) {
        for ((v, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - m) / s;
        }
    }
    let kernel = match p.kernel {
        super::KernelSpec::Linear => Kernel::Linear,
        super::KernelSpec::Rbf { gamma } => Kernel::Rbf { gamma: gamma.unwrap_or_else(|| default_gamma(z.view())) },
    };

    let k = kernel_matrix(&z, kernel);
    let max_iter = p.max_iter.unwrap_or(10 * 2 * n);
    let sol = solve(&k, targets, p.epsilon, p.c, p.tol, max_iter);
    if !sol.converged {
        log::warn!("SVR stopped at the iteration cap ({} iterations) before reaching tol {}", sol.iterations, p.tol);
    }

    let mut keep = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        let a = sol.beta[i] - sol.beta[i + n];
        if a != 0.0 {
            keep.push(i);
            coef.push(a);
        }
    }
    Ok(Regressor {
        kernel,
        arity: x.ncols(),
        mean,
        scale,
        support: z.select(Axis(0), &keep),
        coef,
        bias: -sol.rho,
        c: p.c,
        converged: sol.converged,
        iterations: sol.iterations,
        objective: sol.objective,
    })
}

fn kernel_matrix(z: &Array2<f64>, kernel: Kernel) -> Vec<f64> {
    let n = z.nrows();
    let rows: Vec<&[f64]> = z.rows().into_iter().map(|r| r.to_slice().expect("standard layout")).collect();
    let mut k = vec![0.0; n * n];
    k.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = kernel.eval(rows[i], rows[j]);
        }
    });
    k
}

struct Solution {
    beta: Vec<f64>,
    rho: f64,
    converged: bool,
    iterations: usize,
    objective: Vec<f64>,
}

/// SMO on the 2n-variable dual.
fn solve(k: &[f64], y: &[f64], eps: f64, c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |t: usize, u: usize| sign(t) * sign(u) * k[(t % n) * n + (u % n)];
    let p: Vec<f64> = (0..l).map(|t| if t < n { eps - y[t] } else { eps + y[t - n] }).collect();
    let qd: Vec<f64> = (0..l).map(|t| k[(t % n) * n + (t % n)]).collect();
    let mut beta = vec![0.0; l];
    let mut g = p.clone();
    let objective_of = |beta: &[f64], g: &[f64]| -> f64 {
        0.5 * beta.iter().zip(g).zip(&p).map(|((b, gr), pp)| b * (gr + pp)).sum::<f64>()
    };
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        // i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = usize::MAX;
        for t in 0..l {
            if sign(t) > 0.0 {
                if beta[t] < c && -g[t] >= gmax {
                    gmax = -g[t];
                    gmax_idx = t;
                }
            } else if beta[t] > 0.0 && g[t] >= gmax {
                gmax = g[t];
                gmax_idx = t;
            }
        }
        let i = gmax_idx;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = usize::MAX;
        let mut obj_diff_min = f64::INFINITY;
        if i != usize::MAX {
            let yi = sign(i);
            for t in 0..l {
                let qit = q(i, t);
                if sign(t) > 0.0 {
                    if beta[t] > 0.0 {
                        let grad_diff = gmax + g[t];
                        gmax2 = gmax2.max(g[t]);
                        if grad_diff > 0.0 {
                            let quad = qd[i] + qd[t] - 2.0 * yi * qit;
                            let od = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                            if od <= obj_diff_min {
                                gmin_idx = t;
                                obj_diff_min = od;
                            }
                        }
                    }
                } else if beta[t] < c {
                    let grad_diff = gmax - g[t];
                    gmax2 = gmax2.max(-g[t]);
                    if grad_diff > 0.0 {
                        let quad = qd[i] + qd[t] + 2.0 * yi * qit;
                        let od = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if od <= obj_diff_min {
                            gmin_idx = t;
                            obj_diff_min = od;
                        }
                    }
                }
            }
        }
        if i == usize::MAX || gmin_idx == usize::MAX || gmax + gmax2 < tol {
            converged = true;
            break;
        }
        let j = gmin_idx;
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        for t in 0..l {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
        objective.push(objective_of(&beta, &g));
    }

    // bias
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * g[t];
        let at_upper = beta[t] >= c;
        let at_lower = beta[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Solution { beta, rho, converged, iterations, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::KernelSpec;
    use ndarray::Array2;

    fn column(xs: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()
    }

    #[test]
    fn constant_targets() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let x = column(&xs);
        let r = train_svr(x.view(), &vec![0.3; 40], &SvrParams::default()).unwrap();
        for v in [0.0, 0.5, 0.77, 3.0] {
            let p = r.predict(ndarray::arr1(&[v]).view()).unwrap();
            assert!((p - 0.3).abs() <= 0.05 + 1e-9, "{p}");
        }
    }

    #[test]
    fn wide_tube_gives_constant_bias() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (v / 10.0).sin() * 0.8).collect();
        let p = SvrParams { epsilon: 2.0, ..SvrParams::default() };
        let r = train_svr(column(&xs).view(), &ys, &p).unwrap();
        assert!(r.dual_coefficients().is_empty());
        let b = r.bias();
        for v in &xs {
            assert_eq!(r.predict_raw(ndarray::arr1(&[*v]).view()).unwrap(), b);
        }
        assert!(ys.iter().all(|y| (y - b).abs() <= 2.0));
    }

    #[test]
    fn dual_feasible_and_monotone() {
        let xs: Vec<f64> = (0..80).map(|i| i as f64 / 80.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| (6.0 * v).sin() * 0.9).collect();
        let p = SvrParams { c: 0.5, ..SvrParams::default() };
        let r = train_svr(column(&xs).view(), &ys, &p).unwrap();
        assert!(r.converged());
        assert!(r.dual_coefficients().iter().all(|a| a.abs() <= 0.5 + 1e-9));
        assert!(r.objective_trace().windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn arity_checked() {
        let r = train_svr(column(&[0.0, 1.0, 2.0]).view(), &[0.0, 0.5, 1.0], &SvrParams::default()).unwrap();
        assert!(matches!(
            r.predict(ndarray::arr1(&[1.0, 2.0]).view()),
            Err(RegressError::ArityMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn linear_kernel_recovers_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 0.6 * v - 0.2).collect();
        let p = SvrParams { kernel: KernelSpec::Linear, epsilon: 0.0, c: 100.0, tol: 1e-6, ..SvrParams::default() };
        let r = train_svr(column(&xs).view(), &ys, &p).unwrap();
        let at = |v: f64| r.predict_raw(ndarray::arr1(&[v]).view()).unwrap();
        assert!((at(0.0) + 0.2).abs() < 1e-3);
        assert!((at(1.0) - at(0.0) - 0.6).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        let x = column(&[0.0, 1.0]);
        assert!(matches!(train_svr(x.view(), &[0.0], &SvrParams::default()), Err(RegressError::LengthMismatch { .. })));
        assert!(matches!(
            train_svr(column(&[0.0]).view(), &[0.0], &SvrParams::default()),
            Err(RegressError::TooFewRows { .. })
        ));
        assert!(matches!(
            train_svr(x.view(), &[0.0, 1.5], &SvrParams::default()),
            Err(RegressError::TargetOutOfRange { row: 1, .. })
        ));
    }
}
