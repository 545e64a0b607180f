//! Dependence estimators: Pearson correlation and the maximal information
//! coefficient.

mod matrix;
mod mine;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{emotion_mic_matrix, mic_matrix, mic_table, MicMatrix};
pub use mine::{average_ranks, equipartition, equipartition_groups, optimize_axis_partition, AxisOptimum, AxisPartition};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed MIC matrix: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Product-moment correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints { n, min: 2 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    // Exact test: a rounded mean leaves tiny nonzero deviations.
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::ZeroVariance);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicParams {
    /// Grid budget exponent: grids satisfy `x * y <= n^alpha`.
    pub alpha: f64,
    /// Clump factor: at most `clump * max_cols` candidate cut points.
    pub clump: usize,
}

impl Default for MicParams {
    fn default() -> Self {
        MicParams { alpha: 0.6, clump: 15 }
    }
}

impl MicParams {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::InvalidParams(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.clump == 0 {
            return Err(StatsError::InvalidParams("clump factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Grid budget for `n` points, never below 4 so the 2x2 grid always
    /// exists.
    pub fn budget(&self, n: usize) -> usize {
        ((n as f64).powf(self.alpha).floor() as usize).max(4)
    }
}

/// Normalized maximal mutual information for every grid shape within budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicMatrix {
    budget: usize,
    /// `(cols, rows, value)`; `cols` partitions x, `rows` partitions y.
    entries: Vec<(usize, usize, f64)>,
}

impl CharacteristicMatrix {
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, cols: usize, rows: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == cols && e.1 == rows).map(|e| e.2)
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.2).fold(0.0, f64::max)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 4 {
        return Err(StatsError::TooFewPoints { n: x.len(), min: 4 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Mutual information table for one orientation: `table[cols][rows]` holds
/// the best I over partitions of the first axis into `cols` columns against
/// an equipartition of the second into `rows` rows.
fn orientation(ra: &[f64], rb: &[f64], budget: usize, clump: usize) -> Result<Vec<Vec<f64>>, StatsError> {
    let mut table = vec![vec![f64::NAN; budget / 2 + 1]; budget / 2 + 1];
    for rows in 2..=budget / 2 {
        let max_cols = budget / rows;
        if max_cols < 2 {
            continue;
        }
        let opt = optimize_axis_partition(ra, rb, rows, max_cols, clump)?;
        for p in &opt.partitions {
            table[p.columns][rows] = p.mutual_information;
        }
    }
    Ok(table)
}

/// Characteristic matrix of the pair. Both orientations are evaluated: for
/// a `cols x rows` grid the entry is the larger of "x optimized against a
/// y equipartition" and "y optimized against an x equipartition", divided by
/// `log2(min(cols, rows))`.
pub fn characteristic_matrix(x: &[f64], y: &[f64], p: &MicParams) -> Result<CharacteristicMatrix, StatsError> {
    p.validate()?;
    check_pair(x, y)?;
    let budget = p.budget(x.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let (a, b) = rayon::join(|| orientation(&rx, &ry, budget, p.clump), || orientation(&ry, &rx, budget, p.clump));
    let (a, b) = (a?, b?);
    let mut entries = Vec::new();
    for cols in 2..=budget / 2 {
        for rows in 2..=budget / cols {
            // a[cols][rows]: x in `cols` columns vs y in `rows` rows;
            // b[rows][cols]: y in `rows` parts vs x equipartitioned in `cols`
            let ia = a[cols][rows];
            let ib = b[rows][cols];
            let best = ia.max(ib);
            let value = (best / (cols.min(rows) as f64).log2()).clamp(0.0, 1.0);
            entries.push((cols, rows, value));
        }
    }
    Ok(CharacteristicMatrix { budget, entries })
}

/// Maximal information coefficient: the largest characteristic-matrix entry.
pub fn mic(x: &[f64], y: &[f64], p: &MicParams) -> Result<f64, StatsError> {
    Ok(characteristic_matrix(x, y, p)?.max())
}

/// MIC of every pair `(xs[i], ys[j])`, computed in parallel; row-major.
pub(crate) fn mic_pairs(xs: &[&[f64]], ys: &[&[f64]], p: &MicParams) -> Result<Vec<f64>, StatsError> {
    let pairs: Vec<(usize, usize)> = (0..xs.len()).flat_map(|i| (0..ys.len()).map(move |j| (i, j))).collect();
    pairs.par_iter().map(|&(i, j)| mic(xs[i], ys[j], p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(StatsError::ZeroVariance)));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch { .. })));
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen::<f64>()).collect();
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((pearson(&x, &y).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn identity_line() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let m = characteristic_matrix(&x, &x, &MicParams::default()).unwrap();
        assert_eq!(m.get(2, 2), Some(1.0));
        assert!(m.entries().iter().all(|e| (0.0..=1.0).contains(&e.2)));
        assert_eq!(m.max(), 1.0);
    }

    #[test]
    fn too_few_points() {
        let x = [1.0, 2.0, 3.0];
        assert!(matches!(mic(&x, &x, &MicParams::default()), Err(StatsError::TooFewPoints { .. })));
    }

    #[test]
    fn invalid_params() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!(mic(&x, &x, &MicParams { alpha: 1.2, clump: 15 }).is_err());
        assert!(mic(&x, &x, &MicParams { alpha: 0.6, clump: 0 }).is_err());
    }

    #[test]
    fn constant_input_scores_zero() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = vec![3.0; 50];
        assert_eq!(mic(&x, &y, &MicParams::default()).unwrap(), 0.0);
    }
}
