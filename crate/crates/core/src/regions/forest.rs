//! Bagged CART trees (Gini impurity, majority vote) for ternary region
//! classification.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Region, RegionError, RegionLabels};
use crate::temporal::DesignMatrix;

pub const CLASSIFIER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    /// Bootstrap rows per tree. With bagging off and all features considered
    /// at each split, every tree is the same deterministic CART.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 12, min_leaf: 5, features_per_split: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<(), RegionError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 || self.features_per_split == Some(0) {
            return Err(RegionError::InvalidParam("forest parameters must be positive".into()));
        }
        Ok(())
    }

    fn mtry(&self, d: usize) -> usize {
        self.features_per_split.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d)
    }
}

/// One tree as parallel arrays. Node 0 is the root; `feature[i] < 0` marks a
/// leaf. Rows with `x[feature] <= threshold` go to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub counts: Vec<[u32; 3]>,
}

/// Borrowed view of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub counts: [u32; 3],
}

impl Tree {
    pub fn node(&self, i: usize) -> TreeNode {
        TreeNode {
            feature: usize::try_from(self.feature[i]).ok(),
            threshold: self.threshold[i],
            left: self.left[i] as usize,
            right: self.right[i] as usize,
            counts: self.counts[i],
        }
    }

    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    fn leaf_of(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut i = 0;
        while let Ok(f) = usize::try_from(self.feature[i]) {
            i = if row[f] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
        i
    }

    /// Majority class at the leaf reached by `row` (ties go to the lower
    /// class index).
    pub fn vote(&self, row: ArrayView1<'_, f64>) -> usize {
        argmax(&self.counts[self.leaf_of(row)])
    }

    fn push_leaf(&mut self, counts: [u32; 3]) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.counts.push(counts);
        self.feature.len() - 1
    }
}

fn argmax(counts: &[u32; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub window: Option<usize>,
    pub kinds: String,
    pub seed: u64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionClassifier {
    pub version: u32,
    pub n_features: usize,
    pub classes: Vec<Region>,
    pub trees: Vec<Tree>,
    pub meta: TrainingMeta,
}

fn gini_weighted(counts: &[u32; 3], n: u32) -> f64 {
    // n * gini = n - sum(c^2) / n
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n - sq / n
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    params: &'a ForestParams,
    mtry: usize,
    tree: Tree,
    scratch: Vec<(f64, usize)>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 3] {
        let mut c = [0u32; 3];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(idx);
        let n = idx.len() as u32;
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return self.tree.push_leaf(counts);
        }
        let parent = gini_weighted(&counts, n);
        let d = self.x.len();
        let candidates = index::sample(rng, d, self.mtry).into_vec();

        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &candidates {
            let col = &self.x[f];
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u32; 3];
            let mut right = counts;
            let min_leaf = self.params.min_leaf;
            for k in 0..self.scratch.len() - 1 {
                let (v, c) = self.scratch[k];
                left[c] += 1;
                right[c] -= 1;
                let n_left = k + 1;
                let next = self.scratch[k + 1].0;
                if next == v || n_left < min_leaf || self.scratch.len() - n_left < min_leaf {
                    continue;
                }
                let score =
                    gini_weighted(&left, n_left as u32) + gini_weighted(&right, (self.scratch.len() - n_left) as u32);
                if best.is_none_or(|(s, _, _)| score < s) {
                    let mid = 0.5 * (v + next);
                    let threshold = if mid < next { mid } else { v };
                    best = Some((score, f, threshold));
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            return self.tree.push_leaf(counts);
        };
        if score >= parent {
            return self.tree.push_leaf(counts);
        }

        let col = &self.x[feature];
        let mut split = 0;
        for k in 0..idx.len() {
            if col[idx[k]] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let node = self.tree.push_leaf(counts);
        self.tree.feature[node] = feature as i32;
        self.tree.threshold[node] = threshold;
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.tree.left[node] = left as u32;
        self.tree.right[node] = right as u32;
        node
    }
}

fn build_tree(x: &[Vec<f64>], y: &[usize], params: &ForestParams, tree_idx: usize) -> Tree {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(tree_idx as u64);
    let mut idx: Vec<usize> = if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
    let mut builder = Builder {
        x,
        y,
        params,
        mtry: params.mtry(x.len()),
        tree: Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], counts: vec![] },
        scratch: Vec::with_capacity(n),
    };
    builder.grow(&mut idx, 0, &mut rng);
    builder.tree
}

/// Fits a forest on raw rows. Trees are grown in parallel, each from its own
/// ChaCha stream, so the result does not depend on the thread count.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    labels: &[Region],
    params: &ForestParams,
    meta: TrainingMeta,
) -> Result<RegionClassifier, RegionError> {
    params.validate()?;
    if x.nrows() != labels.len() {
        return Err(RegionError::LengthMismatch { rows: x.nrows(), labels: labels.len() });
    }
    let y: Vec<usize> = labels.iter().map(|r| r.index()).collect();
    let mut counts = [0usize; 3];
    for &c in &y {
        counts[c] += 1;
    }
    let classes: Vec<Region> = Region::ALL.into_iter().filter(|r| counts[r.index()] > 0).collect();
    if classes.len() < 2 {
        return Err(RegionError::SingleClass);
    }
    if let Some(r) = classes.iter().find(|r| counts[r.index()] < params.min_leaf) {
        return Err(RegionError::TooFewRows(format!(
            "{} has {} rows, fewer than min_leaf {}",
            r,
            counts[r.index()],
            params.min_leaf
        )));
    }
    if x.ncols() == 0 {
        return Err(RegionError::TooFewRows("design matrix has no columns".into()));
    }
    let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let trees: Vec<Tree> =
        (0..params.n_trees).into_par_iter().map(|t| build_tree(&columns, &y, params, t)).collect();
    Ok(RegionClassifier { version: CLASSIFIER_FORMAT_VERSION, n_features: x.ncols(), classes, trees, meta })
}

/// Trains the region forest on a design matrix and per-row labels.
pub fn train_region_classifier(
    m: &DesignMatrix,
    labels: &RegionLabels,
    params: &ForestParams,
) -> Result<RegionClassifier, RegionError> {
    let meta = TrainingMeta {
        window: Some(m.window()),
        kinds: m.kinds().to_string(),
        seed: params.seed,
        rows: m.n_rows(),
    };
    fit_forest(m.values(), labels.labels(), params, meta)
}

impl RegionClassifier {
    /// Vote fractions per class, indexed by [`Region::index`].
    pub fn probabilities(&self, row: ArrayView1<'_, f64>) -> Result<[f64; 3], RegionError> {
        if row.len() != self.n_features {
            return Err(RegionError::ArityMismatch { expected: self.n_features, found: row.len() });
        }
        let mut votes = [0u32; 3];
        for tree in &self.trees {
            votes[tree.vote(row)] += 1;
        }
        let total = self.trees.len() as f64;
        Ok(votes.map(|v| v as f64 / total))
    }

    pub fn classify(&self, row: ArrayView1<'_, f64>) -> Result<(Region, [f64; 3]), RegionError> {
        let p = self.probabilities(row)?;
        let mut best = 0;
        for k in 1..3 {
            if p[k] > p[best] {
                best = k;
            }
        }
        Ok((Region::from_index(best), p))
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Region>, RegionError> {
        x.rows().into_iter().map(|r| self.classify(r).map(|(c, _)| c)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegionError> {
        let c: RegionClassifier =
            serde_json::from_str(text).map_err(|e| RegionError::InvalidParam(format!("bad classifier document: {e}")))?;
        if c.version != CLASSIFIER_FORMAT_VERSION {
            return Err(RegionError::UnsupportedVersion(c.version));
        }
        Ok(c)
    }
}

/// Region with the largest vote fraction, and the fractions themselves.
pub fn classify_region(c: &RegionClassifier, row: ArrayView1<'_, f64>) -> Result<(Region, [f64; 3]), RegionError> {
    c.classify(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn meta() -> TrainingMeta {
        TrainingMeta { window: None, kinds: "test".into(), seed: 0, rows: 0 }
    }

    /// Three bands along feature 0, feature 1 pure noise.
    fn banded(n: usize, seed: u64) -> (Array2<f64>, Vec<Region>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v: f64 = rng.gen_range(0.0..3.0);
            x[[i, 0]] = v;
            x[[i, 1]] = rng.gen_range(0.0..1.0);
            y.push(Region::from_index((v.floor() as usize).min(2)));
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = banded(300, 1);
        let c = fit_forest(x.view(), &y, &ForestParams { n_trees: 25, ..Default::default() }, meta()).unwrap();
        let pred = c.predict_rows(x.view()).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, y) = banded(200, 2);
        let p = ForestParams { n_trees: 10, seed: 5, ..Default::default() };
        let a = fit_forest(x.view(), &y, &p, meta()).unwrap();
        let b = fit_forest(x.view(), &y, &p, meta()).unwrap();
        assert_eq!(a, b);
        let (probe, _) = banded(50, 3);
        assert_eq!(a.predict_rows(probe.view()).unwrap(), b.predict_rows(probe.view()).unwrap());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = banded(200, 4);
        let c = fit_forest(x.view(), &y, &ForestParams { n_trees: 7, ..Default::default() }, meta()).unwrap();
        let (probe, _) = banded(100, 9);
        for row in probe.rows() {
            let p = c.probabilities(row).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn pure_leaf_row_gets_training_label() {
        let (x, y) = banded(150, 6);
        let p = ForestParams { n_trees: 1, bootstrap: false, features_per_split: Some(2), min_leaf: 1, ..Default::default() };
        let c = fit_forest(x.view(), &y, &p, meta()).unwrap();
        for (row, label) in x.rows().into_iter().zip(&y) {
            assert_eq!(c.classify(row).unwrap().0, *label);
        }
    }

    #[test]
    fn duplicating_a_row_leaves_single_tree_predictions() {
        let (x, y) = banded(120, 7);
        let p = ForestParams { n_trees: 1, bootstrap: false, features_per_split: Some(2), min_leaf: 1, ..Default::default() };
        let base = fit_forest(x.view(), &y, &p, meta()).unwrap();
        let mut x2 = x.clone();
        x2.push_row(x.row(17)).unwrap();
        let mut y2 = y.clone();
        y2.push(y[17]);
        let dup = fit_forest(x2.view(), &y2, &p, meta()).unwrap();
        let (probe, _) = banded(200, 8);
        assert_eq!(base.predict_rows(probe.view()).unwrap(), dup.predict_rows(probe.view()).unwrap());
    }

    #[test]
    fn error_paths() {
        let (x, _) = banded(20, 1);
        let y = vec![Region::Rise; 20];
        assert!(matches!(fit_forest(x.view(), &y, &ForestParams::default(), meta()), Err(RegionError::SingleClass)));
        let mut y = vec![Region::Rise; 20];
        y[0] = Region::Decay;
        assert!(matches!(fit_forest(x.view(), &y, &ForestParams::default(), meta()), Err(RegionError::TooFewRows(_))));
        let (x, y) = banded(60, 1);
        let c = fit_forest(x.view(), &y, &ForestParams { n_trees: 3, ..Default::default() }, meta()).unwrap();
        let row = ndarray::arr1(&[1.0, 2.0, 3.0]);
        assert!(matches!(c.classify(row.view()), Err(RegionError::ArityMismatch { expected: 2, found: 3 })));
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = banded(100, 1);
        let c = fit_forest(x.view(), &y, &ForestParams { n_trees: 3, ..Default::default() }, meta()).unwrap();
        assert_eq!(RegionClassifier::from_json(&c.to_json()).unwrap(), c);
    }
}
