use serde::{Deserialize, Serialize};

use super::{Region, RegionClassifier, RegionError, RegionLabels};
use crate::temporal::DesignMatrix;

/// One-vs-rest ROC AUC per region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionAuc {
    pub rise: f64,
    pub sustain: f64,
    pub decay: f64,
}

impl RegionAuc {
    pub fn get(&self, r: Region) -> f64 {
        match r {
            Region::Rise => self.rise,
            Region::Sustain => self.sustain,
            Region::Decay => self.decay,
        }
    }

    pub fn min(&self) -> f64 {
        self.rise.min(self.sustain).min(self.decay)
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; tied scores
/// share their average rank. Returns `None` when either class is empty.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// One-vs-rest AUC of the classifier's vote fractions on `m`.
pub fn region_roc(c: &RegionClassifier, m: &DesignMatrix, labels: &RegionLabels) -> Result<RegionAuc, RegionError> {
    if m.n_rows() != labels.len() {
        return Err(RegionError::LengthMismatch { rows: m.n_rows(), labels: labels.len() });
    }
    let probs: Vec<[f64; 3]> =
        m.values().rows().into_iter().map(|row| c.probabilities(row)).collect::<Result<_, _>>()?;
    let mut out = [0.0; 3];
    for region in Region::ALL {
        let k = region.index();
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let positive: Vec<bool> = labels.labels().iter().map(|&l| l == region).collect();
        out[k] = auc(&scores, &positive).ok_or(RegionError::MissingClass(region))?;
    }
    Ok(RegionAuc { rise: out[0], sustain: out[1], decay: out[2] })
}
