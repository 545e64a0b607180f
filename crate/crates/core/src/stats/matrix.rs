use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{mic_pairs, MicParams, StatsError};
use crate::dataset::{AnnotationTrace, FeatureSeries, CHANNELS};

/// Table of MIC scores; rows are features (or states), columns are states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    scores: Vec<Vec<f64>>,
}

impl MicMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if scores.len() != rows.len() || scores.iter().any(|r| r.len() != cols.len()) {
            return Err(StatsError::Malformed(format!(
                "expected {}x{} scores",
                rows.len(),
                cols.len()
            )));
        }
        if scores.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(StatsError::Malformed("scores must lie in [0, 1]".into()));
        }
        Ok(MicMatrix { rows, cols, scores })
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.rows.iter().position(|r| r == row)?;
        let j = self.cols.iter().position(|c| c == col)?;
        Some(self.scores[i][j])
    }

    /// The sub-table for a single column.
    pub fn column(&self, col: &str) -> Option<MicMatrix> {
        let j = self.cols.iter().position(|c| c == col)?;
        Some(MicMatrix {
            rows: self.rows.clone(),
            cols: vec![col.to_string()],
            scores: self.scores.iter().map(|r| vec![r[j]]).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StatsError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["feature".to_string()];
        header.extend(self.cols.iter().cloned());
        let map = |e: csv::Error| StatsError::Malformed(e.to_string());
        out.write_record(&header).map_err(map)?;
        for (name, row) in self.rows.iter().zip(&self.scores) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            out.write_record(&rec).map_err(map)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let map = |e: csv::Error| StatsError::Malformed(e.to_string());
        let header = rdr.headers().map_err(map)?.clone();
        if header.len() < 2 {
            return Err(StatsError::Malformed("need a name column and at least one score column".into()));
        }
        let cols: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(map)?;
            rows.push(rec[0].trim().to_string());
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| StatsError::Malformed(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            scores.push(vals);
        }
        MicMatrix::new(rows, cols, scores)
    }

    /// Plain-text ranking of the top `k` rows per column.
    pub fn ranked_report(&self, k: usize, header: &str) -> String {
        let mut s = String::new();
        if !header.is_empty() {
            for line in header.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        for (j, col) in self.cols.iter().enumerate() {
            let mut order: Vec<usize> = (0..self.rows.len()).collect();
            order.sort_by(|&a, &b| self.scores[b][j].total_cmp(&self.scores[a][j]).then(a.cmp(&b)));
            let _ = writeln!(s, "{col}:");
            for (rank, &i) in order.iter().take(k).enumerate() {
                let _ = writeln!(s, "  {}. {} {:.3}", rank + 1, self.rows[i], self.scores[i][j]);
            }
        }
        s
    }
}

/// MIC of every named row series against every named column series.
pub fn mic_table(rows: &[(String, Vec<f64>)], cols: &[(String, Vec<f64>)], p: &MicParams) -> Result<MicMatrix, StatsError> {
    let xs: Vec<&[f64]> = rows.iter().map(|r| r.1.as_slice()).collect();
    let ys: Vec<&[f64]> = cols.iter().map(|c| c.1.as_slice()).collect();
    let flat = mic_pairs(&xs, &ys, p)?;
    let scores = flat.chunks(cols.len().max(1)).map(|c| c.to_vec()).collect();
    MicMatrix::new(
        rows.iter().map(|r| r.0.clone()).collect(),
        cols.iter().map(|c| c.0.clone()).collect(),
        scores,
    )
}

/// Channel-by-state MIC scores.
pub fn mic_matrix(features: &FeatureSeries, traces: &[AnnotationTrace], p: &MicParams) -> Result<MicMatrix, StatsError> {
    let n = features.n_frames();
    for t in traces {
        if t.len() != n {
            return Err(StatsError::LengthMismatch { left: n, right: t.len() });
        }
    }
    let rows: Vec<(String, Vec<f64>)> =
        CHANNELS.iter().enumerate().map(|(c, name)| (name.to_string(), features.channel(c).to_vec())).collect();
    let cols: Vec<(String, Vec<f64>)> = traces.iter().map(|t| (t.state().to_string(), t.values().to_vec())).collect();
    mic_table(&rows, &cols, p)
}

/// Pairwise MIC between state traces; symmetric with a unit diagonal.
pub fn emotion_mic_matrix(traces: &[AnnotationTrace], p: &MicParams) -> Result<MicMatrix, StatsError> {
    if traces.len() < 2 {
        return Err(StatsError::InvalidParams("need at least two traces".into()));
    }
    let n = traces[0].len();
    if let Some(t) = traces.iter().find(|t| t.len() != n) {
        return Err(StatsError::LengthMismatch { left: n, right: t.len() });
    }
    let k = traces.len();
    let upper: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let values: Vec<f64> = {
        use rayon::prelude::*;
        upper
            .par_iter()
            .map(|&(i, j)| super::mic(traces[i].values(), traces[j].values(), p))
            .collect::<Result<_, _>>()?
    };
    let mut scores = vec![vec![1.0; k]; k];
    for (&(i, j), v) in upper.iter().zip(values) {
        scores[i][j] = v;
        scores[j][i] = v;
    }
    let names: Vec<String> = traces.iter().map(|t| t.state().to_string()).collect();
    MicMatrix::new(names.clone(), names, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmState;

    #[test]
    fn csv_round_trip() {
        let m = MicMatrix::new(
            vec!["Yaw".into(), "Pitch".into()],
            vec!["Agreement".into()],
            vec![vec![0.728], vec![0.1 + 0.2]],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(MicMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(MicMatrix::new(vec!["a".into()], vec!["b".into()], vec![vec![1.5]]).is_err());
    }

    #[test]
    fn report_ranks_descending() {
        let m = MicMatrix::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec!["S".into()],
            vec![vec![0.2], vec![0.9], vec![0.5], vec![0.1]],
        )
        .unwrap();
        let r = m.ranked_report(3, "alpha=0.6");
        assert_eq!(r, "# alpha=0.6\nS:\n  1. b 0.900\n  2. c 0.500\n  3. a 0.200\n");
    }

    #[test]
    fn identical_traces() {
        let v: Vec<f64> = (0..60).map(|i| ((i as f64) * 0.3).sin()).collect();
        let a = AnnotationTrace::new(EmState::Agreement, v.clone(), 25.0).unwrap();
        let b = AnnotationTrace::new(EmState::Interest, v, 25.0).unwrap();
        let m = emotion_mic_matrix(&[a, b], &MicParams::default()).unwrap();
        assert_eq!(m.scores()[0][1], 1.0);
        assert_eq!(m.scores()[0][1], m.scores()[1][0]);
    }
}
