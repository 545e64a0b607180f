//! Grid machinery behind MIC: ranks, equipartitions, clumps and the dynamic
//! program that finds the column partition maximizing mutual information
//! against a fixed row partition.
//!
//! Mutual information is in bits. For a column partition P against rows Q,
//! `I(P; Q) = H(Q) - H(Q | P)`, and `n * H(Q | P)` is the sum over columns of
//! `n_c log2 n_c - sum_r n_cr log2 n_cr`. That sum is additive over columns,
//! so the optimum over cut points is an exact shortest-path style recursion.

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Average ranks (1-based); tied values share the mean of their positions.
/// Sorting is stable, so ties are visited in original index order.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Point indices sorted by value (stable) and the sizes of runs of equal
/// values in that order.
fn sorted_groups(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        sizes.push(j - i);
        i = j;
    }
    (order, sizes)
}

/// Greedy equipartition of consecutive groups into at most `bins` bins of
/// roughly equal point count; a group never straddles two bins. When ties
/// make the target unreachable, fewer bins come out. Returns the bin of
/// each group.
pub fn equipartition_groups(sizes: &[usize], bins: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(sizes.len());
    let mut bin = 0usize;
    let mut in_bin = 0usize;
    let mut assigned = 0usize;
    let mut desired = total as f64 / bins as f64;
    for &s in sizes {
        if in_bin != 0
            && bin + 1 < bins
            && ((in_bin + s) as f64 - desired).abs() >= (in_bin as f64 - desired).abs()
        {
            bin += 1;
            in_bin = 0;
            desired = (total - assigned) as f64 / (bins - bin) as f64;
        }
        out.push(bin);
        in_bin += s;
        assigned += s;
    }
    out
}

/// Row index of every point for an equipartition of `values` into `rows` rows.
/// Returns the assignment and the number of rows actually used.
pub fn equipartition(values: &[f64], rows: usize) -> (Vec<usize>, usize) {
    let (order, sizes) = sorted_groups(values);
    let group_bin = equipartition_groups(&sizes, rows);
    let mut assignment = vec![0; values.len()];
    let mut pos = 0;
    for (g, &s) in sizes.iter().enumerate() {
        for &k in &order[pos..pos + s] {
            assignment[k] = group_bin[g];
        }
        pos += s;
    }
    let used = group_bin.last().map_or(0, |b| b + 1);
    (assignment, used)
}

/// `k * log2(k)` with `0 log 0 = 0`.
#[inline]
pub(crate) fn nlog2n(k: usize) -> f64 {
    if k <= 1 {
        0.0
    } else {
        let k = k as f64;
        k * k.log2()
    }
}

/// `n_c log2 n_c - sum_r n_cr log2 n_cr` for one column's per-row counts:
/// the column's contribution to `n * H(Q | P)`.
pub(crate) fn column_cost(row_counts: &[usize]) -> f64 {
    let total: usize = row_counts.iter().sum();
    let mut cost = nlog2n(total);
    for &c in row_counts {
        cost -= nlog2n(c);
    }
    cost
}

/// `n * H(Q)` for row sizes.
pub(crate) fn row_entropy_n(row_sizes: &[usize]) -> f64 {
    column_cost(row_sizes)
}

/// Mutual information in bits from `n H(Q)` and `n H(Q | P)`.
pub(crate) fn mutual_information(hq_n: f64, conditional_n: f64, n: usize) -> f64 {
    ((hq_n - conditional_n) / n as f64).max(0.0)
}

/// Best partition of the x axis into at most `columns` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPartition {
    pub columns: usize,
    /// Exclusive end of each non-empty column, as a count of points in
    /// x-sorted order; the last entry is `n`.
    pub boundaries: Vec<usize>,
    /// Mutual information against the row equipartition, in bits.
    pub mutual_information: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisOptimum {
    /// Rows the equipartition actually produced (may be fewer than requested
    /// when ties collide).
    pub rows_used: usize,
    /// One entry per column count `2..=max_cols`.
    pub partitions: Vec<AxisPartition>,
}

impl AxisOptimum {
    pub fn mutual_information(&self, columns: usize) -> Option<f64> {
        self.partitions.iter().find(|p| p.columns == columns).map(|p| p.mutual_information)
    }
}

/// Clump boundaries (exclusive ends, in x-sorted order).
///
/// Points with equal x always share a clump. Runs of x-groups whose points all
/// sit in the same row merge into one clump; a group spanning several rows is
/// a clump of its own.
fn clump_ends(x_sizes: &[usize], sorted_rows: &[usize]) -> Vec<usize> {
    const MIXED: usize = usize::MAX;
    let mut ends: Vec<usize> = Vec::new();
    let mut last_label: Option<usize> = None;
    let mut pos = 0;
    for &s in x_sizes {
        let first = sorted_rows[pos];
        let label = if sorted_rows[pos..pos + s].iter().all(|&r| r == first) { first } else { MIXED };
        pos += s;
        match (last_label, ends.last_mut()) {
            (Some(prev), Some(end)) if prev == label && label != MIXED => *end = pos,
            _ => ends.push(pos),
        }
        last_label = Some(label);
    }
    ends
}

/// Merges clumps into at most `max_clumps` superclumps by equipartitioning
/// clump sizes.
fn superclump_ends(ends: &[usize], max_clumps: usize) -> Vec<usize> {
    if ends.len() <= max_clumps {
        return ends.to_vec();
    }
    let sizes: Vec<usize> = ends.iter().scan(0, |prev, &e| {
        let s = e - *prev;
        *prev = e;
        Some(s)
    }).collect();
    let bins = equipartition_groups(&sizes, max_clumps);
    let mut out = Vec::new();
    for (i, &e) in ends.iter().enumerate() {
        if i + 1 == ends.len() || bins[i + 1] != bins[i] {
            out.push(e);
        }
    }
    out
}

/// For a fixed equipartition of the y axis into `rows` rows, finds for every
/// column count `l` in `2..=max_cols` the x-axis partition (with at most `l`
/// columns) maximizing mutual information.
///
/// Cut points are restricted to clump boundaries; when there are more than
/// `clump_factor * max_cols` clumps they are first merged into that many
/// superclumps.
pub fn optimize_axis_partition(
    ranks_x: &[f64],
    ranks_y: &[f64],
    rows: usize,
    max_cols: usize,
    clump_factor: usize,
) -> Result<AxisOptimum, StatsError> {
    let n = ranks_x.len();
    if n != ranks_y.len() {
        return Err(StatsError::LengthMismatch { left: n, right: ranks_y.len() });
    }
    if n < 4 {
        return Err(StatsError::TooFewPoints { n, min: 4 });
    }
    if rows < 2 || max_cols < 2 || clump_factor == 0 {
        return Err(StatsError::InvalidParams(format!(
            "need rows >= 2, max_cols >= 2, clump factor >= 1 (got {rows}, {max_cols}, {clump_factor})"
        )));
    }

    let (row_of, rows_used) = equipartition(ranks_y, rows);
    let (x_order, x_sizes) = sorted_groups(ranks_x);
    let sorted_rows: Vec<usize> = x_order.iter().map(|&k| row_of[k]).collect();

    let clumps = clump_ends(&x_sizes, &sorted_rows);
    let ends = superclump_ends(&clumps, clump_factor.saturating_mul(max_cols));
    let k = ends.len();

    // cumulative per-row counts at each boundary: cum[t * rows_used + r]
    let mut cum = vec![0usize; (k + 1) * rows_used];
    let mut pos = 0;
    for (t, &end) in ends.iter().enumerate() {
        let (prev, next) = cum.split_at_mut((t + 1) * rows_used);
        next[..rows_used].copy_from_slice(&prev[t * rows_used..]);
        for &r in &sorted_rows[pos..end] {
            next[r] += 1;
        }
        pos = end;
    }
    let mut counts = vec![0usize; rows_used];
    let mut cost = |s: usize, t: usize| -> f64 {
        for r in 0..rows_used {
            counts[r] = cum[t * rows_used + r] - cum[s * rows_used + r];
        }
        column_cost(&counts)
    };

    let mut row_sizes = vec![0usize; rows_used];
    for &r in &row_of {
        row_sizes[r] += 1;
    }
    let hq_n = row_entropy_n(&row_sizes);

    // best[l][t]: minimal n H(Q|P) over the first t clumps in exactly l columns
    let max_l = max_cols.min(k);
    let mut best = vec![vec![f64::INFINITY; k + 1]; max_l + 1];
    let mut arg = vec![vec![0usize; k + 1]; max_l + 1];
    for t in 1..=k {
        best[1][t] = cost(0, t);
    }
    let mut cost_table = vec![0.0; (k + 1) * (k + 1)];
    if max_l >= 2 {
        for s in 1..k {
            for t in s + 1..=k {
                cost_table[s * (k + 1) + t] = cost(s, t);
            }
        }
    }
    for l in 2..=max_l {
        for t in l..=k {
            let mut b = f64::INFINITY;
            let mut a = 0;
            for s in l - 1..t {
                let v = best[l - 1][s] + cost_table[s * (k + 1) + t];
                if v < b {
                    b = v;
                    a = s;
                }
            }
            best[l][t] = b;
            arg[l][t] = a;
        }
    }

    let mut partitions = Vec::with_capacity(max_cols - 1);
    let mut running: Option<(f64, usize)> = None;
    for l in 1..=max_cols {
        if l <= max_l && running.is_none_or(|(v, _)| best[l][k] < v) {
            running = Some((best[l][k], l));
        }
        if l < 2 {
            continue;
        }
        let (value, used) = running.expect("at least one column");
        let mut boundaries = Vec::with_capacity(used);
        let mut t = k;
        for ll in (1..=used).rev() {
            boundaries.push(ends[t - 1]);
            if ll > 1 {
                t = arg[ll][t];
            }
        }
        boundaries.reverse();
        partitions.push(AxisPartition {
            columns: l,
            boundaries,
            mutual_information: mutual_information(hq_n, value, n),
        });
    }
    Ok(AxisOptimum { rows_used, partitions })
}
