//! Exhaustive grid search, shared by the MIC tests and the acceptance run.

use ems_core::stats::equipartition;

fn nlog2n(k: usize) -> f64 {
    if k <= 1 {
        0.0
    } else {
        k as f64 * (k as f64).log2()
    }
}

fn cost(counts: &[usize]) -> f64 {
    let mut c = nlog2n(counts.iter().sum());
    for &k in counts {
        c -= nlog2n(k);
    }
    c
}

/// Exhaustive best mutual information over every placement of at most
/// `cols - 1` cuts between x-sorted, tie-free points.
pub fn brute_force(x: &[f64], y: &[f64], rows: usize, cols: usize) -> f64 {
    let n = x.len();
    let (row_of, used) = equipartition(y, rows);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sorted: Vec<usize> = order.iter().map(|&k| row_of[k]).collect();
    let mut sizes = vec![0; used];
    for &r in &row_of {
        sizes[r] += 1;
    }
    let hq = cost(&sizes);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize + 1 > cols {
            continue;
        }
        let mut total = 0.0;
        let mut counts = vec![0; used];
        for (i, &r) in sorted.iter().enumerate() {
            counts[r] += 1;
            if i == n - 1 || mask & (1 << i) != 0 {
                total += cost(&counts);
                counts.iter_mut().for_each(|c| *c = 0);
            }
        }
        if total < best {
            best = total;
        }
    }
    ((hq - best) / n as f64).max(0.0)
}

