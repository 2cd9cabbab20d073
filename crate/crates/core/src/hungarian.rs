//! Rectangular linear assignment (Kuhn-Munkres with potentials).

/// Maximum-benefit injective assignment of rows to columns.
///
/// Works for any shape: when there are more rows than columns the problem is
/// solved on the transpose, and unmatched rows map to `None`. The total is
/// summed from the original benefits, so integer-valued inputs give exact
/// totals.
pub fn max_benefit_assignment(benefit: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let n = benefit.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = benefit[0].len();
    assert!(benefit.iter().all(|r| r.len() == m), "ragged benefit matrix");
    if m == 0 {
        return (vec![None; n], 0.0);
    }
    let mut rows_to_cols = vec![None; n];
    if n <= m {
        let cost: Vec<Vec<f64>> = benefit.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        for (i, j) in min_cost_rows(&cost).into_iter().enumerate() {
            rows_to_cols[i] = Some(j);
        }
    } else {
        let cost: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| -benefit[i][j]).collect()).collect();
        for (j, i) in min_cost_rows(&cost).into_iter().enumerate() {
            rows_to_cols[i] = Some(j);
        }
    }
    let total = rows_to_cols
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| benefit[i][j]))
        .sum();
    (rows_to_cols, total)
}

/// Minimum-cost assignment for `n <= m`; returns the column of every row.
fn min_cost_rows(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; way[j]: previous column on the path
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}
