//! Optimal linear assignment (Hungarian method, shortest augmenting path).

/// Minimum-cost assignment on a dense `rows x cols` cost matrix.
///
/// Returns, for each row, the assigned column (`None` when `rows > cols`
/// leaves it unassigned). Every column is used at most once.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_rows = cost.len();
    if n_rows == 0 {
        return Vec::new();
    }
    let n_cols = cost[0].len();
    let transposed = n_rows > n_cols;
    // Work on an n <= m matrix.
    let (n, m) = if transposed { (n_cols, n_rows) } else { (n_rows, n_cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };
    if n == 0 {
        return vec![None; n_rows];
    }

    // 1-based potentials formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
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
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut out = vec![None; n_rows];
    for j in 1..=m {
        if p[j] != 0 {
            let (row, col) = if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            out[row] = Some(col);
        }
    }
    out
}
