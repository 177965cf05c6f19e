//! Dense linear assignment by shortest augmenting paths with dual potentials
//! (the Jonker-Volgenant scheme). O(n³) worst case, exact for f64 costs in
//! the sense that the returned permutation minimises the true matrix sum.
//!
//! Determinism: rows are inserted in increasing index order and the Dijkstra
//! frontier breaks ties by strict improvement, so among equal-cost optima the
//! lowest-index augmentation wins and the permutation is reproducible.

/// `cost` is row-major n×n. Returns `pairing` with `pairing[row] = col`.
pub(crate) fn solve(n: usize, cost: &[f64]) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    // col_row[j] = row currently matched to column j; index n is the virtual
    // column that temporarily holds the row being inserted.
    let mut col_row = vec![usize::MAX; n + 1];
    let mut u = vec![0.0f64; n]; // row potentials
    let mut v = vec![0.0f64; n + 1]; // column potentials (incl. virtual)
    let mut min_slack = vec![0.0f64; n + 1];
    let mut prev_col = vec![0usize; n + 1];
    let mut used = vec![false; n + 1];

    for row in 0..n {
        col_row[n] = row;
        let mut j_cur = n;
        min_slack[..n].fill(f64::INFINITY);
        used.fill(false);

        // Dijkstra over columns with reduced costs.
        loop {
            used[j_cur] = true;
            let i_cur = col_row[j_cur];
            let mut delta = f64::INFINITY;
            let mut j_next = n;
            let base = i_cur * n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost[base + j] - u[i_cur] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    prev_col[j] = j_cur;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j_next = j;
                }
            }
            // A free column always exists, so delta is finite.
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j_cur = j_next;
            if col_row[j_cur] == usize::MAX {
                break;
            }
        }

        // Walk the augmenting path back to the virtual column.
        loop {
            let j_prev = prev_col[j_cur];
            col_row[j_cur] = col_row[j_prev];
            j_cur = j_prev;
            if j_cur == n {
                break;
            }
        }
    }

    let mut pairing = vec![0usize; n];
    for j in 0..n {
        pairing[col_row[j]] = j;
    }
    pairing
}
