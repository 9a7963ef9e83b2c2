//! Minimum-cost perfect matching on a dense square cost matrix.

/// Shortest-augmenting-path Hungarian algorithm with row and column
/// potentials, `O(n^3)`. Returns `assignment[row] = column`. Costs must be
/// finite.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            let base = (r - 1) * n;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = cost[base + c - 1] - u[r] - v[c];
                if reduced < minv[c] {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        // Augment along the alternating path back to the source.
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for c in 1..=n {
        if owner[c] > 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    assignment
}
