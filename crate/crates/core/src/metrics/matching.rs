//! Maximum-weight one-to-one matching used by multi-object grounding F1.

/// Dense rectangular score matrix (rows = predictions, cols = ground truths).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Optimal assignment maximizing total score; returns (row, col) pairs.
///
/// Every row is matched when rows <= cols (and vice versa); thresholding
/// into true positives happens at the metric layer.
pub fn max_score_matching(scores: &ScoreMatrix) -> Vec<(usize, usize)> {
    if scores.rows == 0 || scores.cols == 0 {
        return Vec::new();
    }
    if scores.rows <= scores.cols {
        let cost: Vec<Vec<f64>> = (0..scores.rows)
            .map(|r| (0..scores.cols).map(|c| -scores.at(r, c)).collect())
            .collect();
        min_cost_assignment(&cost)
    } else {
        let cost: Vec<Vec<f64>> = (0..scores.cols)
            .map(|c| (0..scores.rows).map(|r| -scores.at(r, c)).collect())
            .collect();
        min_cost_assignment(&cost)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    }
}

/// Hungarian algorithm with potentials (augmenting-path form) for an
/// n x m cost matrix with n <= m; O(n^2 m).
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-indexed potentials and matching, matching[j] = row matched to col j
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matching = vec![0usize; m + 1];
    for i in 1..=n {
        let mut links = vec![0usize; m + 1];
        let mut mins = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        matching[0] = i;
        let mut j0 = 0usize;
        loop {
            used[j0] = true;
            let i0 = matching[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < mins[j] {
                    mins[j] = cur;
                    links[j] = j0;
                }
                if mins[j] < delta {
                    delta = mins[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matching[j]] += delta;
                    v[j] -= delta;
                } else {
                    mins[j] -= delta;
                }
            }
            j0 = j1;
            if matching[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = links[j0];
            matching[j0] = matching[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs = Vec::with_capacity(n);
    for j in 1..=m {
        if matching[j] != 0 {
            pairs.push((matching[j] - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Exhaustive search over all injective row-to-column maps; test oracle for
/// small instances.
pub fn bruteforce_max_matching(scores: &ScoreMatrix) -> f64 {
    fn recurse(scores: &ScoreMatrix, row: usize, used: &mut [bool]) -> f64 {
        if row == scores.rows {
            return 0.0;
        }
        // every row may also stay unmatched
        let mut best = recurse(scores, row + 1, used);
        for c in 0..scores.cols {
            if used[c] {
                continue;
            }
            used[c] = true;
            let total = scores.at(row, c) + recurse(scores, row + 1, used);
            used[c] = false;
            if total > best {
                best = total;
            }
        }
        best
    }
    let mut used = vec![false; scores.cols];
    recurse(scores, 0, &mut used)
}
