//! Minimum-cost bipartite assignment (Hungarian algorithm with potentials,
//! O(n²m) for an n×m matrix with n ≤ m).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(query, target)` pairs sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of matched costs, accumulated in query order.
    pub total_cost: f64,
}

impl MatchResult {
    pub fn target_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == query).map(|p| p.1)
    }
}

/// Assigns `min(rows, cols)` pairs minimizing the total cost of a row-major
/// `rows × cols` matrix.
pub fn hungarian_match(cost: &[f64], rows: usize, cols: usize) -> Result<MatchResult> {
    if cost.len() != rows * cols {
        return Err(Error::Dimension(format!("cost matrix {rows}x{cols} with {} entries", cost.len())));
    }
    if rows == 0 || cols == 0 {
        return Ok(MatchResult::default());
    }
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("cost matrix contains non-finite value {v}")));
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j * cols + i] } else { cost[i * cols + j] };

    // 1-indexed potentials; p[j] is the row assigned to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
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

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(q, t)| cost[q * cols + t]).sum();
    Ok(MatchResult { pairs, total_cost })
}

pub fn hungarian_match_tensor(cost: &Tensor<f64>) -> Result<MatchResult> {
    let [r, c] = cost.dims2()?;
    hungarian_match(cost.data(), r, c)
}
