use crate::{Error, Result};

/// Query-target pairs, sorted by target index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    /// Target matched to each query, if any.
    pub fn target_of(&self, queries: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; queries];
        for &(q, t) in &self.pairs {
            out[q] = Some(t);
        }
        out
    }
}

/// Sum of `cost[q][t]` over the pairs, accumulated in target order.
pub fn assignment_cost(cost: &[Vec<f64>], m: &MatchResult) -> f64 {
    m.pairs.iter().map(|&(q, t)| cost[q][t]).sum()
}

/// Minimum-cost assignment of every column of an `n x m` cost matrix
/// (`n >= m`) to a distinct row.
///
/// Shortest augmenting paths with row/column potentials, O(m^2 n).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Invalid("cost matrix rows differ in length".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix".into()));
    }
    if m > n {
        return Err(Error::Invalid(format!("cannot assign {m} targets to {n} queries")));
    }
    if m == 0 {
        return Ok(MatchResult { pairs: vec![] });
    }
    // Work on the transpose: targets are the "rows" being assigned, queries
    // the "columns". Index 0 is a sentinel.
    let a = |t: usize, q: usize| cost[q - 1][t - 1];
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for t in 1..=m {
        owner[0] = t;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n).filter(|&j| owner[j] != 0).map(|j| (j - 1, owner[j] - 1)).collect();
    pairs.sort_by_key(|&(_, t)| t);
    Ok(MatchResult { pairs })
}
