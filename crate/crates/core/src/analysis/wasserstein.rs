use rand::seq::index::sample;
use rand::Rng;

use crate::datagen::{dist2, Point};
use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns `assignment[row] = column`. Shortest augmenting paths with
/// potentials, `O(n^3)`.
pub fn linear_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::invalid(format!("cost matrix has {} entries, expected {n}x{n}", cost.len())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    // 1-based internals: column 0 is the virtual start of each augmenting path.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let base = (i0 - 1) * n;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[base + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Empirical W-2 distance between two equally sized point sets, via an
/// exact optimal assignment on squared Euclidean costs.
pub fn wasserstein2(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("W-2 needs non-empty sample sets"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "W-2 needs equal sample counts, got {} and {} (subsample the larger set first)",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| dist2(*p, *q))).collect();
    let assignment = linear_assignment(&cost, n)?;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).sqrt())
}

/// Uniform subsample without replacement (order preserved).
pub fn subsample<R: Rng + ?Sized>(points: &[Point], n: usize, rng: &mut R) -> Vec<Point> {
    if n >= points.len() {
        return points.to_vec();
    }
    let mut idx = sample(rng, points.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}
