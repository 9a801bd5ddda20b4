use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-spaced time bins `[e_0, e_1), ..., [e_{n-1}, e_n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogBins {
    pub edges: Vec<f64>,
}

impl LogBins {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) || n == 0 {
            return Err(Error::invalid(format!("bad log bins [{lo}, {hi}] x {n}")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut edges: Vec<f64> = (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect();
        edges[0] = lo;
        edges[n] = hi;
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Geometric bin centres.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect()
    }

    pub fn lo(&self, b: usize) -> f64 {
        self.edges[b]
    }

    pub fn hi(&self, b: usize) -> f64 {
        self.edges[b + 1]
    }
}

pub fn bin_index(bins: &LogBins, t: f64) -> Option<usize> {
    let n = bins.len();
    if !(t >= bins.edges[0] && t <= bins.edges[n]) {
        return None;
    }
    let b = bins.edges.partition_point(|&e| e <= t);
    Some(b.saturating_sub(1).min(n - 1))
}
