//! Ground-truth 2-D Gaussian mixture plus its closed-form diffused score
//! and posterior-mean denoiser, used both for data and as test oracles.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::log_sum_exp;

pub type Point = [f64; 2];

/// Isotropic Gaussian mixture with one shared component std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Point>,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Point>, sigma: f64, weights: Vec<f64>) -> Result<Self> {
        let spec = Self { means, sigma, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(means: Vec<Point>, sigma: f64) -> Result<Self> {
        let w = vec![1.0 / means.len() as f64; means.len()];
        Self::new(means, sigma, w)
    }

    pub fn single(mean: Point, sigma: f64) -> Self {
        Self {
            means: vec![mean],
            sigma,
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("component std must be positive, got {}", self.sigma)));
        }
        if self.weights.len() != self.means.len() {
            return Err(Error::invalid("one weight per component"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    /// Per-component log responsibilities `log p(c | x)` at noise level `t`.
    pub fn log_responsibilities(&self, x: Point, t: f64) -> Vec<f64> {
        let var = self.sigma * self.sigma + t * t;
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &w)| w.ln() - dist2(x, *mu) / (2.0 * var))
            .collect();
        let lse = log_sum_exp(&logits);
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// `log p(x; t)` of the mixture convolved with `N(0, t^2 I)`.
    pub fn log_density(&self, x: Point, t: f64) -> f64 {
        let var = self.sigma * self.sigma + t * t;
        let logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .map(|(mu, &w)| w.ln() - dist2(x, *mu) / (2.0 * var))
            .collect();
        log_sum_exp(&logits) - (2.0 * std::f64::consts::PI * var).ln()
    }
}

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Eight components on the regular octagon of radius 3, std 0.2, equal weights.
pub fn default_mixture() -> MixtureSpec {
    let r = 3.0;
    let d = r / 2f64.sqrt();
    let means = vec![
        [r, 0.0],
        [-r, 0.0],
        [0.0, r],
        [0.0, -r],
        [d, d],
        [d, -d],
        [-d, d],
        [-d, -d],
    ];
    MixtureSpec::uniform(means, 0.2).expect("default mixture is valid")
}

/// Samples with their generating component. Labels are diagnostics only.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Vec<Point>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pooled per-coordinate standard deviation.
    pub fn std(&self) -> f64 {
        let n = (self.points.len() * 2) as f64;
        let mean = self.points.iter().map(|p| p[0] + p[1]).sum::<f64>() / n;
        let var = self
            .points
            .iter()
            .map(|p| (p[0] - mean).powi(2) + (p[1] - mean).powi(2))
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    /// Writes `x,y,component` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,component")?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            writeln!(out, "{},{},{}", fmt17(p[0]), fmt17(p[1]), l)?;
        }
        Ok(())
    }
}

/// Decimal with 17 significant digits (round-trips any `f64`).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Exactly `n_per_component` draws from every component, in component order.
pub fn sample_dataset(spec: &MixtureSpec, n_per_component: usize, seed: u64) -> Result<Dataset> {
    if n_per_component == 0 {
        return Err(Error::invalid("n_per_component must be at least 1"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_per_component * spec.n_components());
    let mut labels = Vec::with_capacity(points.capacity());
    for (c, mu) in spec.means.iter().enumerate() {
        for _ in 0..n_per_component {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            points.push([mu[0] + spec.sigma * e0, mu[1] + spec.sigma * e1]);
            labels.push(c);
        }
    }
    Ok(Dataset { points, labels })
}

/// Independent draws following the mixture weights.
pub fn sample_iid<R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Dataset {
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = spec.n_components() - 1;
        for (i, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let mu = spec.means[c];
        points.push([mu[0] + spec.sigma * e0, mu[1] + spec.sigma * e1]);
        labels.push(c);
    }
    Dataset { points, labels }
}

/// `grad_x log p(x; t)` for the mixture diffused to noise level `t`.
pub fn diffused_score(spec: &MixtureSpec, x: Point, t: f64) -> Point {
    let var = spec.sigma * spec.sigma + t * t;
    // Each component contributes (mu - x) / var, weighted by responsibility.
    let mean = posterior_component_mean(spec, x, t);
    [(mean[0] - x[0]) / var, (mean[1] - x[1]) / var]
}

/// Responsibility-weighted component mean `sum_c p(c|x) mu_c`.
fn posterior_component_mean(spec: &MixtureSpec, x: Point, t: f64) -> Point {
    let lr = spec.log_responsibilities(x, t);
    let mut m = [0.0; 2];
    for (mu, l) in spec.means.iter().zip(lr) {
        let r = l.exp();
        m[0] += r * mu[0];
        m[1] += r * mu[1];
    }
    m
}

/// Posterior mean `E[y | x]` for `x = y + t n`: the ideal denoiser.
pub fn exact_denoiser(spec: &MixtureSpec, x: Point, t: f64) -> Point {
    if t == 0.0 {
        return x;
    }
    let s2 = spec.sigma * spec.sigma;
    let t2 = t * t;
    let var = s2 + t2;
    let m = posterior_component_mean(spec, x, t);
    // Per component: (s2 * x + t2 * mu) / var.
    [
        (s2 * x[0] + t2 * m[0]) / var,
        (s2 * x[1] + t2 * m[1]) / var,
    ]
}

/// Ideal denoiser when the generating component `c` is known.
pub fn exact_conditional_denoiser(spec: &MixtureSpec, c: usize, x: Point, t: f64) -> Point {
    let s2 = spec.sigma * spec.sigma;
    let t2 = t * t;
    let var = s2 + t2;
    let mu = spec.means[c];
    [(s2 * x[0] + t2 * mu[0]) / var, (s2 * x[1] + t2 * mu[1]) / var]
}
