use serde::{Deserialize, Serialize};

use super::bins::{bin_index, LogBins};
use crate::datagen::Point;
use crate::error::Result;
use crate::sampler::Trajectory;

/// Elapsed time for the finite-difference tangent.
pub const CURVATURE_DT: f64 = 0.001;

/// Drifts below this norm make the tangent undefined.
pub const MIN_DRIFT: f64 = 1e-9;

fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// `||T(t) - T(t - dt)|| / ||x(t) - x(t - dt)||` with `x(t - dt) = x - v dt`
/// and `T` the unit drift. `None` when either drift vanishes.
pub fn curvature_at<F>(mut drift: F, x: Point, t: f64, dt: f64) -> Result<Option<f64>>
where
    F: FnMut(Point, f64) -> Result<Point>,
{
    let v = drift(x, t)?;
    let back = [x[0] - v[0] * dt, x[1] - v[1] * dt];
    let w = drift(back, t - dt)?;
    Ok(curvature_from(x, v, back, w))
}

fn curvature_from(x: Point, v: Point, back: Point, w: Point) -> Option<f64> {
    let (nv, nw) = (norm(v), norm(w));
    if !(nv > MIN_DRIFT && nw > MIN_DRIFT) {
        return None;
    }
    let step = norm([x[0] - back[0], x[1] - back[1]]);
    if !(step > 0.0) {
        return None;
    }
    let dtan = [v[0] / nv - w[0] / nw, v[1] / nv - w[1] / nw];
    Some(norm(dtan) / step)
}

/// Batched [`curvature_at`] for points sharing one time. `drift` maps a
/// batch at a time to its drifts.
pub fn curvature_batch<F>(mut drift: F, xs: &[Point], t: f64, dt: f64) -> Result<Vec<Option<f64>>>
where
    F: FnMut(&[Point], f64) -> Result<Vec<Point>>,
{
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let v = drift(xs, t)?;
    let back: Vec<Point> = xs.iter().zip(&v).map(|(x, v)| [x[0] - v[0] * dt, x[1] - v[1] * dt]).collect();
    let w = drift(&back, t - dt)?;
    Ok((0..xs.len()).map(|i| curvature_from(xs[i], v[i], back[i], w[i])).collect())
}

/// Mean curvature per time bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub bins: LogBins,
    /// `None` for bins without any valid point.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
    /// Points skipped because the drift vanished.
    pub skipped: usize,
}

impl CurvatureProfile {
    /// Average over every evaluated point.
    pub fn overall_mean(&self) -> Option<f64> {
        let n: usize = self.count.iter().sum();
        let total: f64 = self.mean.iter().zip(&self.count).filter_map(|(m, &c)| m.map(|m| m * c as f64)).sum();
        (n > 0).then(|| total / n as f64)
    }
}

/// Curvature at every recorded state with `t > 0` whose time falls in a bin.
/// `drift(xs, t, indices)` evaluates the ODE drift for the trajectories
/// listed in `indices` (so each can use its own latent).
pub fn curvature_profile<F>(mut drift: F, trajectories: &[Trajectory], bins: &LogBins, dt: f64) -> Result<CurvatureProfile>
where
    F: FnMut(&[Point], f64, &[usize]) -> Result<Vec<Point>>,
{
    let nb = bins.len();
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    let mut skipped = 0;
    if let Some(first) = trajectories.first() {
        let all: Vec<usize> = (0..trajectories.len()).collect();
        for (i, &t) in first.times.iter().enumerate() {
            let Some(b) = bin_index(bins, t) else { continue };
            if t <= 0.0 || i >= first.drifts.len() {
                continue;
            }
            let xs: Vec<Point> = trajectories.iter().map(|tr| tr.states[i]).collect();
            let ks = curvature_batch(|p, s| drift(p, s, &all), &xs, t, dt)?;
            for k in ks {
                match k {
                    Some(k) => {
                        sum[b] += k;
                        count[b] += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    let mean = sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    Ok(CurvatureProfile {
        bins: bins.clone(),
        mean,
        count,
        skipped,
    })
}
