use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bins::{bin_index, LogBins};
use crate::datagen::Point;
use crate::diffusion::{loss_weight, DiffusionConfig};
use crate::error::{Error, Result};

/// One noisy evaluation point: clean index, noise level and noise draw.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProbe {
    pub index: usize,
    pub t: f64,
    pub noise: Point,
}

impl LossProbe {
    pub fn noisy(&self, y: Point) -> Point {
        [y[0] + self.t * self.noise[0], y[1] + self.t * self.noise[1]]
    }
}

/// `n` probes with `t` log-uniform over the bins' range; shared across arms
/// so their losses are paired.
pub fn draw_probes(n_points: usize, bins: &LogBins, n: usize, seed: u64) -> Result<Vec<LossProbe>> {
    if n_points == 0 {
        return Err(Error::invalid("loss probes need a non-empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (bins.edges[0].ln(), bins.edges[bins.len()].ln());
    Ok((0..n)
        .map(|_| LossProbe {
            index: rng.random_range(0..n_points),
            t: rng.random_range(lo..=hi).exp(),
            noise: [rng.sample(StandardNormal), rng.sample(StandardNormal)],
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub bins: LogBins,
    /// Mean weighted loss per bin; `None` marks an empty bin.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

/// Mean weighted denoising loss per time bin. `denoise(xs, ts, indices)`
/// returns `D` for noisy inputs `xs` of the clean points `indices`.
pub fn loss_vs_t<F>(
    config: &DiffusionConfig,
    ys: &[Point],
    probes: &[LossProbe],
    bins: &LogBins,
    mut denoise: F,
) -> Result<LossCurve>
where
    F: FnMut(&[Point], &[f64], &[usize]) -> Result<Vec<Point>>,
{
    let nb = bins.len();
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for chunk in probes.chunks(2048) {
        let xs: Vec<Point> = chunk.iter().map(|p| p.noisy(ys[p.index])).collect();
        let ts: Vec<f64> = chunk.iter().map(|p| p.t).collect();
        let idx: Vec<usize> = chunk.iter().map(|p| p.index).collect();
        let ds = denoise(&xs, &ts, &idx)?;
        for (p, d) in chunk.iter().zip(&ds) {
            let Some(b) = bin_index(bins, p.t) else { continue };
            let y = ys[p.index];
            let l = loss_weight(config, p.t)? * ((d[0] - y[0]).powi(2) + (d[1] - y[1]).powi(2));
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("loss at t = {}", p.t)));
            }
            sum[b] += l;
            count[b] += 1;
        }
    }
    Ok(LossCurve {
        bins: bins.clone(),
        mean: sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect(),
        count,
    })
}
