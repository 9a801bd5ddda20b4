//! Metric suite: trajectory curvature, denoiser Jacobian norms, empirical
//! W-2 distance and the loss-vs-noise-level diagnostic.

mod bins;
mod curvature;
mod jacobian;
mod loss;
mod wasserstein;

pub use bins::{bin_index, LogBins};
pub use curvature::{curvature_at, curvature_batch, curvature_profile, CurvatureProfile, CURVATURE_DT, MIN_DRIFT};
pub use jacobian::{frob_sq, jacobian_frob_sq, jacobian_rows, model_jacobians, JacobianProbe};
pub use loss::{draw_probes, loss_vs_t, LossCurve, LossProbe};
pub use wasserstein::{linear_assignment, subsample, wasserstein2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Point;
use crate::diffusion::Latent;
use crate::disco::{Arm, DiscoModel};
use crate::error::Result;
use crate::sampler::Trajectory;

/// Drift `(x - D(x, t, z)) / t` where trajectory `i` uses `latents[i]`.
pub fn model_drift<'a>(
    model: &'a DiscoModel,
    latents: &'a [Latent],
    w_cfg: f64,
) -> impl FnMut(&[Point], f64, &[usize]) -> Result<Vec<Point>> + 'a {
    move |xs, t, idx| {
        let zs: Vec<Latent> = idx.iter().map(|&i| latents[i].clone()).collect();
        let d = if zs.iter().all(Option::is_none) {
            model.denoise(xs, t, &zs)?
        } else {
            model.cfg_denoise(xs, t, &zs, w_cfg)?
        };
        Ok(xs.iter().zip(&d).map(|(x, d)| [(x[0] - d[0]) / t, (x[1] - d[1]) / t]).collect())
    }
}

/// Mean Jacobian norms per time bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianProfile {
    pub bins: LogBins,
    pub jac_d: Vec<Option<f64>>,
    pub jac_g: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

impl JacobianProfile {
    pub fn overall_mean_d(&self) -> Option<f64> {
        weighted_mean(&self.jac_d, &self.count)
    }

    pub fn overall_mean_g(&self) -> Option<f64> {
        weighted_mean(&self.jac_g, &self.count)
    }
}

fn weighted_mean(values: &[Option<f64>], count: &[usize]) -> Option<f64> {
    let n: usize = values.iter().zip(count).filter(|(v, _)| v.is_some()).map(|(_, c)| c).sum();
    let total: f64 = values.iter().zip(count).filter_map(|(v, &c)| v.map(|v| v * c as f64)).sum();
    (n > 0).then(|| total / n as f64)
}

/// Jacobian norms at `per_bin` states drawn uniformly (with replacement)
/// from the recorded trajectory points whose time falls in each bin.
pub fn jacobian_profile(
    model: &DiscoModel,
    trajectories: &[Trajectory],
    bins: &LogBins,
    per_bin: usize,
    seed: u64,
) -> Result<JacobianProfile> {
    let nb = bins.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jac_d = vec![None; nb];
    let mut jac_g = vec![None; nb];
    let mut count = vec![0; nb];
    let Some(first) = trajectories.first() else {
        return Ok(JacobianProfile {
            bins: bins.clone(),
            jac_d,
            jac_g,
            count,
        });
    };
    for b in 0..nb {
        let steps: Vec<usize> = first
            .times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0 && bin_index(bins, t) == Some(b))
            .map(|(i, _)| i)
            .collect();
        if steps.is_empty() || per_bin == 0 {
            continue;
        }
        let mut xs = Vec::with_capacity(per_bin);
        let mut ts = Vec::with_capacity(per_bin);
        let mut zs = Vec::with_capacity(per_bin);
        for _ in 0..per_bin {
            let tr = &trajectories[rng.random_range(0..trajectories.len())];
            let i = steps[rng.random_range(0..steps.len())];
            xs.push(tr.states[i]);
            ts.push(tr.times[i]);
            zs.push(tr.latent.clone());
        }
        let probes = model_jacobians(model, &xs, &ts, &zs)?;
        let n = probes.len() as f64;
        jac_d[b] = Some(probes.iter().map(|p| p.jac_d).sum::<f64>() / n);
        jac_g[b] = Some(probes.iter().map(|p| p.jac_g).sum::<f64>() / n);
        count[b] = probes.len();
    }
    Ok(JacobianProfile {
        bins: bins.clone(),
        jac_d,
        jac_g,
        count,
    })
}

/// Weighted denoising loss per bin. The disco arm is conditioned on
/// `latents` (one per clean point); the baseline always uses the null token.
pub fn model_loss_curve(
    model: &DiscoModel,
    arm: Arm,
    ys: &[Point],
    latents: &[Vec<usize>],
    probes: &[LossProbe],
    bins: &LogBins,
) -> Result<LossCurve> {
    loss_vs_t(&model.diffusion, ys, probes, bins, |xs, ts, idx| {
        let zs: Vec<Latent> = match arm {
            Arm::Disco => idx.iter().map(|&i| Some(latents[i].clone())).collect(),
            Arm::Baseline => vec![None; idx.len()],
        };
        model.denoise_rows(xs, ts, &zs)
    })
}

/// Metrics of one trained arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: Arm,
    pub w2: f64,
    pub mean_curvature: Option<f64>,
    pub mean_jacobian_d: Option<f64>,
    pub mean_jacobian_g: Option<f64>,
    pub curvature: CurvatureProfile,
    pub jacobian: JacobianProfile,
    pub loss: LossCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub config_hash: String,
    pub arms: Vec<ArmMetrics>,
}

impl MetricReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmMetrics> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    /// All scalar values finite and non-negative.
    pub fn is_valid(&self) -> bool {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        self.arms.iter().all(|a| {
            ok(a.w2)
                && [a.mean_curvature, a.mean_jacobian_d, a.mean_jacobian_g].iter().flatten().all(|&v| ok(v))
                && a.curvature.mean.iter().flatten().all(|&v| ok(v))
                && a.jacobian.jac_d.iter().chain(&a.jacobian.jac_g).flatten().all(|&v| ok(v))
                && a.loss.mean.iter().flatten().all(|&v| ok(v))
        })
    }
}
