//! Experiment steps shared by the command line and the acceptance suite.
//!
//! Every random choice draws from its own stream derived from the run seed,
//! so e.g. changing the number of training steps leaves the dataset and the
//! reference sample untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    curvature_profile, draw_probes, jacobian_profile, model_drift, model_loss_curve, wasserstein2, ArmMetrics,
    LogBins, LossProbe, CURVATURE_DT,
};
use crate::config::RunConfig;
use crate::datagen::{exact_denoiser, sample_dataset, sample_iid, Dataset, MixtureSpec, Point};
use crate::disco::{extract_latents, Arm, DiscoModel, Trainer};
use crate::error::{Error, Result};
use crate::latentprior::{ar_train, latent_histogram, total_variation, PriorFit};
use crate::sampler::{generate, Generated};

pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const EXTRACT: u64 = 4;
    pub const PRIOR: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const REFERENCE: u64 = 7;
    pub const PROBES: u64 = 8;
    pub const JACOBIAN: u64 = 9;
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

pub fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    sample_dataset(&cfg.mixture()?, cfg.n_per_component, derive_seed(cfg.seed, streams::DATA))
}

/// Fresh model and optimiser. Both arms get identical initial weights.
pub fn new_trainer(cfg: &RunConfig, arm: Arm, data: &Dataset) -> Result<Trainer> {
    let diffusion = cfg.diffusion_config(data.std())?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::INIT));
    let model = DiscoModel::new(&cfg.model_config(), diffusion, &mut init)?;
    Trainer::new(model, cfg.train_config(), arm, derive_seed(cfg.seed, streams::TRAIN))
}

/// Steps `trainer` until its counter reaches `until`, reporting each loss.
pub fn train(trainer: &mut Trainer, data: &Dataset, until: u64, mut on_step: impl FnMut(&Trainer, f64) -> Result<()>) -> Result<()> {
    while trainer.step < until {
        let loss = trainer.step(&data.points)?;
        on_step(trainer, loss)?;
    }
    Ok(())
}

/// Near-deterministic codes of every data point at `tau_extract`.
pub fn extract(cfg: &RunConfig, model: &DiscoModel, points: &[Point]) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::EXTRACT));
    extract_latents(&model.encoder, &model.params, points, cfg.tau_extract, &mut rng)
}

#[derive(Clone, Debug)]
pub struct PriorRun {
    pub fit: PriorFit,
    pub latents: Vec<Vec<usize>>,
    /// TV distance between the prior's first-position marginal and the
    /// empirical histogram of the extracted codes.
    pub tv: f64,
}

pub fn fit_prior(cfg: &RunConfig, model: &DiscoModel, data: &Dataset) -> Result<PriorRun> {
    let latents = extract(cfg, model, &data.points)?;
    let fit = ar_train(&latents, model.m(), model.k(), &cfg.prior_config(), derive_seed(cfg.seed, streams::PRIOR))?;
    let tv = total_variation(&fit.prior.first_marginal()?, &latent_histogram(&latents, 0, model.k()));
    Ok(PriorRun { fit, latents, tv })
}

/// Bins for trajectory metrics (curvature, Jacobian) and for the loss table.
pub fn analysis_bins(cfg: &RunConfig) -> Result<(LogBins, LogBins)> {
    Ok((
        LogBins::new(cfg.analysis_t_min, cfg.sigma_max, cfg.n_bins)?,
        LogBins::new(cfg.sigma_min, cfg.sigma_max, cfg.n_bins)?,
    ))
}

/// Fresh ground-truth draw for W-2.
pub fn reference_sample(cfg: &RunConfig) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::REFERENCE));
    Ok(sample_iid(&cfg.mixture()?, cfg.w2_points, &mut rng).points)
}

pub fn loss_probes(cfg: &RunConfig, data: &Dataset) -> Result<Vec<LossProbe>> {
    let (_, bins) = analysis_bins(cfg)?;
    draw_probes(data.len(), &bins, cfg.loss_probes, derive_seed(cfg.seed, streams::PROBES))
}

/// Shared inputs of the per-arm analysis.
pub struct AnalysisInputs<'a> {
    pub data: &'a Dataset,
    pub reference: &'a [Point],
    pub probes: &'a [LossProbe],
    /// Encoder codes of `data`, used as oracle latents in the loss table.
    pub oracle_latents: &'a [Vec<usize>],
}

/// Samples `n_samples` points (recording trajectories) and computes every
/// metric for one arm. The disco arm samples latents from `prior`.
pub fn analyze_arm(
    cfg: &RunConfig,
    model: &DiscoModel,
    arm: Arm,
    prior: Option<&crate::latentprior::LatentPrior>,
    inputs: &AnalysisInputs,
) -> Result<(Generated, ArmMetrics)> {
    if arm == Arm::Disco && prior.is_none() {
        return Err(Error::invalid("the disco arm samples latents from a prior"));
    }
    let prior = if arm == Arm::Disco { prior } else { None };
    let n = cfg.n_samples.max(cfg.w2_points).max(cfg.curvature_trajectories);
    let generated = generate(model, prior, n, derive_seed(cfg.seed, streams::SAMPLE), &cfg.sample_options(true))?;
    let trajectories = generated.trajectories.as_deref().unwrap_or_default();
    let w2 = wasserstein2(&generated.samples[..cfg.w2_points], inputs.reference)?;
    let (tbins, lbins) = analysis_bins(cfg)?;
    let curve_set = &trajectories[..cfg.curvature_trajectories.min(trajectories.len())];
    let curvature = curvature_profile(model_drift(model, &generated.latents, cfg.w_cfg), curve_set, &tbins, CURVATURE_DT)?;
    let jacobian = jacobian_profile(model, curve_set, &tbins, cfg.jacobian_probes, derive_seed(cfg.seed, streams::JACOBIAN))?;
    let loss = model_loss_curve(model, arm, &inputs.data.points, inputs.oracle_latents, inputs.probes, &lbins)?;
    let metrics = ArmMetrics {
        arm,
        w2,
        mean_curvature: curvature.overall_mean(),
        mean_jacobian_d: jacobian.overall_mean_d(),
        mean_jacobian_g: jacobian.overall_mean_g(),
        curvature,
        jacobian,
        loss,
    };
    Ok((generated, metrics))
}

/// Relative RMSE `sqrt(sum |D - D*|^2 / sum |D*|^2)` of the unconditional
/// denoiser against the mixture's posterior mean, on `n` noisy data points
/// with `t` log-uniform in `[t_lo, t_hi]`, keeping only inputs inside the
/// data's per-axis 3-sigma envelope.
pub fn denoiser_rel_rmse(
    model: &DiscoModel,
    spec: &MixtureSpec,
    data: &Dataset,
    (t_lo, t_hi): (f64, f64),
    n: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() || n == 0 || !(t_lo > 0.0 && t_hi >= t_lo) {
        return Err(Error::invalid("denoiser comparison needs data, probes and a positive t range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 3.0 * data.std();
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    while xs.len() < n {
        let y = data.points[rng.random_range(0..data.len())];
        let t = rng.random_range(t_lo.ln()..=t_hi.ln()).exp();
        let e: Point = [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)];
        let x = [y[0] + t * e[0], y[1] + t * e[1]];
        if x[0].abs() <= bound && x[1].abs() <= bound {
            xs.push(x);
            ts.push(t);
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (cx, ct) in xs.chunks(2048).zip(ts.chunks(2048)) {
        let d = model.denoise_rows(cx, ct, &vec![None; cx.len()])?;
        for ((x, &t), d) in cx.iter().zip(ct).zip(&d) {
            let e = exact_denoiser(spec, *x, t);
            num += (d[0] - e[0]).powi(2) + (d[1] - e[1]).powi(2);
            den += e[0] * e[0] + e[1] * e[1];
        }
    }
    Ok((num / den).sqrt())
}
