//! Encoder, Gumbel-Softmax relaxation, joint denoiser/encoder training and
//! discrete-latent classifier-free guidance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Point;
use crate::diffusion::{draw_examples, dsm_loss_var, DenoiserConfig, DiffusionConfig, Latent, TapeCond, ToyDenoiser};
use crate::error::{Error, Result};
use crate::tensorgrad::{softmax_rows, AdamConfig, AdamState, Bound, Mlp, ParamId, ParamSet, Tape, Tensor, Var};

/// Which model is being trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Denoiser and encoder trained jointly.
    Disco,
    /// Plain diffusion model: latents always null, encoder frozen.
    Baseline,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Disco => "disco",
            Arm::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disco" => Ok(Arm::Disco),
            "baseline" => Ok(Arm::Baseline),
            other => Err(Error::Config(format!("unknown arm `{other}` (expected disco or baseline)"))),
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Three-layer MLP from a data point to `m * k` logits.
#[derive(Clone, Debug)]
pub struct Encoder {
    mlp: Mlp,
    m: usize,
    k: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, hidden: usize, m: usize, k: usize, rng: &mut R) -> Self {
        let mlp = Mlp::new(params, "encoder", &[2, hidden, hidden, m * k], false, rng);
        Self { mlp, m, k }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids().collect()
    }

    /// Logits of shape `[batch, m * k]`; latent `j` owns columns `j*k..(j+1)*k`.
    pub fn logits_var(&self, tape: &mut Tape, bound: &Bound, y: Var) -> Result<Var> {
        self.mlp.forward(tape, bound, y)
    }

    /// One row of `m * k` logits per point.
    pub fn logits(&self, params: &ParamSet, ys: &[Point]) -> Result<Vec<Vec<f64>>> {
        if ys.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let y = tape.leaf(Tensor::matrix(ys.len(), 2, ys.iter().flatten().copied().collect())?);
        let out = self.logits_var(&mut tape, &bound, y)?;
        Ok(tape.value(out).data().chunks(self.m * self.k).map(<[f64]>::to_vec).collect())
    }
}

/// A Gumbel(0, 1) draw, kept finite by sampling the uniform from `[eps, 1)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    -(-u.ln()).ln()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("Gumbel-Softmax temperature must be > 0, got {tau}")))
    }
}

/// `softmax((logits + noise) / tau)` for a given noise vector.
pub fn relax(logits: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if logits.len() != noise.len() || logits.is_empty() {
        return Err(Error::invalid("logits and Gumbel noise must have the same non-zero length"));
    }
    let scaled: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let out = softmax_rows(&Tensor::vector(scaled)).into_data();
    Ok(out)
}

pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let noise: Vec<f64> = logits.iter().map(|_| gumbel(rng)).collect();
    relax(logits, &noise, tau)
}

/// Relaxed sample on the tape: `softmax((logits + noise) / tau)` row-wise.
pub fn relax_var(tape: &mut Tape, logits: Var, noise: Tensor, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let g = tape.leaf(noise);
    let shifted = tape.add(logits, g)?;
    let scaled = tape.scale(shifted, 1.0 / tau)?;
    tape.softmax(scaled)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub hard: Vec<usize>,
    pub relaxed: Vec<Vec<f64>>,
    pub tau: f64,
}

/// Draws `m` independent relaxed latents from one row of encoder logits.
pub fn sample_latent<R: Rng + ?Sized>(logits: &[f64], m: usize, tau: f64, rng: &mut R) -> Result<LatentSample> {
    check_tau(tau)?;
    if m == 0 || logits.len() % m != 0 {
        return Err(Error::invalid(format!("{} logits cannot split into {m} latents", logits.len())));
    }
    let k = logits.len() / m;
    let mut hard = Vec::with_capacity(m);
    let mut relaxed = Vec::with_capacity(m);
    for row in logits.chunks(k) {
        let noise: Vec<f64> = row.iter().map(|_| gumbel(rng)).collect();
        // The argmax of the perturbed logits does not depend on tau and does
        // not suffer from softmax saturation ties.
        let perturbed: Vec<f64> = row.iter().zip(&noise).map(|(l, g)| l + g).collect();
        hard.push(argmax(&perturbed));
        relaxed.push(relax(row, &noise, tau)?);
    }
    Ok(LatentSample { hard, relaxed, tau })
}

pub fn encode<R: Rng + ?Sized>(
    encoder: &Encoder,
    params: &ParamSet,
    y: Point,
    tau: f64,
    rng: &mut R,
) -> Result<LatentSample> {
    let logits = encoder.logits(params, &[y])?;
    sample_latent(&logits[0], encoder.m, tau, rng)
}

/// Hard latents for a batch of points at extraction temperature `tau`.
pub fn extract_latents<R: Rng + ?Sized>(
    encoder: &Encoder,
    params: &ParamSet,
    ys: &[Point],
    tau: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(ys.len());
    for chunk in ys.chunks(1024) {
        for row in encoder.logits(params, chunk)? {
            out.push(sample_latent(&row, encoder.m, tau, rng)?.hard);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub denoiser_hidden: usize,
    pub encoder_hidden: usize,
    pub m: usize,
    pub k: usize,
    pub sigma1: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            denoiser_hidden: 64,
            encoder_hidden: 64,
            m: 1,
            k: 8,
            sigma1: 0.2,
        }
    }
}

/// Denoiser parameters theta and encoder parameters phi in one set.
#[derive(Clone, Debug)]
pub struct DiscoModel {
    pub denoiser: ToyDenoiser,
    pub encoder: Encoder,
    pub params: ParamSet,
    pub diffusion: DiffusionConfig,
}

impl DiscoModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, diffusion: DiffusionConfig, rng: &mut R) -> Result<Self> {
        diffusion.validate()?;
        if config.m == 0 || config.k == 0 || config.denoiser_hidden == 0 || config.encoder_hidden == 0 {
            return Err(Error::Config(format!("model sizes must be positive: {config:?}")));
        }
        if !(config.sigma1 > 0.0) {
            return Err(Error::Config(format!("sigma1 must be positive, got {}", config.sigma1)));
        }
        let mut params = ParamSet::new();
        let denoiser = ToyDenoiser::new(
            &mut params,
            DenoiserConfig {
                hidden: config.denoiser_hidden,
                m: config.m,
                k: config.k,
                sigma1: config.sigma1,
                sigma_data: diffusion.sigma_data,
            },
            rng,
        );
        let encoder = Encoder::new(&mut params, config.encoder_hidden, config.m, config.k, rng);
        Ok(Self {
            denoiser,
            encoder,
            params,
            diffusion,
        })
    }

    pub fn m(&self) -> usize {
        self.encoder.m
    }

    pub fn k(&self) -> usize {
        self.encoder.k
    }

    pub fn denoise(&self, xs: &[Point], t: f64, latents: &[Latent]) -> Result<Vec<Point>> {
        self.denoiser.denoise(&self.params, xs, t, latents)
    }

    pub fn denoise_rows(&self, xs: &[Point], ts: &[f64], latents: &[Latent]) -> Result<Vec<Point>> {
        self.denoiser.denoise_rows(&self.params, xs, ts, latents)
    }

    pub fn score_head(&self, xs: &[Point], t: f64, latents: &[Latent]) -> Result<Vec<Point>> {
        self.denoiser.score_head(&self.params, xs, t, latents)
    }

    /// Guided denoiser `w D(x, t, z) + (1 - w) D(x, t, null)`.
    pub fn cfg_denoise(&self, xs: &[Point], t: f64, latents: &[Latent], w: f64) -> Result<Vec<Point>> {
        let null: Vec<Latent> = vec![None; xs.len()];
        if w == 1.0 {
            return self.denoise(xs, t, latents);
        }
        if w == 0.0 {
            return self.denoise(xs, t, &null);
        }
        let cond = self.denoise(xs, t, latents)?;
        let uncond = self.denoise(xs, t, &null)?;
        Ok(cond.iter().zip(&uncond).map(|(c, u)| guide(*c, *u, w)).collect())
    }
}

/// `w * cond + (1 - w) * uncond`, written in that form so `w = 0` and `w = 1`
/// are exact.
pub fn guide(cond: Point, uncond: Point, w: f64) -> Point {
    [w * cond[0] + (1.0 - w) * uncond[0], w * cond[1] + (1.0 - w) * uncond[1]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau_train: f64,
    pub p_drop: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau_train: 1.0,
            p_drop: 0.1,
            batch_size: 512,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_train > 0.0) || !(0.0..=1.0).contains(&self.p_drop) || self.batch_size == 0 || !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    /// Per-parameter gradients as applied (`None` for frozen parameters).
    pub grads: Vec<Option<Tensor>>,
}

/// Loss and gradients of one minibatch, without updating anything.
pub fn joint_gradients<R: Rng + ?Sized>(
    model: &DiscoModel,
    batch: &[Point],
    config: &TrainConfig,
    arm: Arm,
    rng: &mut R,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("training batch is empty"));
    }
    let b = batch.len();
    let examples = draw_examples(&model.diffusion, batch, rng);
    let keep: Vec<bool> = match arm {
        Arm::Disco => (0..b).map(|_| rng.random::<f64>() >= config.p_drop).collect(),
        Arm::Baseline => vec![false; b],
    };

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let cond = if keep.iter().any(|&k| k) {
        let (m, k) = (model.m(), model.k());
        let y = tape.leaf(Tensor::matrix(b, 2, batch.iter().flatten().copied().collect())?);
        let logits = model.encoder.logits_var(&mut tape, &bound, y)?;
        let mut weights = Vec::with_capacity(m);
        for j in 0..m {
            let row = tape.slice_cols(logits, j * k, k)?;
            let noise: Vec<f64> = (0..b * k).map(|_| gumbel(rng)).collect();
            weights.push(relax_var(&mut tape, row, Tensor::matrix(b, k, noise)?, config.tau_train)?);
        }
        TapeCond {
            weights: Some(weights),
            keep,
        }
    } else {
        TapeCond::null(b)
    };
    let loss = dsm_loss_var(&mut tape, &bound, &model.denoiser, &model.diffusion, &examples, &cond)?;
    let grads = tape.backward(loss)?;
    let frozen: Vec<ParamId> = match arm {
        Arm::Disco => Vec::new(),
        Arm::Baseline => model.encoder.param_ids(),
    };
    let grads = model
        .params
        .ids()
        .map(|id| (!frozen.contains(&id)).then(|| grads.wrt(bound.var(id))))
        .collect();
    Ok(StepOutput {
        loss: tape.value(loss).item(),
        grads,
    })
}

/// One Adam step on theta and phi jointly (theta only for the baseline).
pub fn joint_train_step<R: Rng + ?Sized>(
    model: &mut DiscoModel,
    adam: &mut AdamState,
    batch: &[Point],
    config: &TrainConfig,
    arm: Arm,
    rng: &mut R,
) -> Result<f64> {
    let out = joint_gradients(model, batch, config, arm, rng)?;
    adam.step(&mut model.params, &out.grads)?;
    Ok(out.loss)
}

/// Minibatch trainer over a fixed dataset with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: DiscoModel,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub config: TrainConfig,
    pub arm: Arm,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: DiscoModel, config: TrainConfig, arm: Arm, seed: u64) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam.clone(), &model.params);
        Ok(Self {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
            arm,
            step: 0,
        })
    }

    /// Samples a minibatch with replacement and takes one optimiser step.
    pub fn step(&mut self, data: &[Point]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let batch: Vec<Point> = (0..self.config.batch_size)
            .map(|_| data[self.rng.random_range(0..data.len())])
            .collect();
        let loss = joint_train_step(&mut self.model, &mut self.adam, &batch, &self.config, self.arm, &mut self.rng)
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {}", self.step + 1)),
                other => other,
            })?;
        self.step += 1;
        Ok(loss)
    }
}

/// Fraction of points whose code's majority ground-truth component equals
/// their own component.
pub fn codebook_purity(codes: &[usize], labels: &[usize]) -> Result<f64> {
    if codes.len() != labels.len() || codes.is_empty() {
        return Err(Error::invalid("purity needs equally many non-zero codes and labels"));
    }
    let mut counts: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> = Default::default();
    for (&c, &l) in codes.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|h| h.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / codes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_mixture, sample_dataset};

    fn small_model(seed: u64) -> DiscoModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            denoiser_hidden: 16,
            encoder_hidden: 16,
            ..ModelConfig::default()
        };
        DiscoModel::new(&cfg, DiffusionConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn arm_round_trip() {
        for arm in [Arm::Disco, Arm::Baseline] {
            assert_eq!(arm.as_str().parse::<Arm>().unwrap(), arm);
        }
        assert!("vae".parse::<Arm>().is_err());
    }

    #[test]
    fn gumbel_softmax_is_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = gumbel_softmax(&logits, 1.0, &mut rng).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn gumbel_max_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 8;
        let mut counts = vec![0usize; k];
        let n = 100_000;
        for _ in 0..n {
            let p = gumbel_softmax(&vec![0.0; k], 1.0, &mut rng).unwrap();
            counts[argmax(&p)] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / k as f64).abs() < 0.015, "frequency {f}");
        }
    }

    #[test]
    fn low_temperature_concentrates() {
        let mut logits = vec![0.0; 8];
        logits[0] = 10.0;
        // Clamped noise: every Gumbel draw lies in [-3, 3].
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let noise: Vec<f64> = (0..8).map(|_| gumbel(&mut rng).clamp(-3.0, 3.0)).collect();
            let p = relax(&logits, &noise, 0.01).unwrap();
            assert!(p[0] > 1.0 - 1e-6);
        }
    }

    #[test]
    fn temperature_must_be_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(gumbel_softmax(&[0.0, 1.0], 0.0, &mut rng).is_err());
        assert!(gumbel_softmax(&[0.0, 1.0], -1.0, &mut rng).is_err());
        assert!(relax(&[0.0], &[0.0], f64::NAN).is_err());
    }

    #[test]
    fn lower_temperature_sharpens() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise: Vec<f64> = (0..6).map(|_| gumbel(&mut rng)).collect();
            let maxes: Vec<f64> = [1.0, 0.1, 0.01]
                .iter()
                .map(|&tau| relax(&logits, &noise, tau).unwrap().into_iter().fold(0.0, f64::max))
                .collect();
            assert!(maxes[0] <= maxes[1] && maxes[1] <= maxes[2], "{maxes:?}");
        }
    }

    #[test]
    fn relaxed_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &tau in &[1.0, 0.5] {
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise: Vec<f64> = (0..5).map(|_| gumbel(&mut rng)).collect();
            let probe: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let objective = |l: &[f64]| -> f64 { relax(l, &noise, tau).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum() };

            let mut tape = Tape::new();
            let lv = tape.leaf(Tensor::matrix(1, 5, logits.clone()).unwrap());
            let p = relax_var(&mut tape, lv, Tensor::matrix(1, 5, noise.clone()).unwrap(), tau).unwrap();
            let w = tape.leaf(Tensor::matrix(1, 5, probe.clone()).unwrap());
            let prod = tape.mul(p, w).unwrap();
            let loss = tape.sum(prod).unwrap();
            let g = tape.backward(loss).unwrap().wrt(lv);
            let h = 1e-5;
            for i in 0..5 {
                let mut lp = logits.clone();
                lp[i] += h;
                let mut lm = logits.clone();
                lm[i] -= h;
                let fd = (objective(&lp) - objective(&lm)) / (2.0 * h);
                let a = g.data()[i];
                assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-5, "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let model = small_model(7);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = encode(&model.encoder, &model.params, [1.0, 2.0], 1.0, &mut r1).unwrap();
        let b = encode(&model.encoder, &model.params, [1.0, 2.0], 1.0, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hard.len(), 1);
        assert_eq!(a.relaxed.len(), 1);
        assert_eq!(a.relaxed[0].len(), 8);
        assert!((a.relaxed[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a.hard[0], argmax(&a.relaxed[0]));
    }

    #[test]
    fn extraction_follows_dominant_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20_000;
        let rate = |logits: &[f64], rng: &mut ChaCha8Rng| {
            (0..n).filter(|_| sample_latent(logits, 1, 0.01, rng).unwrap().hard[0] == 0).count() as f64 / n as f64
        };
        // Two classes, lead 5: P = 1 / (1 + e^-5) = 0.9933.
        assert!(rate(&[5.0, 0.0], &mut rng) > 0.99);
        // Eight classes, lead 5: the Gumbel-max argmax is softmax distributed.
        let mut logits = vec![0.0; 8];
        logits[0] = 5.0;
        let exact = 5f64.exp() / (5f64.exp() + 7.0);
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((rate(&logits, &mut rng) - exact).abs() < 4.0 * se);
    }

    #[test]
    fn full_drop_leaves_encoder_without_gradient() {
        let model = small_model(11);
        let data = sample_dataset(&default_mixture(), 4, 0).unwrap();
        let cfg = TrainConfig {
            p_drop: 1.0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let out = joint_gradients(&model, &data.points, &cfg, Arm::Disco, &mut rng).unwrap();
        for id in model.encoder.param_ids() {
            let g = out.grads[id.index()].as_ref().unwrap();
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_step_moves_encoder_and_denoiser() {
        let mut model = small_model(13);
        let before = model.params.clone();
        let data = sample_dataset(&default_mixture(), 8, 0).unwrap();
        let cfg = TrainConfig {
            p_drop: 0.0,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(cfg.adam.clone(), &model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        joint_train_step(&mut model, &mut adam, &data.points, &cfg, Arm::Disco, &mut rng).unwrap();
        let changed = |ids: Vec<ParamId>| ids.iter().any(|&id| model.params.get(id) != before.get(id));
        assert!(changed(model.encoder.param_ids()));
        assert!(changed(model.denoiser.h_param_ids()));
        assert!(changed(model.denoiser.embedding_ids().to_vec()));
    }

    #[test]
    fn baseline_never_touches_encoder() {
        let model = small_model(15);
        let data = sample_dataset(&default_mixture(), 16, 0).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig { batch_size: 32, ..TrainConfig::default() }, Arm::Baseline, 3).unwrap();
        let init = trainer.model.params.clone();
        for _ in 0..20 {
            trainer.step(&data.points).unwrap();
        }
        for id in trainer.model.encoder.param_ids() {
            assert_eq!(trainer.model.params.get(id), init.get(id));
        }
        assert_eq!(trainer.step, 20);
    }

    #[test]
    fn trainer_is_deterministic() {
        let data = sample_dataset(&default_mixture(), 16, 0).unwrap();
        let run = || {
            let mut t = Trainer::new(small_model(16), TrainConfig { batch_size: 32, ..TrainConfig::default() }, Arm::Disco, 5).unwrap();
            let losses: Vec<f64> = (0..10).map(|_| t.step(&data.points).unwrap()).collect();
            (losses, t.model.params)
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn cfg_identities() {
        let mut model = small_model(17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for id in model.params.ids().collect::<Vec<_>>() {
            for v in model.params.get_mut(id).data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let xs: Vec<Point> = (0..20).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let zs: Vec<Latent> = (0..20).map(|_| Some(vec![rng.random_range(0..8)])).collect();
        let null = vec![None; 20];
        let t = 0.7;
        let dc = model.denoise(&xs, t, &zs).unwrap();
        let du = model.denoise(&xs, t, &null).unwrap();
        assert_eq!(model.cfg_denoise(&xs, t, &zs, 1.0).unwrap(), dc);
        assert_eq!(model.cfg_denoise(&xs, t, &zs, 0.0).unwrap(), du);
        let w2 = model.cfg_denoise(&xs, t, &zs, 2.0).unwrap();
        for i in 0..20 {
            for k in 0..2 {
                let affine = du[i][k] + 2.0 * (dc[i][k] - du[i][k]);
                assert!((w2[i][k] - affine).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guidance_scalar_probe() {
        assert_eq!(guide([1.0, 0.0], [0.5, 0.0], 2.0), [1.5, 0.0]);
        assert_eq!(guide([1.0, 0.0], [0.5, 0.0], 1.0), [1.0, 0.0]);
        assert_eq!(guide([1.0, 0.0], [0.5, 0.0], 0.0), [0.5, 0.0]);
    }

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(codebook_purity(&[0, 0, 1, 1], &[5, 5, 6, 6]).unwrap(), 1.0);
        assert_eq!(codebook_purity(&[0, 0, 0, 0], &[1, 1, 2, 3]).unwrap(), 0.5);
        assert!(codebook_purity(&[], &[]).is_err());
    }
}
