//! EDM-style diffusion core for the 2-D toy problem.
//!
//! The denoiser is written in score form,
//!
//! ```text
//! G(x, t, z) = (F(z) - x) / (t^2 + sigma_1^2) + H(x, t)
//! D(x, t, z) = x + t^2 G(x, t, z)
//! ```
//!
//! where `F` is a learned embedding per discrete latent and `H` a residual
//! MLP. With `H = 0` and `F(z) = mu`, `D` is exactly the posterior mean of a
//! single isotropic Gaussian with std `sigma_1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::Point;
use crate::error::{Error, Result};
use crate::tensorgrad::{Bound, Mlp, ParamId, ParamSet, Tape, Tensor, Var};

/// Noise-schedule and loss-weighting constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_data: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            p_mean: -1.2,
            p_std: 1.2,
            // Per-coordinate std of the default octagon mixture: sqrt(4.5 + 0.04).
            sigma_data: 4.54f64.sqrt(),
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min > 0.0
            && self.sigma_min < self.sigma_max
            && self.sigma_max.is_finite()
            && self.rho >= 1.0
            && self.p_std >= 0.0
            && self.p_mean.is_finite()
            && self.sigma_data > 0.0
            && self.sigma_data.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid diffusion config {self:?}")))
        }
    }
}

/// Log-normal training noise level `exp(P_mean + P_std * xi)`.
pub fn sample_training_sigma<R: Rng + ?Sized>(config: &DiffusionConfig, rng: &mut R) -> f64 {
    let xi: f64 = rng.sample(StandardNormal);
    (config.p_mean + config.p_std * xi).exp()
}

/// `(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2`.
pub fn loss_weight(config: &DiffusionConfig, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("loss weight needs sigma > 0, got {sigma}")));
    }
    let sd2 = config.sigma_data * config.sigma_data;
    Ok((sigma * sigma + sd2) / (sigma * sigma * sd2))
}

pub const TIME_FEATURES: usize = 16;
const MIN_FREQ: f64 = 0.15;
const MAX_FREQ: f64 = 3.0;

/// Sinusoidal features of `ln t` at geometrically spaced frequencies.
pub fn time_embedding(t: f64) -> [f64; TIME_FEATURES] {
    let half = TIME_FEATURES / 2;
    let lt = t.ln();
    let mut out = [0.0; TIME_FEATURES];
    for j in 0..half {
        let frac = j as f64 / (half - 1) as f64;
        let w = MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(frac);
        out[2 * j] = (w * lt).sin();
        out[2 * j + 1] = (w * lt).cos();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Hidden width of the residual MLP `H`.
    pub hidden: usize,
    /// Number of discrete latents.
    pub m: usize,
    /// Codebook size per latent.
    pub k: usize,
    /// Component std used by the closed-form part of the score.
    pub sigma1: f64,
    /// Data scale used to normalise the input and output of `H`.
    pub sigma_data: f64,
}

/// Per-sample conditioning as seen by the tape.
pub struct TapeCond {
    /// `m` relaxed or one-hot weight matrices of shape `[batch, k]`; `None`
    /// when every sample uses the null embedding.
    pub weights: Option<Vec<Var>>,
    /// `false` replaces the latent embedding by the null embedding.
    pub keep: Vec<bool>,
}

impl TapeCond {
    pub fn null(batch: usize) -> Self {
        Self {
            weights: None,
            keep: vec![false; batch],
        }
    }
}

/// Hard latent for one sample; `None` is the null token.
pub type Latent = Option<Vec<usize>>;

#[derive(Clone, Debug)]
pub struct ToyDenoiser {
    config: DenoiserConfig,
    h: Mlp,
    embeddings: Vec<ParamId>,
    null: ParamId,
}

fn const_rows(tape: &mut Tape, rows: impl Iterator<Item = [f64; 2]>) -> Var {
    let data: Vec<f64> = rows.flatten().collect();
    let n = data.len() / 2;
    tape.leaf(Tensor::matrix(n, 2, data).unwrap())
}

impl ToyDenoiser {
    /// Registers `denoiser.*` parameters. `H` has four affine layers and a
    /// zero-initialised output, so a fresh model has `H = 0`.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, config: DenoiserConfig, rng: &mut R) -> Self {
        assert!(config.m >= 1 && config.k >= 1 && config.hidden >= 1);
        let w = config.hidden;
        let h = Mlp::new(params, "denoiser.h", &[2 + TIME_FEATURES, w, w, w, 2], true, rng);
        let embeddings = (0..config.m)
            .map(|j| {
                let data: Vec<f64> = (0..config.k * 2)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                params.add(format!("denoiser.embed.{j}"), Tensor::matrix(config.k, 2, data).unwrap())
            })
            .collect();
        let null = params.add("denoiser.null", Tensor::zeros(&[config.m, 2]));
        Self {
            config,
            h,
            embeddings,
            null,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn embedding_ids(&self) -> &[ParamId] {
        &self.embeddings
    }

    pub fn null_id(&self) -> ParamId {
        self.null
    }

    pub fn h_param_ids(&self) -> Vec<ParamId> {
        self.h.param_ids().collect()
    }

    /// Every parameter of the denoiser (the model parameters theta).
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.h_param_ids();
        ids.extend(&self.embeddings);
        ids.push(self.null);
        ids
    }

    /// Embedding row `F_j(code)`.
    pub fn embedding(&self, params: &ParamSet, latent_dim: usize, code: usize) -> Point {
        let row = params.get(self.embeddings[latent_dim]).row(code);
        [row[0], row[1]]
    }

    pub fn set_embedding(&self, params: &mut ParamSet, latent_dim: usize, code: usize, value: Point) {
        let t = params.get_mut(self.embeddings[latent_dim]);
        t.data_mut()[code * 2..code * 2 + 2].copy_from_slice(&value);
    }

    /// Score head `G` for a batch with per-row noise levels `ts`.
    pub fn score_head_var(&self, tape: &mut Tape, bound: &Bound, x: Var, ts: &[f64], cond: &TapeCond) -> Result<Var> {
        let b = ts.len();
        let m = self.config.m;
        if tape.value(x).shape() != [b, 2] {
            return Err(Error::Shape {
                op: "score_head",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![b, 2],
            });
        }
        if cond.keep.len() != b {
            return Err(Error::invalid("one keep flag per sample"));
        }
        if let Some(t) = ts.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::invalid(format!("noise level must be positive, got {t}")));
        }

        let averaging = tape.leaf(Tensor::full(&[b, m], 1.0 / m as f64));
        let null_bar = tape.matmul(averaging, bound.var(self.null))?;
        let any_keep = cond.keep.iter().any(|&k| k);
        let anchor = match (&cond.weights, any_keep) {
            (Some(ws), true) => {
                if ws.len() != m {
                    return Err(Error::invalid(format!("expected {m} latent weight matrices, got {}", ws.len())));
                }
                let mut fbar: Option<Var> = None;
                for (w, &table) in ws.iter().zip(&self.embeddings) {
                    let f = tape.matmul(*w, bound.var(table))?;
                    fbar = Some(match fbar {
                        Some(acc) => tape.add(acc, f)?,
                        None => f,
                    });
                }
                let fbar = tape.scale(fbar.unwrap(), 1.0 / m as f64)?;
                if cond.keep.iter().all(|&k| k) {
                    fbar
                } else {
                    let keep = const_rows(tape, cond.keep.iter().map(|&k| if k { [1.0; 2] } else { [0.0; 2] }));
                    let drop = const_rows(tape, cond.keep.iter().map(|&k| if k { [0.0; 2] } else { [1.0; 2] }));
                    let a = tape.mul(keep, fbar)?;
                    let c = tape.mul(drop, null_bar)?;
                    tape.add(a, c)?
                }
            }
            (None, true) => return Err(Error::invalid("latent weights missing for kept samples")),
            (_, false) => null_bar,
        };

        let s2 = self.config.sigma1 * self.config.sigma1;
        let inv = const_rows(tape, ts.iter().map(|t| [1.0 / (t * t + s2); 2]));
        let diff = tape.sub(anchor, x)?;
        let closed = tape.mul(diff, inv)?;

        let h = self.residual_var(tape, bound, x, ts)?;
        tape.add(closed, h)
    }

    /// Residual term `H(x, t)` alone.
    ///
    /// The MLP sees `x / sqrt(t^2 + sigma_data^2)` and the time features, and
    /// its output is scaled by `sigma_data / (t sqrt(t^2 + sigma_data^2))`, so
    /// `t^2 H` moves `D` by at most about `sigma_data` times the raw output.
    pub fn residual_var(&self, tape: &mut Tape, bound: &Bound, x: Var, ts: &[f64]) -> Result<Var> {
        let sd = self.config.sigma_data;
        let c_in = const_rows(tape, ts.iter().map(|t| [1.0 / (t * t + sd * sd).sqrt(); 2]));
        let x_in = tape.mul(x, c_in)?;
        let emb: Vec<f64> = ts.iter().flat_map(|&t| time_embedding(t)).collect();
        let emb = tape.leaf(Tensor::matrix(ts.len(), TIME_FEATURES, emb)?);
        let h_in = tape.concat(x_in, emb)?;
        let raw = self.h.forward(tape, bound, h_in)?;
        let c_out = const_rows(tape, ts.iter().map(|t| [sd / (t * (t * t + sd * sd).sqrt()); 2]));
        tape.mul(raw, c_out)
    }

    /// `D = x + t^2 G`.
    pub fn denoise_var(&self, tape: &mut Tape, bound: &Bound, x: Var, ts: &[f64], cond: &TapeCond) -> Result<Var> {
        let g = self.score_head_var(tape, bound, x, ts, cond)?;
        let t2 = const_rows(tape, ts.iter().map(|t| [t * t; 2]));
        let step = tape.mul(g, t2)?;
        tape.add(x, step)
    }

    /// One-hot conditioning on the tape for hard latents.
    pub fn hard_cond(&self, tape: &mut Tape, latents: &[Latent]) -> Result<TapeCond> {
        let (m, k) = (self.config.m, self.config.k);
        let keep: Vec<bool> = latents.iter().map(Option::is_some).collect();
        if !keep.iter().any(|&k| k) {
            return Ok(TapeCond::null(latents.len()));
        }
        let mut weights = Vec::with_capacity(m);
        for j in 0..m {
            let mut data = vec![0.0; latents.len() * k];
            for (i, z) in latents.iter().enumerate() {
                if let Some(z) = z {
                    if z.len() != m {
                        return Err(Error::invalid(format!("latent has {} entries, expected {m}", z.len())));
                    }
                    if z[j] >= k {
                        return Err(Error::invalid(format!("latent index {} out of range 0..{k}", z[j])));
                    }
                    data[i * k + z[j]] = 1.0;
                }
            }
            weights.push(tape.leaf(Tensor::matrix(latents.len(), k, data)?));
        }
        Ok(TapeCond {
            weights: Some(weights),
            keep,
        })
    }

    fn eval(&self, params: &ParamSet, xs: &[Point], ts: &[f64], latents: &[Latent], denoise: bool) -> Result<Vec<Point>> {
        if xs.len() != latents.len() || xs.len() != ts.len() {
            return Err(Error::invalid("one latent and one noise level per input point"));
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(xs.len(), 2, xs.iter().flatten().copied().collect())?);
        let cond = self.hard_cond(&mut tape, latents)?;
        let out = if denoise {
            self.denoise_var(&mut tape, &bound, x, ts, &cond)?
        } else {
            self.score_head_var(&mut tape, &bound, x, ts, &cond)?
        };
        Ok(tape.value(out).data().chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// Score head `G(x, t, z)` at a shared noise level.
    pub fn score_head(&self, params: &ParamSet, xs: &[Point], t: f64, latents: &[Latent]) -> Result<Vec<Point>> {
        self.eval(params, xs, &vec![t; xs.len()], latents, false)
    }

    /// Denoiser `D(x, t, z)` at a shared noise level.
    pub fn denoise(&self, params: &ParamSet, xs: &[Point], t: f64, latents: &[Latent]) -> Result<Vec<Point>> {
        self.eval(params, xs, &vec![t; xs.len()], latents, true)
    }

    /// Denoiser with one noise level per point.
    pub fn denoise_rows(&self, params: &ParamSet, xs: &[Point], ts: &[f64], latents: &[Latent]) -> Result<Vec<Point>> {
        self.eval(params, xs, ts, latents, true)
    }
}

/// One denoising-score-matching example.
#[derive(Clone, Debug, PartialEq)]
pub struct DsmExample {
    pub y: Point,
    pub sigma: f64,
    /// Standard-normal draw; the perturbation is `sigma * noise`.
    pub noise: Point,
}

/// Draws `sigma ~ p(sigma)` and a noise vector for every clean point.
pub fn draw_examples<R: Rng + ?Sized>(config: &DiffusionConfig, ys: &[Point], rng: &mut R) -> Vec<DsmExample> {
    ys.iter()
        .map(|&y| {
            let sigma = sample_training_sigma(config, rng);
            let noise = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            DsmExample { y, sigma, noise }
        })
        .collect()
}

impl DsmExample {
    pub fn noisy(&self) -> Point {
        [
            self.y[0] + self.sigma * self.noise[0],
            self.y[1] + self.sigma * self.noise[1],
        ]
    }
}

/// Batch mean of `lambda(sigma) ||D(y + n, sigma, z) - y||^2` on the tape.
pub fn dsm_loss_var(
    tape: &mut Tape,
    bound: &Bound,
    model: &ToyDenoiser,
    config: &DiffusionConfig,
    batch: &[DsmExample],
    cond: &TapeCond,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::invalid("dsm loss needs a non-empty batch"));
    }
    let b = batch.len();
    let x = tape.leaf(Tensor::matrix(b, 2, batch.iter().flat_map(|e| e.noisy()).collect())?);
    let ts: Vec<f64> = batch.iter().map(|e| e.sigma).collect();
    let d = model.denoise_var(tape, bound, x, &ts, cond)?;
    let y = tape.leaf(Tensor::matrix(b, 2, batch.iter().flat_map(|e| e.y).collect())?);
    let resid = tape.sub(d, y)?;
    let sq = tape.mul(resid, resid)?;
    let mut w = Vec::with_capacity(2 * b);
    for e in batch {
        let l = loss_weight(config, e.sigma)? / b as f64;
        w.extend([l, l]);
    }
    let w = tape.leaf(Tensor::matrix(b, 2, w)?);
    let weighted = tape.mul(sq, w)?;
    let loss = tape.sum(weighted)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("dsm loss".into()));
    }
    Ok(loss)
}

/// Evaluates the weighted DSM loss for the hard-latent model without gradients.
pub fn dsm_loss(
    model: &ToyDenoiser,
    params: &ParamSet,
    config: &DiffusionConfig,
    batch: &[DsmExample],
    latents: &[Latent],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let cond = model.hard_cond(&mut tape, latents)?;
    let loss = dsm_loss_var(&mut tape, &bound, model, config, batch, &cond)?;
    Ok(tape.value(loss).item())
}

/// Per-example weighted losses for an arbitrary denoiser `f(x, sigma) -> D`.
pub fn weighted_losses_with(
    config: &DiffusionConfig,
    batch: &[DsmExample],
    mut denoise: impl FnMut(usize, Point, f64) -> Point,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d = denoise(i, e.noisy(), e.sigma);
            let r = (d[0] - e.y[0]).powi(2) + (d[1] - e.y[1]).powi(2);
            let l = loss_weight(config, e.sigma)? * r;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::NonFinite("dsm loss".into()))
            }
        })
        .collect()
}
