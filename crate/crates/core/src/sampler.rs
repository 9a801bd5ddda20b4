//! EDM time grid, Heun probability-flow ODE solver and sample generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datagen::Point;
use crate::diffusion::{DiffusionConfig, Latent};
use crate::disco::DiscoModel;
use crate::error::{Error, Result};
use crate::latentprior::LatentPrior;

/// `t_0 > t_1 > ... > t_{n-1} > t_n = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Wraps an explicit grid; it must be strictly decreasing and end at 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let ok = times.len() >= 2
            && *times.last().unwrap() == 0.0
            && times.windows(2).all(|w| w[0] > w[1])
            && times.iter().all(|t| t.is_finite());
        if !ok {
            return Err(Error::invalid("time grid must be finite, strictly decreasing and end at 0"));
        }
        Ok(Self { times })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// `t_i = (s_max^(1/rho) + i/(n-1) (s_min^(1/rho) - s_max^(1/rho)))^rho` for
/// `i < n`, then `t_n = 0`.
pub fn edm_time_grid(config: &DiffusionConfig, n_steps: usize) -> Result<TimeGrid> {
    if n_steps < 2 {
        return Err(Error::invalid(format!("time grid needs at least 2 steps, got {n_steps}")));
    }
    config.validate()?;
    let inv = 1.0 / config.rho;
    let (a, b) = (config.sigma_max.powf(inv), config.sigma_min.powf(inv));
    let mut times: Vec<f64> = (0..n_steps)
        .map(|i| (a + i as f64 / (n_steps - 1) as f64 * (b - a)).powf(config.rho))
        .collect();
    times[0] = config.sigma_max;
    times[n_steps - 1] = config.sigma_min;
    times.push(0.0);
    TimeGrid::from_times(times)
}

/// Recorded ODE path of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Grid times `t_0..=t_n`.
    pub times: Vec<f64>,
    /// States `x(t_0)..=x(t_n)`.
    pub states: Vec<Point>,
    /// Drifts `(x_i - D(x_i, t_i)) / t_i` at the predictor points, `i < n`.
    pub drifts: Vec<Point>,
    pub latent: Latent,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub finals: Vec<Point>,
    /// One per sample when recording; `latent` and `seed` are left empty.
    pub trajectories: Option<Vec<Trajectory>>,
    /// Denoiser evaluations per sample.
    pub nfe: usize,
}

fn drift(x: &[Point], d: &[Point], t: f64) -> Vec<Point> {
    x.iter().zip(d).map(|(x, d)| [(x[0] - d[0]) / t, (x[1] - d[1]) / t]).collect()
}

fn check_finite(xs: &[Point], step: usize) -> Result<()> {
    if xs.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("ODE state at step {step}")))
    }
}

/// Heun's method for `dx/dt = (x - D(x, t)) / t` over a batch. `denoise`
/// receives the whole batch at one noise level. The last step (to `t = 0`)
/// is a plain Euler step.
pub fn heun_solve<F>(mut denoise: F, grid: &TimeGrid, x0: &[Point], record: bool) -> Result<Solution>
where
    F: FnMut(&[Point], f64) -> Result<Vec<Point>>,
{
    let ts = grid.times();
    let n = grid.n_steps();
    let mut x = x0.to_vec();
    check_finite(&x, 0)?;
    let mut nfe = 0;
    let mut trajectories = record.then(|| {
        x.iter()
            .map(|&p| Trajectory {
                times: ts.to_vec(),
                states: vec![p],
                drifts: Vec::with_capacity(n),
                latent: None,
                seed: 0,
            })
            .collect::<Vec<_>>()
    });
    for i in 0..n {
        let (t, t_next) = (ts[i], ts[i + 1]);
        let h = t_next - t;
        let d = denoise(&x, t)?;
        nfe += 1;
        let v = drift(&x, &d, t);
        let mut next: Vec<Point> = x.iter().zip(&v).map(|(x, v)| [x[0] + h * v[0], x[1] + h * v[1]]).collect();
        if t_next != 0.0 {
            check_finite(&next, i + 1)?;
            let d2 = denoise(&next, t_next)?;
            nfe += 1;
            let v2 = drift(&next, &d2, t_next);
            next = x
                .iter()
                .zip(v.iter().zip(&v2))
                .map(|(x, (a, b))| [x[0] + h * (0.5 * a[0] + 0.5 * b[0]), x[1] + h * (0.5 * a[1] + 0.5 * b[1])])
                .collect();
        }
        check_finite(&next, i + 1)?;
        if let Some(trs) = trajectories.as_mut() {
            for ((tr, v), p) in trs.iter_mut().zip(&v).zip(&next) {
                tr.drifts.push(*v);
                tr.states.push(*p);
            }
        }
        x = next;
    }
    Ok(Solution {
        finals: x,
        trajectories,
        nfe,
    })
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub samples: Vec<Point>,
    pub latents: Vec<Latent>,
    pub seeds: Vec<u64>,
    pub trajectories: Option<Vec<Trajectory>>,
    pub nfe: usize,
}

/// Sampling options shared by both arms.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOptions {
    pub n_steps: usize,
    pub w_cfg: f64,
    pub temperature: f64,
    pub record: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            n_steps: 50,
            w_cfg: 1.0,
            temperature: 1.0,
            record: false,
        }
    }
}

/// Draws latents from `prior` (or uses the null token when `prior` is
/// `None`), starts from `N(0, t_0^2 I)` and integrates the guided ODE.
/// Every sample has its own seed derived from `seed`.
pub fn generate(
    model: &DiscoModel,
    prior: Option<&LatentPrior>,
    n_samples: usize,
    seed: u64,
    options: &SampleOptions,
) -> Result<Generated> {
    let grid = edm_time_grid(&model.diffusion, options.n_steps)?;
    let t0 = grid.times()[0];
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Vec::with_capacity(n_samples);
    let mut seeds = Vec::with_capacity(n_samples);
    let mut x0 = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let s: u64 = master.random();
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let z = match prior {
            Some(p) => {
                let z = p.sample(&mut rng, options.temperature)?;
                if z.len() != model.m() || p.k() != model.k() {
                    return Err(Error::invalid("prior and model disagree on the latent shape"));
                }
                Some(z)
            }
            None => None,
        };
        let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        x0.push([t0 * e[0], t0 * e[1]]);
        latents.push(z);
        seeds.push(s);
    }
    if n_samples == 0 {
        return Ok(Generated {
            samples: Vec::new(),
            latents,
            seeds,
            trajectories: options.record.then(Vec::new),
            nfe: 0,
        });
    }
    let conditional = prior.is_some();
    let sol = heun_solve(
        |xs, t| {
            if conditional {
                model.cfg_denoise(xs, t, &latents, options.w_cfg)
            } else {
                model.denoise(xs, t, &latents)
            }
        },
        &grid,
        &x0,
        options.record,
    )?;
    let trajectories = sol.trajectories.map(|mut trs| {
        for ((tr, z), s) in trs.iter_mut().zip(&latents).zip(&seeds) {
            tr.latent = z.clone();
            tr.seed = *s;
        }
        trs
    });
    Ok(Generated {
        samples: sol.finals,
        latents,
        seeds,
        trajectories,
        nfe: sol.nfe,
    })
}
