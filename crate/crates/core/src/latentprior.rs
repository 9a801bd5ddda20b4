//! Second-stage prior over discrete latents, `p(z) = prod_i p(z_i | z_<i)`.
//!
//! With a single latent the prior is a categorical table fitted in closed
//! form. With several latents an MLP reads the one-hot codes of the earlier
//! positions (later ones are zeroed) plus a one-hot position and emits `k`
//! logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::{log_sum_exp, AdamConfig, AdamState, Mlp, ParamSet, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 20,
            batch_size: 256,
            adam: AdamConfig::default(),
        }
    }
}

/// Causal MLP over `m` latents with codebook size `k`.
#[derive(Clone, Debug)]
pub struct ArPrior {
    m: usize,
    k: usize,
    mlp: Mlp,
    pub params: ParamSet,
}

impl ArPrior {
    pub fn new<R: Rng + ?Sized>(m: usize, k: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "prior", &[m * k + m, hidden, hidden, k], true, rng);
        Self { m, k, mlp, params }
    }

    pub fn hidden(&self) -> usize {
        self.mlp.sizes()[1]
    }

    /// Network input for position `i`: one-hot codes of `z_<i`, then one-hot `i`.
    fn input_row(&self, prefix: &[usize], i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.m * self.k + self.m];
        for (j, &c) in prefix.iter().take(i).enumerate() {
            row[j * self.k + c] = 1.0;
        }
        row[self.m * self.k + i] = 1.0;
        row
    }

    /// Logits of `p(z_i | z_<i)`; entries of `z` at positions `>= i` are ignored.
    pub fn conditional_logits(&self, z: &[usize], i: usize) -> Result<Vec<f64>> {
        if i >= self.m {
            return Err(Error::invalid(format!("position {i} out of range 0..{}", self.m)));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(1, self.m * self.k + self.m, self.input_row(z, i))?);
        let out = self.mlp.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Mean negative log-likelihood of a batch and its gradients.
    fn nll_and_grads(&self, batch: &[&Vec<usize>]) -> Result<(f64, Vec<Option<Tensor>>)> {
        let width = self.m * self.k + self.m;
        let rows = batch.len() * self.m;
        let mut inputs = Vec::with_capacity(rows * width);
        let mut targets = vec![0.0; rows * self.k];
        for (b, z) in batch.iter().enumerate() {
            for i in 0..self.m {
                inputs.extend(self.input_row(z, i));
                targets[(b * self.m + i) * self.k + z[i]] = 1.0;
            }
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(rows, width, inputs)?);
        let logits = self.mlp.forward(&mut tape, &bound, x)?;
        let logp = tape.log_softmax(logits)?;
        let onehot = tape.leaf(Tensor::matrix(rows, self.k, targets)?);
        let picked = tape.mul(logp, onehot)?;
        let total = tape.sum(picked)?;
        let loss = tape.scale(total, -1.0 / batch.len() as f64)?;
        let grads = tape.backward(loss)?;
        let grads = self.params.ids().map(|id| Some(grads.wrt(bound.var(id)))).collect();
        Ok((tape.value(loss).item(), grads))
    }
}

#[derive(Clone, Debug)]
pub enum LatentPrior {
    /// `m = 1`: class probabilities.
    Categorical { probs: Vec<f64> },
    Autoregressive(ArPrior),
}

fn validate_latents(latents: &[Vec<usize>], m: usize, k: usize) -> Result<()> {
    if latents.is_empty() {
        return Err(Error::invalid("no latents to fit"));
    }
    for z in latents {
        if z.len() != m || z.iter().any(|&c| c >= k) {
            return Err(Error::invalid(format!("latent {z:?} is not in {{0..{k}}}^{m}")));
        }
    }
    Ok(())
}

/// Empirical frequencies of the codes at latent position `pos`.
pub fn latent_histogram(latents: &[Vec<usize>], pos: usize, k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for z in latents {
        h[z[pos]] += 1.0;
    }
    let n = latents.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Total-variation distance `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Fitted prior plus the training log-likelihood (mean per sequence) after each epoch.
#[derive(Clone, Debug)]
pub struct PriorFit {
    pub prior: LatentPrior,
    pub history: Vec<f64>,
}

/// Maximum-likelihood fit of the prior to extracted hard latents.
pub fn ar_train(latents: &[Vec<usize>], m: usize, k: usize, config: &PriorConfig, seed: u64) -> Result<PriorFit> {
    validate_latents(latents, m, k)?;
    if m == 1 {
        let prior = LatentPrior::Categorical {
            probs: latent_histogram(latents, 0, k),
        };
        let ll = prior.log_likelihood(latents)?;
        return Ok(PriorFit {
            prior,
            history: vec![ll; config.epochs.max(1)],
        });
    }
    if config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::Config(format!("invalid prior config {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ar = ArPrior::new(m, k, config.hidden, &mut rng);
    let mut adam = AdamState::new(config.adam.clone(), &ar.params);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Vec<usize>> = chunk.iter().map(|&i| &latents[i]).collect();
            let (_, grads) = ar.nll_and_grads(&batch)?;
            adam.step(&mut ar.params, &grads)?;
        }
        let all: Vec<&Vec<usize>> = latents.iter().collect();
        let (nll, _) = ar.nll_and_grads(&all)?;
        log::debug!("prior epoch {} nll {nll:.5}", epoch + 1);
        history.push(-nll);
    }
    Ok(PriorFit {
        prior: LatentPrior::Autoregressive(ar),
        history,
    })
}

fn sample_index<R: Rng + ?Sized>(logp: &[f64], temperature: f64, rng: &mut R) -> usize {
    if temperature == 0.0 {
        return logp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0;
    }
    let scaled: Vec<f64> = logp.iter().map(|l| l / temperature).collect();
    let lse = log_sum_exp(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, s) in scaled.iter().enumerate() {
        let p = (s - lse).exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

impl LatentPrior {
    pub fn m(&self) -> usize {
        match self {
            LatentPrior::Categorical { .. } => 1,
            LatentPrior::Autoregressive(ar) => ar.m,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            LatentPrior::Categorical { probs } => probs.len(),
            LatentPrior::Autoregressive(ar) => ar.k,
        }
    }

    /// Log-probabilities of `z_i` given the earlier entries of `z`.
    pub fn conditional_log_probs(&self, z: &[usize], i: usize) -> Result<Vec<f64>> {
        match self {
            LatentPrior::Categorical { probs } => {
                if i != 0 {
                    return Err(Error::invalid("categorical prior has a single position"));
                }
                Ok(probs.iter().map(|p| p.ln()).collect())
            }
            LatentPrior::Autoregressive(ar) => {
                let logits = ar.conditional_logits(z, i)?;
                let lse = log_sum_exp(&logits);
                Ok(logits.iter().map(|l| l - lse).collect())
            }
        }
    }

    /// Mean log-probability per latent vector.
    pub fn log_likelihood(&self, latents: &[Vec<usize>]) -> Result<f64> {
        validate_latents(latents, self.m(), self.k())?;
        let mut total = 0.0;
        for z in latents {
            for i in 0..self.m() {
                total += self.conditional_log_probs(z, i)?[z[i]];
            }
        }
        Ok(total / latents.len() as f64)
    }

    /// Ancestral sample; logits are divided by `temperature`, and a zero
    /// temperature picks the most likely code at every position.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, temperature: f64) -> Result<Vec<usize>> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("sampling temperature must be >= 0, got {temperature}")));
        }
        let mut z = Vec::with_capacity(self.m());
        for i in 0..self.m() {
            let logp = self.conditional_log_probs(&z, i)?;
            z.push(sample_index(&logp, temperature, rng));
        }
        Ok(z)
    }

    /// Marginal distribution of the first latent.
    pub fn first_marginal(&self) -> Result<Vec<f64>> {
        Ok(self.conditional_log_probs(&[], 0)?.iter().map(|l| l.exp()).collect())
    }
}

pub fn ar_sample<R: Rng + ?Sized>(prior: &LatentPrior, rng: &mut R, temperature: f64) -> Result<Vec<usize>> {
    prior.sample(rng, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_mle_is_the_histogram() {
        let mut latents = vec![vec![0]; 900];
        latents.extend(vec![vec![1]; 100]);
        let fit = ar_train(&latents, 1, 2, &PriorConfig::default(), 0).unwrap();
        let LatentPrior::Categorical { probs } = &fit.prior else { panic!("expected categorical") };
        assert_eq!(probs, &vec![0.9, 0.1]);
        assert!(fit.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn categorical_matches_empirical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let latents: Vec<Vec<usize>> = (0..5000).map(|_| vec![rng.random_range(0..8usize).min(rng.random_range(0..8))]).collect();
        let fit = ar_train(&latents, 1, 8, &PriorConfig::default(), 0).unwrap();
        let tv = total_variation(&fit.prior.first_marginal().unwrap(), &latent_histogram(&latents, 0, 8));
        assert!(tv < 1e-12);
    }

    #[test]
    fn sampled_frequencies_match_categorical() {
        let prior = LatentPrior::Categorical { probs: vec![0.5, 0.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let zeros = (0..n).filter(|_| prior.sample(&mut rng, 1.0).unwrap()[0] == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.005);

        let probs = vec![0.05, 0.15, 0.3, 0.1, 0.0, 0.2, 0.12, 0.08];
        let prior = LatentPrior::Categorical { probs: probs.clone() };
        let draws: Vec<Vec<usize>> = (0..n).map(|_| prior.sample(&mut rng, 1.0).unwrap()).collect();
        assert!(total_variation(&latent_histogram(&draws, 0, 8), &probs) < 0.02);
        assert!(draws.iter().all(|z| z[0] != 4));
    }

    #[test]
    fn one_hot_prior_is_deterministic() {
        let mut probs = vec![0.0; 8];
        probs[3] = 1.0;
        let prior = LatentPrior::Categorical { probs };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| prior.sample(&mut rng, 1.0).unwrap() == vec![3]));
    }

    #[test]
    fn zero_temperature_is_argmax_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ar = ArPrior::new(3, 4, 8, &mut rng);
        let mut ar = ar;
        for id in ar.params.ids().collect::<Vec<_>>() {
            for v in ar.params.get_mut(id).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let prior = LatentPrior::Autoregressive(ar);
        let first = prior.sample(&mut rng, 0.0).unwrap();
        for _ in 0..20 {
            assert_eq!(prior.sample(&mut rng, 0.0).unwrap(), first);
        }
        let mut z = Vec::new();
        for i in 0..3 {
            let lp = prior.conditional_log_probs(&z, i).unwrap();
            z.push(sample_index(&lp, 0.0, &mut rng));
        }
        assert_eq!(z, first);
        assert!(prior.sample(&mut rng, -1.0).is_err());
    }

    #[test]
    fn autoregressive_prior_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ar = ArPrior::new(3, 5, 8, &mut rng);
        for id in ar.params.ids().collect::<Vec<_>>() {
            for v in ar.params.get_mut(id).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        for i in 0..3 {
            let base = ar.conditional_logits(&[1, 2, 3], i).unwrap();
            for j in i..3 {
                for c in 0..5 {
                    let mut z = vec![1, 2, 3];
                    z[j] = c;
                    assert_eq!(ar.conditional_logits(&z, i).unwrap(), base);
                }
            }
        }
        // Earlier positions do matter.
        assert_ne!(ar.conditional_logits(&[0, 0, 0], 2).unwrap(), ar.conditional_logits(&[4, 0, 0], 2).unwrap());
    }

    #[test]
    fn autoregressive_fit_learns_dependency() {
        // z_1 copies z_0, which is uniform over {0, 1, 2}.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let latents: Vec<Vec<usize>> = (0..600)
            .map(|_| {
                let a = rng.random_range(0..3);
                vec![a, a]
            })
            .collect();
        let cfg = PriorConfig {
            hidden: 16,
            epochs: 40,
            batch_size: 64,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
        };
        let fit = ar_train(&latents, 2, 3, &cfg, 7).unwrap();
        assert!(fit.history.last().unwrap() > fit.history.first().unwrap());
        // Optimum is -ln 3 per sequence.
        assert!((fit.history.last().unwrap() + 3f64.ln()).abs() < 0.05, "{:?}", fit.history.last());
        for _ in 0..200 {
            let z = fit.prior.sample(&mut rng, 1.0).unwrap();
            assert_eq!(z[0], z[1]);
        }
    }

    #[test]
    fn rejects_bad_latents() {
        assert!(ar_train(&[], 1, 2, &PriorConfig::default(), 0).is_err());
        assert!(ar_train(&[vec![2]], 1, 2, &PriorConfig::default(), 0).is_err());
        assert!(ar_train(&[vec![0, 1]], 1, 2, &PriorConfig::default(), 0).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }
}
