use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Bound, ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Fully connected network with SiLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `<prefix>.<i>.weight` / `<prefix>.<i>.bias` for every layer.
    /// Weights are N(0, 1/fan_in); biases start at zero. With `zero_output`
    /// the last layer starts at exactly zero.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        sizes: &[usize],
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = i + 2 == sizes.len();
            let std = (1.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    if last && zero_output {
                        0.0
                    } else {
                        z * std
                    }
                })
                .collect();
            let w = params.add(format!("{prefix}.{i}.weight"), Tensor::matrix(fan_in, fan_out, w).unwrap());
            let b = params.add(format!("{prefix}.{i}.bias"), Tensor::zeros(&[fan_out]));
            layers.push((w, b));
        }
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, bound.var(w), bound.var(b))?;
            if i + 1 < self.layers.len() {
                h = tape.silu(h)?;
            }
        }
        Ok(h)
    }
}
