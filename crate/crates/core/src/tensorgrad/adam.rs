//! Adam with bias correction and optional global-norm clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; `None`
    /// freezes that parameter (no moment decay, no update).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} gradients / {} moments for {} parameters",
                grads.len(),
                self.first_moment.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            let Some(g) = g else { continue };
            if g.shape() != params.get(id).shape() || g.shape() != self.first_moment[id.index()].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: params.get(id).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", params.name(id))));
            }
        }

        let clip_scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().flatten().map(Tensor::squared_norm).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for (id, g) in params.ids().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j] * clip_scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scalar(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_scalar(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        let delta = p.iter().next().unwrap().1.item() - 0.5;
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "delta = {delta}");
        assert!((delta + 9.99999e-4).abs() < 1e-9);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_noop() {
        let mut p = one_scalar(2.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(p.iter().next().unwrap().1.item(), 2.0);
        assert_eq!(adam.first_moment[0].item(), 0.0);
        assert_eq!(adam.second_moment[0].item(), 0.0);
    }

    #[test]
    fn zero_gradient_decays_existing_moments() {
        let mut p = one_scalar(2.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        let (m1, v1) = (adam.first_moment[0].item(), adam.second_moment[0].item());
        adam.step(&mut p, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert!((adam.first_moment[0].item() - 0.9 * m1).abs() < 1e-18);
        assert!((adam.second_moment[0].item() - 0.999 * v1).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        // Simulated by hand: with g constant, m_hat = g and v_hat = g^2 at
        // every step, so each update is lr * g / (|g| + eps).
        let mut p = one_scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let g = [Some(Tensor::scalar(0.37))];
        adam.step(&mut p, &g).unwrap();
        let d1 = p.iter().next().unwrap().1.item();
        adam.step(&mut p, &g).unwrap();
        let d2 = p.iter().next().unwrap().1.item() - d1;
        assert!(d2.abs() <= d1.abs() * (1.0 + 1e-6), "d1={d1} d2={d2}");
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut p = one_scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[None]).unwrap();
        assert_eq!(p.iter().next().unwrap().1.item(), 1.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = one_scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Some(Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn clipping_bounds_effective_gradient() {
        let mut p = one_scalar(0.0);
        let cfg = AdamConfig {
            clip_norm: Some(100.0),
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &p);
        adam.step(&mut p, &[Some(Tensor::scalar(1e6))]).unwrap();
        assert!((adam.first_moment[0].item() - 0.1 * 100.0).abs() < 1e-9);
    }
}
