//! Flat `key = value` run configuration.
//!
//! Every key has a default; a file only lists the keys it changes. Lines
//! starting with `#` are comments. The canonical text form (all keys, fixed
//! order) is what gets hashed and echoed into output artifacts.

use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::datagen::{default_mixture, MixtureSpec};
use crate::diffusion::DiffusionConfig;
use crate::disco::{Arm, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::latentprior::PriorConfig;
use crate::sampler::SampleOptions;
use crate::tensorgrad::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_per_component: usize,
    pub sigma1: f64,
    pub denoiser_hidden: usize,
    pub encoder_hidden: usize,
    pub prior_hidden: usize,
    pub m: usize,
    pub k: usize,
    pub tau_train: f64,
    pub tau_extract: f64,
    pub p_drop: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub prior_epochs: usize,
    pub prior_batch_size: usize,
    pub prior_lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub p_mean: f64,
    pub p_std: f64,
    /// `None` uses the empirical standard deviation of the training set.
    pub sigma_data: Option<f64>,
    pub n_steps: usize,
    pub w_cfg: f64,
    pub temperature: f64,
    pub n_samples: usize,
    pub arm: Arm,
    pub w2_points: usize,
    pub curvature_trajectories: usize,
    pub jacobian_probes: usize,
    pub analysis_t_min: f64,
    pub n_bins: usize,
    pub loss_probes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DiffusionConfig::default();
        Self {
            seed: 0,
            n_per_component: 1000,
            sigma1: 0.2,
            denoiser_hidden: 64,
            encoder_hidden: 64,
            prior_hidden: 64,
            m: 1,
            k: 8,
            tau_train: 1.0,
            tau_extract: 0.01,
            p_drop: 0.1,
            iterations: 20_000,
            batch_size: 512,
            lr: 1e-3,
            clip_norm: None,
            prior_epochs: 20,
            prior_batch_size: 256,
            prior_lr: 1e-3,
            sigma_min: d.sigma_min,
            sigma_max: d.sigma_max,
            rho: d.rho,
            p_mean: d.p_mean,
            p_std: d.p_std,
            sigma_data: None,
            n_steps: 50,
            w_cfg: 1.0,
            temperature: 1.0,
            n_samples: 8000,
            arm: Arm::Disco,
            w2_points: 1000,
            curvature_trajectories: 256,
            jacobian_probes: 1024,
            analysis_t_min: 0.1,
            n_bins: 12,
            loss_probes: 60_000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_opt(key: &str, value: &str, none: &str) -> Result<Option<f64>> {
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; unknown keys are rejected. Call [`validate`](Self::validate) afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "n_per_component" => self.n_per_component = parse(key, value)?,
            "sigma1" => self.sigma1 = parse(key, value)?,
            "denoiser_hidden" => self.denoiser_hidden = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "prior_hidden" => self.prior_hidden = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "tau_train" => self.tau_train = parse(key, value)?,
            "tau_extract" => self.tau_extract = parse(key, value)?,
            "p_drop" => self.p_drop = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse_opt(key, value, "none")?,
            "prior_epochs" => self.prior_epochs = parse(key, value)?,
            "prior_batch_size" => self.prior_batch_size = parse(key, value)?,
            "prior_lr" => self.prior_lr = parse(key, value)?,
            "sigma_min" => self.sigma_min = parse(key, value)?,
            "sigma_max" => self.sigma_max = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "p_mean" => self.p_mean = parse(key, value)?,
            "p_std" => self.p_std = parse(key, value)?,
            "sigma_data" => self.sigma_data = parse_opt(key, value, "auto")?,
            "n_steps" => self.n_steps = parse(key, value)?,
            "w_cfg" => self.w_cfg = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "arm" => self.arm = value.parse()?,
            "w2_points" => self.w2_points = parse(key, value)?,
            "curvature_trajectories" => self.curvature_trajectories = parse(key, value)?,
            "jacobian_probes" => self.jacobian_probes = parse(key, value)?,
            "analysis_t_min" => self.analysis_t_min = parse(key, value)?,
            "n_bins" => self.n_bins = parse(key, value)?,
            "loss_probes" => self.loss_probes = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("n_per_component", self.n_per_component.to_string()),
            ("sigma1", self.sigma1.to_string()),
            ("denoiser_hidden", self.denoiser_hidden.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("prior_hidden", self.prior_hidden.to_string()),
            ("m", self.m.to_string()),
            ("k", self.k.to_string()),
            ("tau_train", self.tau_train.to_string()),
            ("tau_extract", self.tau_extract.to_string()),
            ("p_drop", self.p_drop.to_string()),
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("clip_norm", show_opt(self.clip_norm, "none")),
            ("prior_epochs", self.prior_epochs.to_string()),
            ("prior_batch_size", self.prior_batch_size.to_string()),
            ("prior_lr", self.prior_lr.to_string()),
            ("sigma_min", self.sigma_min.to_string()),
            ("sigma_max", self.sigma_max.to_string()),
            ("rho", self.rho.to_string()),
            ("p_mean", self.p_mean.to_string()),
            ("p_std", self.p_std.to_string()),
            ("sigma_data", show_opt(self.sigma_data, "auto")),
            ("n_steps", self.n_steps.to_string()),
            ("w_cfg", self.w_cfg.to_string()),
            ("temperature", self.temperature.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("arm", self.arm.to_string()),
            ("w2_points", self.w2_points.to_string()),
            ("curvature_trajectories", self.curvature_trajectories.to_string()),
            ("jacobian_probes", self.jacobian_probes.to_string()),
            ("analysis_t_min", self.analysis_t_min.to_string()),
            ("n_bins", self.n_bins.to_string()),
            ("loss_probes", self.loss_probes.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.n_per_component == 0 {
            return bad("n_per_component must be positive");
        }
        if !positive(self.sigma1) {
            return bad("sigma1 must be positive");
        }
        if self.denoiser_hidden == 0 || self.encoder_hidden == 0 || self.prior_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        if self.m == 0 || self.k < 2 {
            return bad("need m >= 1 and k >= 2");
        }
        if !positive(self.tau_train) || !positive(self.tau_extract) {
            return bad("temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return bad("p_drop must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.prior_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !positive(self.lr) || !positive(self.prior_lr) {
            return bad("learning rates must be positive");
        }
        if self.clip_norm.is_some_and(|c| !positive(c)) {
            return bad("clip_norm must be positive or `none`");
        }
        if self.sigma_data.is_some_and(|s| !positive(s)) {
            return bad("sigma_data must be positive or `auto`");
        }
        self.diffusion_config(1.0)?;
        if self.n_steps < 2 {
            return bad("n_steps must be at least 2");
        }
        if !self.w_cfg.is_finite() {
            return bad("w_cfg must be finite");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if self.w2_points == 0 || self.n_bins == 0 {
            return bad("w2_points and n_bins must be positive");
        }
        if !(positive(self.analysis_t_min) && self.analysis_t_min < self.sigma_max) {
            return bad("analysis_t_min must lie in (0, sigma_max)");
        }
        Ok(())
    }

    pub fn mixture(&self) -> Result<MixtureSpec> {
        let base = default_mixture();
        MixtureSpec::uniform(base.means, self.sigma1)
    }

    /// Diffusion settings; `data_std` fills in `sigma_data = auto`.
    pub fn diffusion_config(&self, data_std: f64) -> Result<DiffusionConfig> {
        let cfg = DiffusionConfig {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            rho: self.rho,
            p_mean: self.p_mean,
            p_std: self.p_std,
            sigma_data: self.sigma_data.unwrap_or(data_std),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            denoiser_hidden: self.denoiser_hidden,
            encoder_hidden: self.encoder_hidden,
            m: self.m,
            k: self.k,
            sigma1: self.sigma1,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            tau_train: self.tau_train,
            p_drop: self.p_drop,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                clip_norm: self.clip_norm,
                ..AdamConfig::default()
            },
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig {
            hidden: self.prior_hidden,
            epochs: self.prior_epochs,
            batch_size: self.prior_batch_size,
            adam: AdamConfig {
                lr: self.prior_lr,
                ..AdamConfig::default()
            },
        }
    }

    pub fn sample_options(&self, record: bool) -> SampleOptions {
        SampleOptions {
            n_steps: self.n_steps,
            w_cfg: self.w_cfg,
            temperature: self.temperature,
            record,
        }
    }
}
