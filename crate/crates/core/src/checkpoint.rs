//! Versioned JSON checkpoints. Tensors are stored as base64 little-endian
//! `f64` bytes with explicit shapes, so a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::disco::{Arm, DiscoModel, ModelConfig, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::latentprior::{ArPrior, LatentPrior};
use crate::tensorgrad::{AdamConfig, AdamState, ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorRecord {
    pub fn encode(name: &str, t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", self.name)))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("tensor `{}`: truncated data", self.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", self.name)))
    }
}

fn encode_params(params: &ParamSet) -> Vec<TensorRecord> {
    params.iter().map(|(n, t)| TensorRecord::encode(n, t)).collect()
}

/// Overwrites every parameter of `params` from `records`; names must match one to one.
fn restore_params(params: &mut ParamSet, records: &[TensorRecord]) -> Result<()> {
    if records.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for r in records {
        params.set(&r.name, r.decode()?)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<TensorRecord>,
    pub second_moment: Vec<TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngRecord {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: STANDARD.encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = STANDARD
            .decode(&self.seed)
            .map_err(|e| Error::Checkpoint(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {v} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// First-stage training state: denoiser, encoder, optimiser and sampler stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    /// Effective run configuration in canonical text form.
    pub config: String,
    pub arm: Arm,
    pub step: u64,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub params: Vec<TensorRecord>,
    pub adam: AdamRecord,
    pub rng: RngRecord,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, model_config: &ModelConfig, config_text: &str, config_hash: &str) -> Self {
        let names: Vec<&str> = trainer.model.params.iter().map(|(n, _)| n).collect();
        let moments = |ms: &[Tensor]| ms.iter().zip(&names).map(|(t, n)| TensorRecord::encode(n, t)).collect();
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            config: config_text.to_string(),
            arm: trainer.arm,
            step: trainer.step,
            model: model_config.clone(),
            diffusion: trainer.model.diffusion.clone(),
            train: trainer.config.clone(),
            params: encode_params(&trainer.model.params),
            adam: AdamRecord {
                config: trainer.adam.config.clone(),
                step: trainer.adam.step,
                first_moment: moments(&trainer.adam.first_moment),
                second_moment: moments(&trainer.adam.second_moment),
            },
            rng: RngRecord::capture(&trainer.rng),
        }
    }

    pub fn model(&self) -> Result<DiscoModel> {
        check_version(self.format_version)?;
        let mut model = DiscoModel::new(&self.model, self.diffusion.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        restore_params(&mut model.params, &self.params)?;
        Ok(model)
    }

    /// Rebuilds the trainer exactly as it was at capture time.
    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        let decode_all = |rs: &[TensorRecord]| -> Result<Vec<Tensor>> {
            if rs.len() != model.params.len() {
                return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
            }
            rs.iter()
                .zip(model.params.iter())
                .map(|(r, (_, p))| {
                    let t = r.decode()?;
                    if t.shape() != p.shape() {
                        return Err(Error::Checkpoint(format!("moment `{}` has the wrong shape", r.name)));
                    }
                    Ok(t)
                })
                .collect()
        };
        let adam = AdamState {
            config: self.adam.config.clone(),
            step: self.adam.step,
            first_moment: decode_all(&self.adam.first_moment)?,
            second_moment: decode_all(&self.adam.second_moment)?,
        };
        self.train.validate()?;
        Ok(Trainer {
            model,
            adam,
            rng: self.rng.restore()?,
            config: self.train.clone(),
            arm: self.arm,
            step: self.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        check_version(ckpt.format_version)?;
        Ok(ckpt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorRecord {
    Categorical { probs: Vec<f64> },
    Autoregressive { m: usize, k: usize, hidden: usize, params: Vec<TensorRecord> },
}

/// Second-stage latent prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorCheckpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: String,
    pub prior: PriorRecord,
    /// Per-epoch training NLL.
    pub history: Vec<f64>,
}

impl PriorCheckpoint {
    pub fn capture(prior: &LatentPrior, history: &[f64], config_text: &str, config_hash: &str) -> Self {
        let record = match prior {
            LatentPrior::Categorical { probs } => PriorRecord::Categorical { probs: probs.clone() },
            LatentPrior::Autoregressive(ar) => PriorRecord::Autoregressive {
                m: prior.m(),
                k: prior.k(),
                hidden: ar.hidden(),
                params: encode_params(&ar.params),
            },
        };
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            config: config_text.to_string(),
            prior: record,
            history: history.to_vec(),
        }
    }

    pub fn prior(&self) -> Result<LatentPrior> {
        check_version(self.format_version)?;
        match &self.prior {
            PriorRecord::Categorical { probs } => {
                let total: f64 = probs.iter().sum();
                if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Checkpoint("categorical prior is not a distribution".into()));
                }
                Ok(LatentPrior::Categorical { probs: probs.clone() })
            }
            PriorRecord::Autoregressive { m, k, hidden, params } => {
                let mut ar = ArPrior::new(*m, *k, *hidden, &mut ChaCha8Rng::seed_from_u64(0));
                restore_params(&mut ar.params, params)?;
                Ok(LatentPrior::Autoregressive(ar))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        check_version(ckpt.format_version)?;
        Ok(ckpt)
    }
}
