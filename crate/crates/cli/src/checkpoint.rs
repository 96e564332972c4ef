//! Checkpoints: every parameter by name, the run config, step counter, optimizer moments
//! and the batch sampler's RNG position. Stored as JSON with shortest round-trip floats,
//! so a reload reproduces every value bit for bit.

use std::path::Path;

use acvis_core::optim::Adam;
use acvis_core::{Model, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{read, write, CliError, Result};

const CHECKPOINT_TAG: &str = "acvis-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
/// ChaCha stream used by the batch sampler, distinct from the initializer's.
const SAMPLER_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Position of the sampler RNG: seed plus words consumed (a `u128` written in decimal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        let pos: u128 = self.word_pos.parse().ok()?;
        let mut rng = sampler_rng(self.seed);
        rng.set_word_pos(pos);
        Some(rng)
    }
}

pub fn sampler_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLER_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub config: RunConfig,
    pub rng: RngState,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn capture(model: &Model, config: &RunConfig, step: u64, rng: RngState, optimizer: Option<&Adam>) -> Self {
        Checkpoint {
            format: CHECKPOINT_TAG.into(),
            version: CHECKPOINT_VERSION,
            step,
            config: config.clone(),
            rng,
            params: model
                .params
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds the model: the architecture comes from the stored config and every
    /// parameter must be present with its expected shape.
    pub fn model(&self, path: &Path) -> Result<Model> {
        let bad = |d: String| CliError::checkpoint(path, d);
        let mut model = Model::new(self.config.model.clone(), self.config.train.seed).map_err(|e| bad(e.to_string()))?;
        if self.params.len() != model.params.len() {
            return Err(bad(format!("{} parameters stored, model has {}", self.params.len(), model.params.len())));
        }
        for rec in &self.params {
            let id = model.params.find(&rec.name).ok_or_else(|| bad(format!("unknown parameter {:?}", rec.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != rec.shape.as_slice() {
                return Err(bad(format!("parameter {:?}: shape {:?}, expected {:?}", rec.name, rec.shape, slot.shape())));
            }
            *slot = Tensor::new(rec.shape.clone(), rec.data.clone()).map_err(|e| bad(format!("parameter {:?}: {e}", rec.name)))?;
        }
        if let Some(opt) = &self.optimizer {
            let sizes: Vec<usize> = model.params.tensors().iter().map(Tensor::len).collect();
            let fits = |b: &[Vec<f64>]| b.len() == sizes.len() && b.iter().zip(&sizes).all(|(x, &n)| x.len() == n);
            if !fits(&opt.m) || !fits(&opt.v) {
                return Err(bad("optimizer moments do not match the parameters".into()));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::checkpoint(path, e.to_string()))?;
        write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path).map_err(|e| match e {
            CliError::Io { source, .. } => CliError::checkpoint(path, source.to_string()),
            other => other,
        })?;
        let c: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| CliError::checkpoint(path, e.to_string()))?;
        if c.format != CHECKPOINT_TAG || c.version != CHECKPOINT_VERSION {
            return Err(CliError::checkpoint(path, format!("unsupported format {} v{}", c.format, c.version)));
        }
        c.rng.restore().ok_or_else(|| CliError::checkpoint(path, "rng.word_pos is not an integer"))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_position_round_trips() {
        let mut rng = sampler_rng(4);
        for _ in 0..37 {
            rng.next_u32();
        }
        let state = RngState::capture(4, &rng);
        let mut back = state.restore().unwrap();
        assert_eq!(back.next_u64(), rng.next_u64());
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let cfg = RunConfig {
            model: acvis_core::ModelConfig {
                d_model: 4,
                frame_queries: 2,
                video_queries: 2,
                height: 4,
                width: 4,
                ..Default::default()
            },
            ..RunConfig::default()
        };
        let mut model = Model::new(cfg.model.clone(), 3).unwrap();
        // Values whose shortest decimal form is long.
        model.params.tensors_mut()[0].data_mut()[0] = 0.1 + 0.2;
        model.params.tensors_mut()[0].data_mut()[1] = f64::MIN_POSITIVE;
        let ck = Checkpoint::capture(&model, &cfg, 5, RngState::capture(3, &sampler_rng(3)), None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let m2 = back.model(&p).unwrap();
        for (a, b) in model.params.tensors().iter().zip(m2.params.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn shape_mismatch_is_a_checkpoint_error() {
        let cfg = RunConfig::default();
        let model = Model::new(cfg.model.clone(), 0).unwrap();
        let mut ck = Checkpoint::capture(&model, &cfg, 0, RngState::capture(0, &sampler_rng(0)), None);
        ck.params[0].shape = vec![1];
        ck.params[0].data = vec![0.0];
        assert!(matches!(ck.model(Path::new("x")), Err(CliError::Checkpoint { .. })));
    }
}
