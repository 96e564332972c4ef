//! Run configuration: JSON file, defaults for every key, command-line overrides.
//!
//! ```json
//! {
//!   "model":  { "d_model": 32, "k_max": 2, "fusion": "audio_centric", "count_loss": "saoc", ... },
//!   "loss":   { "lambda_count": 1.0, "sim_weight": 0.5, "weights": { "class": 2.0, ... } },
//!   "optim":  { "lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8 },
//!   "train":  { "steps": 200, "batch_size": 2, "seed": 0, "checkpoint_every": 0 },
//!   "corpus": { "train_videos": 64, "val_videos": 16, ... },
//!   "threshold": 0.5,
//!   "data_dir": "data",
//!   "out_dir": "run"
//! }
//! ```
//!
//! Missing keys take their defaults; unknown top-level keys are rejected.

use std::path::{Path, PathBuf};

use acvis_core::model::{CountLoss, FusionKind, LossConfig};
use acvis_core::optim::AdamConfig;
use acvis_core::synth::CorpusConfig;
use acvis_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read_string, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Videos per step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 2,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    /// Confidence threshold for inference.
    pub threshold: f64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
            train: TrainConfig::default(),
            corpus: CorpusConfig::default(),
            threshold: 0.5,
            data_dir: None,
            out_dir: None,
        }
    }
}

/// Values given on the command line; each one replaces the matching config key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub lambda_count: Option<f64>,
    pub additive_fusion: bool,
    pub count_loss: Option<CountLoss>,
    pub k_max: Option<usize>,
    pub steps: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Default config when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        if let Some(l) = o.lambda_count {
            self.loss.lambda_count = l;
        }
        if o.additive_fusion {
            self.model.fusion = FusionKind::Additive;
        }
        if let Some(c) = o.count_loss {
            self.model.count_loss = c;
        }
        if let Some(k) = o.k_max {
            self.model.k_max = k;
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        if o.data_dir.is_some() {
            self.data_dir = o.data_dir.clone();
        }
        if o.out_dir.is_some() {
            self.out_dir = o.out_dir.clone();
        }
    }

    /// Checks the model against the corpus it will read and the optimizer settings.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.validate_corpus_fit(&self.corpus)?;
        if self.train.batch_size == 0 {
            return Err(CliError::Config("train.batch_size must be positive".into()));
        }
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(CliError::Config(format!("invalid optimizer settings {o:?}")));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Config(format!("threshold {} is outside [0, 1]", self.threshold)));
        }
        let l = &self.loss;
        for (name, v) in [
            ("loss.lambda_count", l.lambda_count),
            ("loss.sim_weight", l.sim_weight),
            ("loss.weights.class", l.weights.class),
            ("loss.weights.bce", l.weights.bce),
            ("loss.weights.dice", l.weights.dice),
            ("loss.weights.no_object", l.weights.no_object),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// The model must see frames and audio tokens of the corpus' shape.
    pub fn validate_corpus_fit(&self, c: &CorpusConfig) -> Result<()> {
        let m = &self.model;
        for (what, model, corpus) in [
            ("height", m.height, c.height),
            ("width", m.width, c.width),
            ("channels", m.channels, c.channels),
            ("classes", m.classes, c.classes),
            ("audio tokens", m.audio_tokens, c.audio_tokens),
            ("audio width (d_model vs audio_dim)", m.d_model, c.audio_dim),
        ] {
            if model != corpus {
                return Err(CliError::Config(format!("model {what} {model} does not match corpus {what} {corpus}")));
            }
        }
        Ok(())
    }
}

pub fn parse_count_loss(s: &str) -> std::result::Result<CountLoss, String> {
    match s {
        "saoc" => Ok(CountLoss::Saoc),
        "ce" => Ok(CountLoss::CrossEntropy),
        "none" => Ok(CountLoss::None),
        other => Err(format!("unknown count loss {other:?}, expected saoc, ce or none")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.loss.lambda_count, 1.0);
        assert_eq!(c.loss.sim_weight, 0.5);
        assert_eq!(c.model.k_max, 2);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"model": {"k_max": 3}, "train": {"steps": 7}}"#).unwrap();
        assert_eq!(c.model.k_max, 3);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.batch_size, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
    }

    #[test]
    fn overrides_replace_keys() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(9),
            lambda_count: Some(0.0),
            additive_fusion: true,
            count_loss: Some(CountLoss::CrossEntropy),
            k_max: Some(3),
            ..Overrides::default()
        });
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.loss.lambda_count, 0.0);
        assert_eq!(c.model.fusion, FusionKind::Additive);
        assert_eq!(c.model.count_loss, CountLoss::CrossEntropy);
        assert_eq!(c.model.k_max, 3);
    }

    #[test]
    fn mismatched_corpus_is_a_config_error() {
        let mut c = RunConfig::default();
        c.corpus.audio_dim = 16;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
