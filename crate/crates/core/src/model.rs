//! The full model: localizer on every frame, tracker over the clip, and the training
//! objective tying them together.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::localizer::{Localizer, LocalizerOutput};
use crate::matching::{set_loss, sim_loss, total_loss, InstanceTarget, LossWeights};
use crate::params::{Binding, ParamStore};
use crate::saoc::{count_ce_loss, decode_count, decode_count_ce, ordinal_probs, ordinal_targets, saoc_loss};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use crate::tracker::{infer, InstanceTrajectory, Tracker, VideoQuerySet};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("additive fusion needs exactly one audio token per frame, got {tokens}")]
    AdditiveNeedsSingleToken { tokens: usize },
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    InputShape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("clip has no frames")]
    EmptyVideo,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{component} is not finite")]
    NonFinite { component: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum FusionKind {
    AudioCentric,
    Additive,
}

/// How the count token is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum CountLoss {
    /// Ordinal counting over `K_max` conditional exceedance probabilities.
    Saoc,
    /// Categorical cross-entropy over counts `0..=K_max`.
    #[cfg_attr(feature = "serde", serde(rename = "ce"))]
    CrossEntropy,
    /// The ordinal term is still computed and reported but carries zero weight.
    None,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub d_model: usize,
    pub frame_queries: usize,
    pub video_queries: usize,
    /// Number of real classes `K`.
    pub classes: usize,
    pub k_max: usize,
    /// Tracker window in frames.
    pub window: usize,
    pub decoder_layers: usize,
    pub acqg_layers: usize,
    pub audio_tokens: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub scales: usize,
    pub fusion: FusionKind,
    pub count_loss: CountLoss,
    /// Append the window's audio tokens to the tracker's keys.
    pub tracker_audio: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            frame_queries: 8,
            video_queries: 8,
            classes: 4,
            k_max: 2,
            window: 6,
            decoder_layers: 3,
            acqg_layers: 3,
            audio_tokens: 1,
            height: 32,
            width: 32,
            channels: 3,
            scales: 2,
            fusion: FusionKind::AudioCentric,
            count_loss: CountLoss::Saoc,
            tracker_audio: true,
        }
    }
}

impl ModelConfig {
    /// Width of the count head.
    pub fn count_outputs(&self) -> usize {
        match self.count_loss {
            CountLoss::CrossEntropy => self.k_max + 1,
            CountLoss::Saoc | CountLoss::None => self.k_max,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        for (name, v) in [
            ("d_model", self.d_model),
            ("frame_queries", self.frame_queries),
            ("video_queries", self.video_queries),
            ("classes", self.classes),
            ("window", self.window),
            ("decoder_layers", self.decoder_layers),
            ("audio_tokens", self.audio_tokens),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("scales", self.scales),
        ] {
            if v == 0 {
                return bad(alloc::format!("{name} must be positive"));
            }
        }
        if !(1..=8).contains(&self.k_max) {
            return bad(alloc::format!("k_max must be in 1..=8, got {}", self.k_max));
        }
        let div = 1usize << (self.scales - 1).min(16);
        if self.height % div != 0 || self.width % div != 0 {
            return bad(alloc::format!("{}x{} frames cannot be pooled into {} scales", self.height, self.width, self.scales));
        }
        match self.fusion {
            FusionKind::AudioCentric if self.acqg_layers == 0 => bad("acqg_layers must be positive".into()),
            FusionKind::Additive if self.audio_tokens != 1 => Err(ModelError::AdditiveNeedsSingleToken { tokens: self.audio_tokens }),
            _ => Ok(()),
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LossConfig {
    pub weights: LossWeights,
    pub sim_weight: f64,
    /// Weight of the counting term.
    pub lambda_count: f64,
    /// Drop ordinal terms `k >= 1` on frames whose previous target bit is 0.
    pub conditional_masking: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            sim_weight: 0.5,
            lambda_count: 1.0,
            conditional_masking: false,
        }
    }
}

/// Model input: `frames[t]` is `[H*W x C]`, `audio[t]` is `[M x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Tensor>,
    pub audio: Vec<Tensor>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One ground-truth track: class index in `0..K` and `T*H*W` binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTarget {
    pub class: usize,
    pub masks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipTargets {
    pub tracks: Vec<TrackTarget>,
    /// Per-frame number of sounding objects.
    pub counts: Vec<usize>,
}

impl ClipTargets {
    /// Instances visible on frame `t`.
    pub fn frame(&self, t: usize, pixels: usize) -> Vec<InstanceTarget> {
        self.tracks
            .iter()
            .filter_map(|tr| {
                let mask = &tr.masks[t * pixels..(t + 1) * pixels];
                mask.iter().any(|&v| v > 0.0).then(|| InstanceTarget {
                    class: tr.class,
                    mask: mask.to_vec(),
                })
            })
            .collect()
    }

    pub fn video(&self) -> Vec<InstanceTarget> {
        self.tracks
            .iter()
            .map(|tr| InstanceTarget {
                class: tr.class,
                mask: tr.masks.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub frames: Vec<LocalizerOutput>,
    pub video: VideoQuerySet,
}

/// Loss components as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub frame: Var,
    pub video: Var,
    pub sim: Var,
    pub count: Var,
    pub total: Var,
}

/// Loss components as numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub frame: f64,
    pub video: f64,
    pub sim: f64,
    pub count: f64,
    pub total: f64,
}

impl LossValues {
    pub fn read(tape: &Tape, t: &LossTerms) -> Self {
        let v = |x: Var| tape.value(x).data()[0];
        LossValues {
            frame: v(t.frame),
            video: v(t.video),
            sim: v(t.sim),
            count: v(t.count),
            total: v(t.total),
        }
    }

    /// First component that is not finite, by name.
    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (component, v) in [
            ("L_frame", self.frame),
            ("L_video", self.video),
            ("L_sim", self.sim),
            ("L_SAOC", self.count),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite { component });
            }
        }
        Ok(())
    }
}

/// Predictions for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub trajectories: Vec<InstanceTrajectory>,
    /// Decoded per-frame counts, absent when the count head is untrained.
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub localizer: Localizer,
    pub tracker: Tracker,
}

impl Model {
    /// Builds a freshly initialized model; parameters depend only on `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let localizer = Localizer::new(&mut params, &config, &mut rng);
        let tracker = Tracker::new(&mut params, &config, &mut rng);
        Ok(Model {
            config,
            params,
            localizer,
            tracker,
        })
    }

    fn check_clip(&self, clip: &Clip) -> Result<(), ModelError> {
        if clip.is_empty() {
            return Err(ModelError::EmptyVideo);
        }
        if clip.audio.len() != clip.frames.len() {
            return Err(ModelError::InputShape {
                what: "audio frames",
                expected: vec![clip.frames.len()],
                actual: vec![clip.audio.len()],
            });
        }
        let expected = [self.config.audio_tokens, self.config.d_model];
        for a in &clip.audio {
            if a.shape() != expected {
                return Err(ModelError::InputShape {
                    what: "audio",
                    expected: expected.to_vec(),
                    actual: a.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, clip: &Clip) -> Result<ModelOutput, ModelError> {
        self.check_clip(clip)?;
        let mut frames = Vec::with_capacity(clip.len());
        let mut audio = Vec::with_capacity(clip.len());
        for (f, a) in clip.frames.iter().zip(&clip.audio) {
            let fv = tape.constant(f.clone());
            let av = tape.constant(a.clone());
            frames.push(self.localizer.forward(tape, b, fv, av)?);
            audio.push(av);
        }
        let fq: Vec<Var> = frames.iter().map(|o| o.frame_queries).collect();
        let maps: Vec<Var> = frames.iter().map(|o| o.features.final_map).collect();
        let video = self.tracker.forward(tape, b, &fq, &audio, &maps)?;
        Ok(ModelOutput { frames, video })
    }

    /// `[T x n]` count logits stacked over frames.
    fn count_logits(tape: &mut Tape, out: &ModelOutput) -> Result<Var, TensorError> {
        let rows: Vec<Var> = out.frames.iter().map(|f| f.count_logits).collect();
        tape.concat_rows(&rows)
    }

    pub fn loss(&self, tape: &mut Tape, out: &ModelOutput, targets: &ClipTargets, cfg: &LossConfig) -> Result<LossTerms, ModelError> {
        let frames = out.frames.len();
        if targets.counts.len() != frames {
            return Err(ModelError::InputShape {
                what: "per-frame counts",
                expected: vec![frames],
                actual: vec![targets.counts.len()],
            });
        }
        let pixels = self.config.pixels();
        let expected_len = frames * pixels;
        for tr in &targets.tracks {
            if tr.masks.len() != expected_len {
                return Err(ModelError::InputShape {
                    what: "track masks",
                    expected: vec![expected_len],
                    actual: vec![tr.masks.len()],
                });
            }
        }
        let mut per_frame = Vec::with_capacity(frames);
        for (t, f) in out.frames.iter().enumerate() {
            let gt = targets.frame(t, pixels);
            per_frame.push(set_loss(tape, f.mask_logits, f.class_logits, &gt, &cfg.weights)?.value);
        }
        let mut frame = per_frame[0];
        for &l in &per_frame[1..] {
            frame = tape.add(frame, l)?;
        }
        let frame = tape.scale(frame, 1.0 / frames as f64);

        let video_gt = targets.video();
        let video = set_loss(tape, out.video.mask_logits, out.video.class_logits, &video_gt, &cfg.weights)?;
        let matched: Vec<usize> = video.assignment.pairs.iter().map(|p| p.0).collect();
        let fq: Vec<Var> = out.frames.iter().map(|o| o.frame_queries).collect();
        let fm: Vec<Var> = out.frames.iter().map(|o| o.mask_logits).collect();
        let sim = sim_loss(tape, &fq, &fm, out.video.queries, out.video.mask_logits, &matched)?;

        let logits = Self::count_logits(tape, out)?;
        let (count, lambda) = match self.config.count_loss {
            CountLoss::CrossEntropy => (count_ce_loss(tape, logits, &targets.counts)?, cfg.lambda_count),
            kind => {
                let ord: Vec<_> = targets.counts.iter().map(|&n| ordinal_targets(n, self.config.k_max)).collect();
                let l = saoc_loss(tape, logits, &ord, cfg.conditional_masking)?;
                (l, if kind == CountLoss::None { 0.0 } else { cfg.lambda_count })
            }
        };
        let total = total_loss(tape, frame, video.value, sim, count, cfg.sim_weight, lambda)?;
        Ok(LossTerms {
            frame,
            video: video.value,
            sim,
            count,
            total,
        })
    }

    /// Loss components and the gradient of the total for every parameter, in store order.
    pub fn loss_and_grads(&self, clip: &Clip, targets: &ClipTargets, cfg: &LossConfig) -> Result<(LossValues, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &b, clip)?;
        let terms = self.loss(&mut tape, &out, targets, cfg)?;
        let values = LossValues::read(&tape, &terms);
        values.check_finite()?;
        tape.backward(terms.total)?;
        Ok((values, b.grads(&tape)))
    }

    /// Loss components without gradients.
    pub fn loss_values(&self, clip: &Clip, targets: &ClipTargets, cfg: &LossConfig) -> Result<LossValues, ModelError> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &b, clip)?;
        let terms = self.loss(&mut tape, &out, targets, cfg)?;
        Ok(LossValues::read(&tape, &terms))
    }

    pub fn predict(&self, clip: &Clip, threshold: f64) -> Result<ClipPrediction, ModelError> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &b, clip)?;
        let trajectories = infer(tape.value(out.video.class_logits), tape.value(out.video.mask_logits), threshold);
        let counts = match self.config.count_loss {
            CountLoss::None => None,
            kind => Some(
                out.frames
                    .iter()
                    .map(|f| {
                        let logits = tape.value(f.count_logits).data();
                        match kind {
                            CountLoss::CrossEntropy => decode_count_ce(logits),
                            _ => decode_count(&ordinal_probs(logits)),
                        }
                    })
                    .collect(),
            ),
        };
        Ok(ClipPrediction { trajectories, counts })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::reference::rand_tensor;
    use rand::Rng;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            frame_queries: 3,
            video_queries: 3,
            classes: 2,
            k_max: 2,
            window: 2,
            decoder_layers: 2,
            acqg_layers: 1,
            height: 4,
            width: 4,
            ..ModelConfig::default()
        }
    }

    pub(crate) fn toy_clip<R: Rng>(cfg: &ModelConfig, frames: usize, rng: &mut R) -> (Clip, ClipTargets) {
        let pixels = cfg.pixels();
        let clip = Clip {
            frames: (0..frames).map(|_| rand_tensor(&[pixels, cfg.channels], rng)).collect(),
            audio: (0..frames).map(|_| rand_tensor(&[cfg.audio_tokens, cfg.d_model], rng)).collect(),
        };
        let tracks: Vec<TrackTarget> = (0..2)
            .map(|_| TrackTarget {
                class: rng.gen_range(0..cfg.classes),
                masks: (0..frames * pixels).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect(),
            })
            .collect();
        let counts = (0..frames).map(|_| rng.gen_range(0..=3)).collect();
        (clip, ClipTargets { tracks, counts })
    }

    #[test]
    fn default_config_is_valid() {
        assert!(ModelConfig::default().validate().is_ok());
        let cfg = ModelConfig {
            fusion: FusionKind::Additive,
            audio_tokens: 2,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::AdditiveNeedsSingleToken { tokens: 2 })));
        let cfg = ModelConfig { k_max: 9, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { height: 30, scales: 3, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(toy_config(), 5).unwrap();
        let b = Model::new(toy_config(), 5).unwrap();
        let c = Model::new(toy_config(), 6).unwrap();
        assert_eq!(a.params.tensors(), b.params.tensors());
        assert_ne!(a.params.tensors(), c.params.tensors());
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let cfg = toy_config();
        let model = Model::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (clip, targets) = toy_clip(&cfg, 3, &mut rng);
        let (v1, g1) = model.loss_and_grads(&clip, &targets, &LossConfig::default()).unwrap();
        let (v2, g2) = model.loss_and_grads(&clip, &targets, &LossConfig::default()).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
        let p = model.predict(&clip, 0.0).unwrap();
        assert_eq!(p.trajectories.len(), 3);
        assert_eq!(p.trajectories[0].masks.len(), 3 * 16);
        assert_eq!(p.counts.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn lambda_zero_differs_exactly_by_count_term() {
        let cfg = toy_config();
        let model = Model::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (clip, targets) = toy_clip(&cfg, 2, &mut rng);
        let on = model.loss_values(&clip, &targets, &LossConfig::default()).unwrap();
        let off = model
            .loss_values(&clip, &targets, &LossConfig { lambda_count: 0.0, ..LossConfig::default() })
            .unwrap();
        assert_eq!(on.count, off.count);
        assert_eq!(on.total.to_bits(), (off.total + on.count).to_bits());
    }

    #[test]
    fn count_loss_none_reports_but_excludes_the_term() {
        let cfg = ModelConfig { count_loss: CountLoss::None, ..toy_config() };
        let model = Model::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (clip, targets) = toy_clip(&cfg, 2, &mut rng);
        let v = model.loss_values(&clip, &targets, &LossConfig::default()).unwrap();
        assert!(v.count > 0.0);
        assert_eq!(v.total, v.frame + v.video + 0.5 * v.sim + 0.0 * v.count);
        assert!(model.predict(&clip, 0.5).unwrap().counts.is_none());
    }

    #[test]
    fn every_parameter_gets_gradient() {
        for fusion in [FusionKind::AudioCentric, FusionKind::Additive] {
            // A single audio token makes the attention weights constant.
            let audio_tokens = if fusion == FusionKind::Additive { 1 } else { 2 };
            let cfg = ModelConfig { fusion, audio_tokens, ..toy_config() };
            let model = Model::new(cfg.clone(), 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let (clip, targets) = toy_clip(&cfg, 3, &mut rng);
            let (_, grads) = model.loss_and_grads(&clip, &targets, &LossConfig::default()).unwrap();
            for (id, g) in model.params.ids().zip(&grads) {
                assert!(g.data().iter().any(|&v| v != 0.0), "{} has zero gradient", model.params.name(id));
            }
        }
    }

    /// Finite-difference check of the full objective with respect to a subset of parameters.
    pub(crate) fn check_params(model: &Model, clip: &Clip, targets: &ClipTargets, names: &[&str], tol: f64) -> crate::gradcheck::GradCheckReport {
        let ids: Vec<_> = names.iter().map(|n| model.params.find(n).expect(n)).collect();
        let inputs: Vec<Tensor> = ids.iter().map(|&id| model.params.get(id).clone()).collect();
        grad_check(
            |tape: &mut Tape, v: &[Var]| -> Result<Var, ModelError> {
                let base = model.params.bind(tape);
                let mut vars = base.vars().to_vec();
                for (&id, &var) in ids.iter().zip(v) {
                    vars[id.index()] = var;
                }
                let b = Binding::from_vars(vars);
                let out = model.forward(tape, &b, clip)?;
                Ok(model.loss(tape, &out, targets, &LossConfig::default())?.total)
            },
            &inputs,
            GradCheckOptions { eps: 1e-5, tol },
        )
        .unwrap()
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let cfg = toy_config();
        let names = [
            "localizer.queries",
            "localizer.count_token",
            "embed.proj.weight",
            "acqg.0.attn.w_q",
            "decoder.0.cross.w_v",
            "decoder.1.norm_ffn.gain",
            "localizer.mask_head.1.weight",
            "localizer.class_head.weight",
            "localizer.count_head.bias",
            "tracker.queries",
            "tracker.block.self.w_k",
            "tracker.mask_head.0.weight",
        ];
        for seed in 0..3 {
            let model = Model::new(cfg.clone(), 100 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let (clip, targets) = toy_clip(&cfg, 3, &mut rng);
            let report = check_params(&model, &clip, &targets, &names, 1e-3);
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}
