//! Registered finite-difference checks for the model's building blocks and objective.

use acvis_core::fusion::CrossAttentionLayer;
use acvis_core::gradcheck::{grad_check, GradCheckOptions};
use acvis_core::localizer::{DecoderLayer, MaskHead};
use acvis_core::matching::{set_loss, InstanceTarget, LossWeights};
use acvis_core::model::{Clip, ClipTargets, CountLoss, FusionKind, LossConfig, TrackTarget};
use acvis_core::saoc::{ordinal_targets, saoc_loss};
use acvis_core::{Binding, Model, ModelConfig, ModelError, ParamStore, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tolerance for single components.
pub const COMPONENT_TOL: f64 = 1e-4;
/// Tolerance for the full objective through the whole model.
pub const END_TO_END_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub seeds: u64,
    pub tolerance: f64,
    /// Largest relative error over all seeds and coordinates.
    pub max_rel_error: f64,
    /// First seed that exceeded the tolerance.
    pub first_failure: Option<u64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

type CheckFn = fn(u64) -> Result<f64, ModelError>;

pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    /// Worst relative error for one seed.
    pub run: CheckFn,
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized from shape")
}

fn opts(tol: f64) -> GradCheckOptions {
    GradCheckOptions { eps: 1e-5, tol }
}

/// `sum(x * r)` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &mut Tape, x: Var, rng: &mut ChaCha8Rng) -> Result<Var, TensorError> {
    let r = tape.constant(rand_tensor(tape.shape(x), rng));
    let y = tape.mul(x, r)?;
    Ok(tape.sum(y))
}

/// Checks a parameterized block: the inputs are its parameters followed by `extra`.
fn check_block<F>(store: &ParamStore, extra: Vec<Tensor>, seed: u64, tol: f64, f: F) -> Result<f64, ModelError>
where
    F: Fn(&mut Tape, &Binding, &[Var]) -> Result<Var, TensorError>,
{
    let n = store.len();
    let mut inputs = store.tensors().to_vec();
    inputs.extend(extra);
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| -> Result<Var, ModelError> {
            let b = Binding::from_vars(v[..n].to_vec());
            let out = f(tape, &b, &v[n..])?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
            Ok(project(tape, out, &mut rng)?)
        },
        &inputs,
        opts(tol),
    )?;
    Ok(report.worst)
}

fn saoc(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, k_max) = (4, 1 + (seed as usize % 3));
    let logits = rand_tensor(&[frames, k_max], &mut rng).map(|x| 3.0 * x);
    let targets: Vec<_> = (0..frames).map(|_| ordinal_targets(rng.gen_range(0..=k_max + 1), k_max)).collect();
    let masking = seed % 2 == 1;
    let r = grad_check(|tape: &mut Tape, v: &[Var]| saoc_loss(tape, v[0], &targets, masking), &[logits], opts(COMPONENT_TOL))?;
    Ok(r.worst)
}

fn cross_attention(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = CrossAttentionLayer::new(&mut store, "acqg", 4, &mut rng);
    let q = rand_tensor(&[3, 4], &mut rng);
    let kv = rand_tensor(&[2, 4], &mut rng);
    check_block(&store, vec![q, kv], seed, COMPONENT_TOL, |tape, b, v| Ok(layer.forward(tape, b, v[0], v[1])?.out))
}

fn decode(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = DecoderLayer::new(&mut store, "decoder", 4, &mut rng);
    let x = rand_tensor(&[3, 4], &mut rng);
    let kv = rand_tensor(&[5, 4], &mut rng);
    check_block(&store, vec![x, kv], seed, COMPONENT_TOL, |tape, b, v| layer.forward(tape, b, v[0], v[1]))
}

fn mask_head(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let head = MaskHead::new(&mut store, "mask_head", 4, &mut rng);
    let q = rand_tensor(&[3, 4], &mut rng);
    let pixels = rand_tensor(&[6, 4], &mut rng);
    check_block(&store, vec![q, pixels], seed, COMPONENT_TOL, |tape, b, v| head.forward(tape, b, v[0], v[1]))
}

fn frame_loss(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (queries, classes, pixels) = (4, 3, 9);
    let masks = rand_tensor(&[queries, pixels], &mut rng).map(|x| 2.0 * x);
    let logits = rand_tensor(&[queries, classes + 1], &mut rng);
    let targets: Vec<InstanceTarget> = (0..rng.gen_range(0..=3))
        .map(|_| InstanceTarget {
            class: rng.gen_range(0..classes),
            mask: (0..pixels).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect(),
        })
        .collect();
    let w = LossWeights::default();
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| Ok::<_, ModelError>(set_loss(tape, v[0], v[1], &targets, &w)?.value),
        &[masks, logits],
        opts(COMPONENT_TOL),
    )?;
    Ok(r.worst)
}

/// Small model used by the end-to-end check. Even seeds use audio-centric fusion with two
/// audio tokens, odd seeds the additive baseline; the count loss cycles through all kinds.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    let additive = seed % 2 == 1;
    ModelConfig {
        d_model: 4,
        frame_queries: 3,
        video_queries: 3,
        classes: 2,
        k_max: 2,
        window: 2,
        decoder_layers: 2,
        acqg_layers: 1,
        audio_tokens: if additive { 1 } else { 2 },
        height: 4,
        width: 4,
        channels: 3,
        scales: 2,
        fusion: if additive { FusionKind::Additive } else { FusionKind::AudioCentric },
        count_loss: [CountLoss::Saoc, CountLoss::CrossEntropy, CountLoss::None][(seed / 2 % 3) as usize],
        tracker_audio: true,
    }
}

pub fn toy_clip(cfg: &ModelConfig, frames: usize, rng: &mut ChaCha8Rng) -> (Clip, ClipTargets) {
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

fn total_loss(seed: u64) -> Result<f64, ModelError> {
    let cfg = toy_model_config(seed);
    let model = Model::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7070);
    let (clip, targets) = toy_clip(&cfg, 3, &mut rng);
    let loss_cfg = LossConfig {
        conditional_masking: seed % 4 == 3,
        ..LossConfig::default()
    };
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| -> Result<Var, ModelError> {
            let b = Binding::from_vars(v.to_vec());
            let out = model.forward(tape, &b, &clip)?;
            Ok(model.loss(tape, &out, &targets, &loss_cfg)?.total)
        },
        model.params.tensors(),
        opts(END_TO_END_TOL),
    )?;
    Ok(r.worst)
}

/// A squaring op whose second factor is detached from the tape, so its gradient is half
/// the true one. Used to show the checker catches broken backward rules.
fn detached_square(seed: u64) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[2, 3], &mut rng);
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| -> Result<Var, ModelError> {
            let copy = tape.constant(tape.value(v[0]).clone());
            let sq = tape.mul(v[0], copy)?;
            Ok(tape.sum(sq))
        },
        &[x],
        opts(COMPONENT_TOL),
    )?;
    Ok(r.worst)
}

pub fn suite() -> Vec<Check> {
    vec![
        Check { name: "saoc_loss", tolerance: COMPONENT_TOL, run: saoc },
        Check { name: "cross_attention", tolerance: COMPONENT_TOL, run: cross_attention },
        Check { name: "decode", tolerance: COMPONENT_TOL, run: decode },
        Check { name: "mask_head", tolerance: COMPONENT_TOL, run: mask_head },
        Check { name: "frame_loss", tolerance: COMPONENT_TOL, run: frame_loss },
        Check { name: "total_loss", tolerance: END_TO_END_TOL, run: total_loss },
    ]
}

pub fn negative_control() -> Check {
    Check {
        name: "detached_square",
        tolerance: COMPONENT_TOL,
        run: detached_square,
    }
}

/// Runs `check` for seeds `first..first + seeds`.
pub fn run_check(check: &Check, first: u64, seeds: u64) -> Result<CheckResult, ModelError> {
    let mut worst: f64 = 0.0;
    let mut first_failure = None;
    for seed in first..first + seeds {
        let e = (check.run)(seed)?;
        if !(e <= check.tolerance) && first_failure.is_none() {
            first_failure = Some(seed);
        }
        worst = if e.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(e) };
    }
    Ok(CheckResult {
        name: check.name.to_string(),
        seeds,
        tolerance: check.tolerance,
        max_rel_error: worst,
        first_failure,
        passed: first_failure.is_none(),
    })
}

pub fn run_suite(checks: &[Check], first: u64, seeds: u64) -> Result<SuiteReport, ModelError> {
    let checks = checks.iter().map(|c| run_check(c, first, seeds)).collect::<Result<Vec<_>, _>>()?;
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { checks, passed })
}
