//! Video-level tracker and confidence-threshold inference.
//!
//! `N_v` learnable video queries walk over the clip in windows of `W` frames. In each
//! window they attend to the window's frame queries (and optionally its audio tokens),
//! then to each other, then pass an FFN; the updated state seeds the next window. The
//! identity of a predicted instance is the index of its video query.

use alloc::vec::Vec;

use rand::Rng;

use crate::localizer::{DecoderLayer, MaskHead};
use crate::math;
use crate::model::{ModelConfig, ModelError};
use crate::nn::{init_bound, Linear};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tape::{softmax_in_place, Tape, Var};
use crate::tensor::Tensor;

/// Tracker outputs for one clip.
#[derive(Debug, Clone, Copy)]
pub struct VideoQuerySet {
    /// `[N_v x D]`
    pub queries: Var,
    /// `[N_v x (K + 1)]`
    pub class_logits: Var,
    /// `[N_v x T*H*W]`, frame-major.
    pub mask_logits: Var,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pub queries: ParamId,
    pub block: DecoderLayer,
    pub class_head: Linear,
    pub mask_head: MaskHead,
    pub window: usize,
    pub use_audio: bool,
}

impl Tracker {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        Tracker {
            queries: store.uniform("tracker.queries", &[cfg.video_queries, d], init_bound(d), rng),
            block: DecoderLayer::new(store, "tracker.block", d, rng),
            class_head: Linear::new(store, "tracker.class_head", d, cfg.classes + 1, true, rng),
            mask_head: MaskHead::new(store, "tracker.mask_head", d, rng),
            window: cfg.window.max(1),
            use_audio: cfg.tracker_audio,
        }
    }

    /// `frame_queries[t]` is `[N_f x D]`, `audio[t]` is `[M x D]`, `final_maps[t]` is `[H*W x D]`.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, frame_queries: &[Var], audio: &[Var], final_maps: &[Var]) -> Result<VideoQuerySet, ModelError> {
        let frames = frame_queries.len();
        if frames == 0 {
            return Err(ModelError::EmptyVideo);
        }
        if audio.len() != frames || final_maps.len() != frames {
            return Err(ModelError::InputShape {
                what: "tracker inputs",
                expected: alloc::vec![frames, frames, frames],
                actual: alloc::vec![frame_queries.len(), audio.len(), final_maps.len()],
            });
        }
        let mut state = b[self.queries];
        let mut start = 0;
        while start < frames {
            let end = (start + self.window).min(frames);
            let mut keys: Vec<Var> = frame_queries[start..end].to_vec();
            if self.use_audio {
                keys.extend_from_slice(&audio[start..end]);
            }
            let kv = tape.concat_rows(&keys)?;
            state = self.block.forward(tape, b, state, kv)?;
            start = end;
        }
        let class_logits = self.class_head.forward(tape, b, state)?;
        let maps = tape.concat_rows(final_maps)?;
        let mask_logits = self.mask_head.forward(tape, b, state, maps)?;
        Ok(VideoQuerySet {
            queries: state,
            class_logits,
            mask_logits,
        })
    }
}

/// One predicted instance over the whole clip.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTrajectory {
    /// Unique per clip, starting at 1 for the most confident instance.
    pub id: u32,
    /// Index of the video query that produced it.
    pub query: usize,
    /// Class label in `1..=K`.
    pub label: usize,
    pub confidence: f64,
    pub class_logits: Vec<f64>,
    /// `T*H*W` probabilities.
    pub masks: Vec<f64>,
}

/// Max softmax probability over real classes and its class index (lowest index on ties).
pub fn confidence(class_logits: &[f64]) -> (f64, usize) {
    let mut p = class_logits.to_vec();
    softmax_in_place(&mut p);
    let real = &p[..p.len() - 1];
    let mut best = 0;
    for (k, &v) in real.iter().enumerate() {
        if v > real[best] {
            best = k;
        }
    }
    (real[best], best)
}

/// Keeps the queries whose confidence is strictly above `threshold`.
///
/// `class_logits` is `[N_v x (K + 1)]` and `mask_logits` is `[N_v x T*H*W]`. Ids follow
/// descending confidence, ties broken by query index.
pub fn infer(class_logits: &Tensor, mask_logits: &Tensor, threshold: f64) -> Vec<InstanceTrajectory> {
    let mut kept: Vec<(usize, f64, usize)> = (0..class_logits.rows())
        .filter_map(|q| {
            let (conf, class) = confidence(class_logits.row(q));
            (conf > threshold).then_some((q, conf, class))
        })
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    kept.into_iter()
        .enumerate()
        .map(|(rank, (q, conf, class))| InstanceTrajectory {
            id: rank as u32 + 1,
            query: q,
            label: class + 1,
            confidence: conf,
            class_logits: class_logits.row(q).to_vec(),
            masks: mask_logits.row(q).iter().map(|&x| math::sigmoid(x)).collect(),
        })
        .collect()
}
