//! Sound-aware ordinal counting.
//!
//! The counting head emits `K_max` logits per frame. After a sigmoid, `p_0` is the
//! marginal probability that at least one sounding object is present and `p_k` (k >= 1)
//! is the conditional probability of more than `k` objects given more than `k - 1`.
//! Products of the chain are therefore non-increasing exceedance probabilities, which is
//! what makes the decoded count rank-consistent.
//!
//! A plain categorical cross-entropy over counts `0..=K_max` is provided as the
//! comparison baseline.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Sigmoid probabilities `{p_k}` for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalCountPrediction {
    probs: Vec<f64>,
}

impl OrdinalCountPrediction {
    /// Wraps probabilities directly. Values are clamped into `(0, 1)` the same way the
    /// logistic function clamps its input.
    pub fn from_probs(probs: &[f64]) -> Self {
        let lo = math::sigmoid(-math::SIGMOID_CLAMP);
        let hi = math::sigmoid(math::SIGMOID_CLAMP);
        OrdinalCountPrediction {
            probs: probs.iter().map(|p| p.clamp(lo, hi)).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k_max(&self) -> usize {
        self.probs.len()
    }

    /// Unconditional exceedance chain `P(N > k) = prod_{j <= k} p_j`.
    pub fn exceedance(&self) -> Vec<f64> {
        let mut acc = 1.0;
        self.probs
            .iter()
            .map(|p| {
                acc *= p;
                acc
            })
            .collect()
    }

    /// Number of exceedance probabilities strictly above one half.
    pub fn decode(&self) -> usize {
        decode_count(self)
    }
}

/// Applies the (clamped) logistic function to each counting logit.
pub fn ordinal_probs(logits: &[f64]) -> OrdinalCountPrediction {
    OrdinalCountPrediction {
        probs: logits.iter().map(|&x| math::sigmoid(x)).collect(),
    }
}

/// Binary ordinal encoding `t_k = 1[n_obj > k]` for `k = 0..K_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdinalTarget {
    bits: Vec<bool>,
}

impl OrdinalTarget {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Counts at or above `k_max` saturate to all ones.
pub fn ordinal_targets(n_obj: usize, k_max: usize) -> OrdinalTarget {
    OrdinalTarget {
        bits: (0..k_max).map(|k| n_obj > k).collect(),
    }
}

/// `N = |{k : prod_{j <= k} p_j > 0.5}|`. Ties at exactly 0.5 count as "not exceeded".
pub fn decode_count(pred: &OrdinalCountPrediction) -> usize {
    pred.exceedance().iter().take_while(|&&e| e > 0.5).count()
}

/// Per-term weights. With conditional masking the term for `k >= 1` is dropped on frames
/// where `t_{k-1} = 0`, i.e. where the conditioning event did not occur.
fn term_weights(target: &OrdinalTarget, conditional_masking: bool) -> Vec<f64> {
    let bits = target.bits();
    (0..bits.len())
        .map(|k| {
            if !conditional_masking || k == 0 || bits[k - 1] {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Ordinal counting loss on the tape.
///
/// `logits` is `[T x K_max]`, one row per frame. The loss is
/// `-(1/T) sum_t sum_k [t_k ln p_k + (1 - t_k) ln(1 - p_k)]`.
pub fn saoc_loss(tape: &mut Tape, logits: Var, targets: &[OrdinalTarget], conditional_masking: bool) -> Result<Var, TensorError> {
    let (frames, k_max) = (tape.value(logits).rows(), tape.value(logits).cols());
    if targets.len() != frames || targets.iter().any(|t| t.bits().len() != k_max) || frames == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "saoc_loss",
            left: tape.shape(logits).to_vec(),
            right: vec![targets.len(), targets.first().map_or(0, |t| t.bits().len())],
        });
    }
    let mut pos = Vec::with_capacity(frames * k_max);
    let mut neg = Vec::with_capacity(frames * k_max);
    for t in targets {
        let w = term_weights(t, conditional_masking);
        for (k, &bit) in t.bits().iter().enumerate() {
            let y = if bit { 1.0 } else { 0.0 };
            pos.push(w[k] * y);
            neg.push(w[k] * (1.0 - y));
        }
    }
    let shape = [frames, k_max];
    let pos = tape.constant(Tensor::new(shape, pos)?);
    let neg = tape.constant(Tensor::new(shape, neg)?);
    let p = tape.sigmoid(logits);
    let log_p = tape.ln(p);
    let q = tape.scale(p, -1.0);
    let q = tape.shift(q, 1.0);
    let log_q = tape.ln(q);
    let a = tape.mul(pos, log_p)?;
    let b = tape.mul(neg, log_q)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s);
    Ok(tape.scale(s, -1.0 / frames as f64))
}

/// Plain evaluation of the same loss, used for reporting and as a test oracle.
pub fn saoc_loss_value(preds: &[OrdinalCountPrediction], targets: &[OrdinalTarget], conditional_masking: bool) -> f64 {
    let mut total = 0.0;
    for (pred, target) in preds.iter().zip(targets) {
        let w = term_weights(target, conditional_masking);
        for (k, (&p, &bit)) in pred.probs().iter().zip(target.bits()).enumerate() {
            let term = if bit { math::ln(p) } else { math::ln(1.0 - p) };
            total += w[k] * term;
        }
    }
    -total / preds.len() as f64
}

/// Categorical cross-entropy over counts `0..=K_max` (`logits` is `[T x (K_max + 1)]`).
/// Counts above `K_max` are clipped to `K_max`.
pub fn count_ce_loss(tape: &mut Tape, logits: Var, counts: &[usize]) -> Result<Var, TensorError> {
    let (frames, classes) = (tape.value(logits).rows(), tape.value(logits).cols());
    if counts.len() != frames || frames == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "count_ce_loss",
            left: tape.shape(logits).to_vec(),
            right: vec![counts.len()],
        });
    }
    let mut onehot = vec![0.0; frames * classes];
    for (t, &n) in counts.iter().enumerate() {
        onehot[t * classes + n.min(classes - 1)] = 1.0;
    }
    let onehot = tape.constant(Tensor::new([frames, classes], onehot)?);
    let ls = tape.log_softmax(logits);
    let picked = tape.mul(ls, onehot)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / frames as f64))
}

/// Argmax decoding for the categorical baseline (lowest count wins ties).
pub fn decode_count_ce(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = k;
        }
    }
    best
}
