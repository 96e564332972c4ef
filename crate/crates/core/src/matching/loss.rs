use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

use super::hungarian::{hungarian, Assignment, CostMatrix};

/// One ground-truth instance: class index in `0..K` and a binary mask (0.0 or 1.0 per pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTarget {
    pub class: usize,
    pub mask: Vec<f64>,
}

/// Weights shared by the matching cost and the matched losses.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub class: f64,
    pub bce: f64,
    pub dice: f64,
    /// Relative weight of the "no object" class in the classification loss.
    pub no_object: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            class: 2.0,
            bce: 5.0,
            dice: 5.0,
            no_object: 0.1,
        }
    }
}

/// `1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)`.
pub fn soft_dice(p: &[f64], t: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for (&a, &b) in p.iter().zip(t) {
        inter += a * b;
        sp += a;
        st += b;
    }
    1.0 - (2.0 * inter + 1.0) / (sp + st + 1.0)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + math::ln(1.0 + math::exp(-x.abs()))
}

fn check_targets(op: &'static str, mask_logits: &Tensor, class_logits: &Tensor, targets: &[InstanceTarget]) -> Result<(), TensorError> {
    if mask_logits.rank() != 2 || class_logits.rank() != 2 || mask_logits.rows() != class_logits.rows() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: mask_logits.shape().to_vec(),
            right: class_logits.shape().to_vec(),
        });
    }
    let pixels = mask_logits.cols();
    let real_classes = class_logits.cols() - 1;
    for t in targets {
        if t.mask.len() != pixels {
            return Err(TensorError::ShapeMismatch {
                op,
                left: mask_logits.shape().to_vec(),
                right: vec![t.mask.len()],
            });
        }
        if t.class >= real_classes {
            return Err(TensorError::Index {
                op,
                index: t.class,
                extent: real_classes,
            });
        }
    }
    Ok(())
}

/// Matching cost between `N` predictions and the targets.
///
/// `mask_logits` is `[N x P]`, `class_logits` is `[N x (K + 1)]`. Entry `(i, j)` is
/// `w_cls * (-p_i(c_j)) + w_bce * mean BCE + w_dice * dice` with masks as probabilities.
pub fn match_cost(mask_logits: &Tensor, class_logits: &Tensor, targets: &[InstanceTarget], w: &LossWeights) -> Result<CostMatrix, TensorError> {
    check_targets("match_cost", mask_logits, class_logits, targets)?;
    let (n, pixels) = (mask_logits.rows(), mask_logits.cols());
    let mut probs = Vec::with_capacity(n);
    let mut softplus_sum = Vec::with_capacity(n);
    let mut class_probs = Vec::with_capacity(n);
    for i in 0..n {
        let row = mask_logits.row(i);
        probs.push(row.iter().map(|&x| math::sigmoid(x)).collect::<Vec<_>>());
        softplus_sum.push(row.iter().map(|&x| softplus(x)).sum::<f64>());
        let mut c = class_logits.row(i).to_vec();
        crate::tape::softmax_in_place(&mut c);
        class_probs.push(c);
    }
    let denom = pixels.max(1) as f64;
    CostMatrix::from_fn(n, targets.len(), |i, j| {
        let t = &targets[j];
        let xt: f64 = mask_logits.row(i).iter().zip(&t.mask).map(|(x, y)| x * y).sum();
        let bce = (softplus_sum[i] - xt) / denom;
        w.class * -class_probs[i][t.class] + w.bce * bce + w.dice * soft_dice(&probs[i], &t.mask)
    })
}

/// A matched set-prediction loss and the assignment that produced it.
#[derive(Debug, Clone)]
pub struct SetLoss {
    pub value: Var,
    pub assignment: Assignment,
}

/// Set-prediction loss for one frame (or one video with masks flattened over time).
///
/// Matched predictions are trained towards their target class and mask (mean BCE plus
/// dice); the rest are trained towards the "no object" class, the last logit column.
/// The class term is a weighted cross-entropy normalized by the total weight; the mask
/// terms are summed over matches and divided by `max(1, targets)`.
pub fn set_loss(
    tape: &mut Tape,
    mask_logits: Var,
    class_logits: Var,
    targets: &[InstanceTarget],
    w: &LossWeights,
) -> Result<SetLoss, TensorError> {
    let cost = match_cost(tape.value(mask_logits), tape.value(class_logits), targets, w)?;
    let assignment = hungarian(&cost);
    let (n, classes) = (tape.value(class_logits).rows(), tape.value(class_logits).cols());
    let pixels = tape.value(mask_logits).cols();

    let mut weights = vec![0.0; n * classes];
    let mut total_weight = 0.0;
    for i in 0..n {
        let (class, weight) = match assignment.col_of(i) {
            Some(j) => (targets[j].class, 1.0),
            None => (classes - 1, w.no_object),
        };
        weights[i * classes + class] = weight;
        total_weight += weight;
    }
    let weights = tape.constant(Tensor::new([n, classes], weights)?);
    let log_probs = tape.log_softmax(class_logits);
    let picked = tape.mul(log_probs, weights)?;
    let ce = tape.sum(picked);
    let class_loss = tape.scale(ce, -w.class / total_weight);

    if assignment.is_empty() {
        return Ok(SetLoss {
            value: class_loss,
            assignment,
        });
    }
    let rows: Vec<usize> = assignment.pairs.iter().map(|p| p.0).collect();
    let m = rows.len();
    let mut target_data = Vec::with_capacity(m * pixels);
    let mut target_sums = Vec::with_capacity(m);
    for &(_, j) in &assignment.pairs {
        target_data.extend_from_slice(&targets[j].mask);
        target_sums.push(targets[j].mask.iter().sum::<f64>() + 1.0);
    }
    let logits = tape.gather_rows(mask_logits, &rows)?;
    let bce = tape.bce_with_logits(logits, &target_data)?;
    let bce = tape.sum(bce);
    let bce = tape.scale(bce, 1.0 / pixels as f64);

    let target = tape.constant(Tensor::new([m, pixels], target_data)?);
    let ones = tape.constant(crate::nn::ones_col(pixels));
    let probs = tape.sigmoid(logits);
    let inter = tape.mul(probs, target)?;
    let inter = tape.matmul(inter, ones)?;
    let num = tape.scale(inter, 2.0);
    let num = tape.shift(num, 1.0);
    let psum = tape.matmul(probs, ones)?;
    let tsum = tape.constant(Tensor::new([m, 1], target_sums)?);
    let den = tape.add(psum, tsum)?;
    let ratio = tape.div(num, den)?;
    let ratio = tape.sum(ratio);
    let dice = tape.scale(ratio, -1.0);
    let dice = tape.shift(dice, m as f64);

    let norm = 1.0 / (targets.len().max(1) as f64);
    let bce = tape.scale(bce, w.bce * norm);
    let dice = tape.scale(dice, w.dice * norm);
    let mask_loss = tape.add(bce, dice)?;
    let value = tape.add(class_loss, mask_loss)?;
    Ok(SetLoss { value, assignment })
}

const COSINE_EPS: f64 = 1e-12;

/// Embedding alignment between frame queries and the matched video queries.
///
/// * `frame_queries[t]` is `[N_f x D]`, `frame_masks[t]` its `[N_f x P]` mask logits.
/// * `video_queries` is `[N_v x D]` and `video_masks` is `[N_v x T*P]`.
/// * `video_rows` are the video queries that were matched to ground truth.
///
/// On every frame the frame queries are matched to those video queries by Hungarian on
/// `1 - soft dice` of the mask probabilities, and each matched pair contributes
/// `1 - cos(frame, video)`. The result is the mean over all pairs, or zero without pairs.
pub fn sim_loss(
    tape: &mut Tape,
    frame_queries: &[Var],
    frame_masks: &[Var],
    video_queries: Var,
    video_masks: Var,
    video_rows: &[usize],
) -> Result<Var, TensorError> {
    let frames = frame_queries.len();
    if frames == 0 || video_rows.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n_f = tape.value(frame_queries[0]).rows();
    let pixels = tape.value(frame_masks[0]).cols();
    let video_probs = tape.value(video_masks).map(math::sigmoid);
    let mut frame_idx = Vec::new();
    let mut video_idx = Vec::new();
    for t in 0..frames {
        let fp = tape.value(frame_masks[t]).map(math::sigmoid);
        let cost = CostMatrix::from_fn(n_f, video_rows.len(), |i, j| {
            let v = &video_probs.row(video_rows[j])[t * pixels..(t + 1) * pixels];
            soft_dice(fp.row(i), v)
        })?;
        for (i, j) in hungarian(&cost).pairs {
            frame_idx.push(t * n_f + i);
            video_idx.push(video_rows[j]);
        }
    }
    let pairs = frame_idx.len();
    let all = tape.concat_rows(frame_queries)?;
    let a = tape.gather_rows(all, &frame_idx)?;
    let b = tape.gather_rows(video_queries, &video_idx)?;
    let ones = tape.constant(crate::nn::ones_col(tape.value(a).cols()));
    let ab = tape.mul(a, b)?;
    let dot = tape.matmul(ab, ones)?;
    let aa = tape.mul(a, a)?;
    let aa = tape.matmul(aa, ones)?;
    let bb = tape.mul(b, b)?;
    let bb = tape.matmul(bb, ones)?;
    let norms = tape.mul(aa, bb)?;
    let norms = tape.shift(norms, COSINE_EPS);
    let norms = tape.sqrt(norms);
    let cos = tape.div(dot, norms)?;
    let cos = tape.sum(cos);
    let loss = tape.scale(cos, -1.0 / pairs as f64);
    Ok(tape.shift(loss, 1.0))
}

/// `frame + video + sim_weight * sim + lambda * count`, summed in that order.
pub fn total_loss(tape: &mut Tape, frame: Var, video: Var, sim: Var, count: Var, sim_weight: f64, lambda: f64) -> Result<Var, TensorError> {
    let s = tape.add(frame, video)?;
    let sim = tape.scale(sim, sim_weight);
    let s = tape.add(s, sim)?;
    let count = tape.scale(count, lambda);
    tape.add(s, count)
}
