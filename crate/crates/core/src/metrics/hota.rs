use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{alpha_grid, EvalVideo};
use crate::mask::iou;
use crate::matching::{hungarian, CostMatrix};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    /// `(HOTA, DetA, AssA)` at each threshold of [`alpha_grid`], 0 to 100.
    pub per_alpha: Vec<(f64, f64, f64)>,
}

/// Present trajectories and their pairwise IoU on one frame.
struct FrameOverlap {
    gt: Vec<usize>,
    pred: Vec<usize>,
    /// `iou[g][p]` over the present lists.
    iou: Vec<Vec<f64>>,
}

fn frame_overlaps(v: &EvalVideo) -> Vec<FrameOverlap> {
    (0..v.frames)
        .map(|t| {
            let gt: Vec<usize> = (0..v.gt.len()).filter(|&g| v.gt[g].masks.present(t)).collect();
            let pred: Vec<usize> = (0..v.pred.len()).filter(|&p| v.pred[p].masks.present(t)).collect();
            let iou = gt
                .iter()
                .map(|&g| pred.iter().map(|&p| iou(v.gt[g].masks.frame(t), v.pred[p].masks.frame(t))).collect())
                .collect();
            FrameOverlap { gt, pred, iou }
        })
        .collect()
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fn_: usize,
    fp: usize,
    /// Sum over true positives of their association score.
    assoc: f64,
}

fn score_video(v: &EvalVideo, frames: &[FrameOverlap], alpha: f64, acc: &mut Counts) {
    let gt_frames: Vec<usize> = (0..v.gt.len()).map(|g| frames.iter().filter(|f| f.gt.contains(&g)).count()).collect();
    let pred_frames: Vec<usize> = (0..v.pred.len()).map(|p| frames.iter().filter(|f| f.pred.contains(&p)).count()).collect();
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut tp = 0;
    let mut n_gt = 0;
    let mut n_pred = 0;
    for f in frames {
        n_gt += f.gt.len();
        n_pred += f.pred.len();
        if f.gt.is_empty() || f.pred.is_empty() {
            continue;
        }
        let cost = CostMatrix::from_fn(f.gt.len(), f.pred.len(), |g, p| {
            let s = f.iou[g][p];
            if s >= alpha {
                -s
            } else {
                0.0
            }
        })
        .expect("IoU is finite");
        for (g, p) in hungarian(&cost).pairs {
            if f.iou[g][p] >= alpha {
                tp += 1;
                *pairs.entry((f.gt[g], f.pred[p])).or_default() += 1;
            }
        }
    }
    for (&(g, p), &tpa) in &pairs {
        let denom = gt_frames[g] + pred_frames[p] - tpa;
        acc.assoc += tpa as f64 * tpa as f64 / denom as f64;
    }
    acc.tp += tp;
    acc.fn_ += n_gt - tp;
    acc.fp += n_pred - tp;
}

/// HOTA with per-frame bijective matching; counts are pooled over all videos before the
/// ratios are taken. Everything is 0 when there is nothing to detect or predict.
pub fn hota(videos: &[EvalVideo]) -> HotaScores {
    let overlaps: Vec<Vec<FrameOverlap>> = videos.iter().map(frame_overlaps).collect();
    let alphas = alpha_grid();
    let mut per_alpha = vec![];
    for &alpha in &alphas {
        let mut acc = Counts::default();
        for (v, f) in videos.iter().zip(&overlaps) {
            score_video(v, f, alpha, &mut acc);
        }
        let denom = acc.tp + acc.fn_ + acc.fp;
        let det = if denom == 0 { 0.0 } else { acc.tp as f64 / denom as f64 };
        let ass = if acc.tp == 0 { 0.0 } else { acc.assoc / acc.tp as f64 };
        per_alpha.push((100.0 * math::sqrt(det * ass), 100.0 * det, 100.0 * ass));
    }
    let n = alphas.len() as f64;
    HotaScores {
        hota: per_alpha.iter().map(|x| x.0).sum::<f64>() / n,
        det_a: per_alpha.iter().map(|x| x.1).sum::<f64>() / n,
        ass_a: per_alpha.iter().map(|x| x.2).sum::<f64>() / n,
        per_alpha,
    }
}
