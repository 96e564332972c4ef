use alloc::vec;
use alloc::vec::Vec;

use super::{alpha_grid, EvalVideo};
use crate::mask::iou;
use crate::matching::{hungarian, CostMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct FslaScores {
    pub fsla: f64,
    /// Frames with no sounding object.
    pub silent: f64,
    /// Frames with one sounding object.
    pub single: f64,
    /// Frames with two or more sounding objects.
    pub multi: f64,
    /// FSLA at each threshold of [`alpha_grid`], 0 to 100.
    pub per_alpha: Vec<f64>,
}

/// Largest IoU threshold a frame satisfies, or `None` when it fails regardless of
/// threshold (count or category mismatch). Frames with nothing on either side pass at
/// every threshold.
fn frame_margin(v: &EvalVideo, t: usize) -> Option<f64> {
    let gt: Vec<usize> = (0..v.gt.len()).filter(|&g| v.gt[g].masks.present(t)).collect();
    let pred: Vec<usize> = (0..v.pred.len()).filter(|&p| v.pred[p].masks.present(t)).collect();
    if gt.len() != pred.len() {
        return None;
    }
    if gt.is_empty() {
        return Some(1.0);
    }
    let ious: Vec<Vec<f64>> = gt
        .iter()
        .map(|&g| pred.iter().map(|&p| iou(v.gt[g].masks.frame(t), v.pred[p].masks.frame(t))).collect())
        .collect();
    let cost = CostMatrix::from_fn(gt.len(), pred.len(), |g, p| -ious[g][p]).expect("IoU is finite");
    let mut worst = 1.0f64;
    for (g, p) in hungarian(&cost).pairs {
        if v.gt[gt[g]].label != v.pred[pred[p]].label {
            return None;
        }
        worst = worst.min(ious[g][p]);
    }
    Some(worst)
}

/// Frame-level sound localization accuracy averaged over the alpha grid, overall and
/// split by the number of sounding objects. An empty split scores 0.
pub fn fsla(videos: &[EvalVideo]) -> FslaScores {
    let alphas = alpha_grid();
    // [all, silent, single, multi] sums of per-frame credit and frame counts.
    let mut credit = [0.0f64; 4];
    let mut frames = [0usize; 4];
    let mut per_alpha = vec![0usize; alphas.len()];
    for v in videos {
        for t in 0..v.frames {
            let passed = match frame_margin(v, t) {
                Some(m) => alphas.iter().filter(|&&a| a <= m).count(),
                None => 0,
            };
            for c in per_alpha.iter_mut().take(passed) {
                *c += 1;
            }
            let score = passed as f64 / alphas.len() as f64;
            let split = 1 + v.sounding_counts[t].min(2);
            for s in [0, split] {
                credit[s] += score;
                frames[s] += 1;
            }
        }
    }
    let pct = |s: usize| if frames[s] == 0 { 0.0 } else { 100.0 * credit[s] / frames[s] as f64 };
    FslaScores {
        fsla: pct(0),
        silent: pct(1),
        single: pct(2),
        multi: pct(3),
        per_alpha: per_alpha
            .into_iter()
            .map(|c| if frames[0] == 0 { 0.0 } else { 100.0 * c as f64 / frames[0] as f64 })
            .collect(),
    }
}
