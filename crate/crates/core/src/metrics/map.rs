use alloc::vec;
use alloc::vec::Vec;

use super::{map_thresholds, st_iou, EvalVideo};

#[derive(Debug, Clone, PartialEq)]
pub struct MapScores {
    /// Mean over thresholds and classes, 0 to 100.
    pub map: f64,
    /// Mean AP over classes at each threshold of [`map_thresholds`], 0 to 100.
    pub per_threshold: Vec<f64>,
}

/// 101-point interpolated average precision from detections sorted by confidence.
fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        if let Some(idx) = recall.iter().position(|&x| x >= level) {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// Class-wise AP with greedy confidence-ranked matching on spatio-temporal IoU,
/// averaged over thresholds 0.50..0.95 and over classes that have ground truth.
pub fn map_score(videos: &[EvalVideo]) -> MapScores {
    let thresholds = map_thresholds();
    // iou[v][p][g]
    let ious: Vec<Vec<Vec<f64>>> = videos
        .iter()
        .map(|v| {
            v.pred
                .iter()
                .map(|p| v.gt.iter().map(|g| st_iou(&p.masks, &g.masks).unwrap_or(0.0)).collect())
                .collect()
        })
        .collect();
    let mut labels: Vec<usize> = videos.iter().flat_map(|v| v.gt.iter().map(|g| g.label)).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return MapScores {
            map: 0.0,
            per_threshold: vec![0.0; thresholds.len()],
        };
    }
    let mut per_threshold = vec![0.0; thresholds.len()];
    for &label in &labels {
        let n_gt = videos.iter().map(|v| v.gt.iter().filter(|g| g.label == label).count()).sum();
        let mut dets: Vec<(usize, usize, f64)> = videos
            .iter()
            .enumerate()
            .flat_map(|(vi, v)| v.pred.iter().enumerate().filter(|(_, p)| p.label == label).map(move |(pi, p)| (vi, pi, p.confidence)))
            .collect();
        dets.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        for (ti, &thr) in thresholds.iter().enumerate() {
            let mut taken: Vec<Vec<bool>> = videos.iter().map(|v| vec![false; v.gt.len()]).collect();
            let hits: Vec<bool> = dets
                .iter()
                .map(|&(vi, pi, _)| {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, g) in videos[vi].gt.iter().enumerate() {
                        if g.label != label || taken[vi][gi] {
                            continue;
                        }
                        let iou = ious[vi][pi][gi];
                        if iou >= thr && best.map_or(true, |(_, b)| iou > b) {
                            best = Some((gi, iou));
                        }
                    }
                    match best {
                        Some((gi, _)) => {
                            taken[vi][gi] = true;
                            true
                        }
                        None => false,
                    }
                })
                .collect();
            per_threshold[ti] += average_precision(&hits, n_gt);
        }
    }
    let classes = labels.len() as f64;
    for v in &mut per_threshold {
        *v *= 100.0 / classes;
    }
    let map = per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    MapScores { map, per_threshold }
}
