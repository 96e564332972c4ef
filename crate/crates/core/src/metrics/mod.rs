//! Video instance segmentation metrics: trajectory mAP over spatio-temporal IoU, HOTA
//! with its detection and association parts, and frame-level sound localization
//! accuracy (FSLA) with its silent / single-source / multi-source split.
//!
//! All masks are binary here; probabilities are binarized at 0.5 before they arrive.
//! Every score is reported on a 0 to 100 scale.

mod fsla;
mod hota;
mod map;

use alloc::vec::Vec;

use crate::mask::{overlap, MaskVolume};

pub use fsla::{fsla, FslaScores};
pub use hota::{hota, HotaScores};
pub use map::{map_score, MapScores};

/// IoU thresholds `0.05, 0.10, ..., 0.95` used by HOTA and FSLA.
pub fn alpha_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// IoU thresholds `0.50, 0.55, ..., 0.95` used by mAP.
pub fn map_thresholds() -> Vec<f64> {
    (10..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("video {video}: mask volume shape differs from the ground truth")]
    Shape { video: usize },
    #[error("video {video}: {counts} sounding counts for {frames} frames")]
    Counts { video: usize, counts: usize, frames: usize },
    #[error("video {video}: duplicate trajectory id {id}")]
    DuplicateId { video: usize, id: u32 },
}

/// A ground-truth or predicted instance over a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    /// Class label in `1..=K`.
    pub label: usize,
    /// Ranking score in `[0, 1]`; ground truth uses 1.
    pub confidence: f64,
    pub masks: MaskVolume,
}

/// Ground truth and predictions of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub gt: Vec<Trajectory>,
    pub pred: Vec<Trajectory>,
    /// Number of sounding objects per frame.
    pub sounding_counts: Vec<usize>,
}

impl EvalVideo {
    pub fn validate(&self, index: usize) -> Result<(), MetricError> {
        if self.sounding_counts.len() != self.frames {
            return Err(MetricError::Counts {
                video: index,
                counts: self.sounding_counts.len(),
                frames: self.frames,
            });
        }
        for set in [&self.gt, &self.pred] {
            let mut ids = Vec::with_capacity(set.len());
            for tr in set.iter() {
                let m = &tr.masks;
                if (m.frames(), m.height(), m.width()) != (self.frames, self.height, self.width) {
                    return Err(MetricError::Shape { video: index });
                }
                if ids.contains(&tr.id) {
                    return Err(MetricError::DuplicateId { video: index, id: tr.id });
                }
                ids.push(tr.id);
            }
        }
        Ok(())
    }
}

/// Spatio-temporal IoU: pixel intersection over union accumulated over all frames.
/// Two empty trajectories have IoU 1.
pub fn st_iou(a: &MaskVolume, b: &MaskVolume) -> Option<f64> {
    if !a.same_shape(b) {
        return None;
    }
    let (i, u) = overlap(a.bits(), b.bits());
    Some(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Number of trajectories with a non-empty mask on frame `t`.
pub fn present_count(tracks: &[Trajectory], t: usize) -> usize {
    tracks.iter().filter(|tr| tr.masks.present(t)).count()
}

/// Scores at one HOTA/FSLA threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaScores {
    pub alpha: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub fsla: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    #[cfg_attr(feature = "serde", serde(rename = "mAP"))]
    pub map: f64,
    #[cfg_attr(feature = "serde", serde(rename = "HOTA"))]
    pub hota: f64,
    #[cfg_attr(feature = "serde", serde(rename = "DetA"))]
    pub det_a: f64,
    #[cfg_attr(feature = "serde", serde(rename = "AssA"))]
    pub ass_a: f64,
    #[cfg_attr(feature = "serde", serde(rename = "FSLA"))]
    pub fsla: f64,
    #[cfg_attr(feature = "serde", serde(rename = "FSLAn"))]
    pub fsla_n: f64,
    #[cfg_attr(feature = "serde", serde(rename = "FSLAs"))]
    pub fsla_s: f64,
    #[cfg_attr(feature = "serde", serde(rename = "FSLAm"))]
    pub fsla_m: f64,
    pub per_alpha: Vec<AlphaScores>,
    /// `(threshold, AP)` pairs.
    pub map_per_threshold: Vec<(f64, f64)>,
}

/// Runs the whole suite.
pub fn evaluate(videos: &[EvalVideo]) -> Result<MetricReport, MetricError> {
    for (i, v) in videos.iter().enumerate() {
        v.validate(i)?;
    }
    let m = map_score(videos);
    let h = hota(videos);
    let f = fsla(videos);
    let per_alpha = alpha_grid()
        .into_iter()
        .enumerate()
        .map(|(i, alpha)| AlphaScores {
            alpha,
            hota: h.per_alpha[i].0,
            det_a: h.per_alpha[i].1,
            ass_a: h.per_alpha[i].2,
            fsla: f.per_alpha[i],
        })
        .collect();
    Ok(MetricReport {
        map: m.map,
        hota: h.hota,
        det_a: h.det_a,
        ass_a: h.ass_a,
        fsla: f.fsla,
        fsla_n: f.silent,
        fsla_s: f.single,
        fsla_m: f.multi,
        per_alpha,
        map_per_threshold: map_thresholds().into_iter().zip(m.per_threshold).collect(),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    /// Square of side 2 at `(x, y)` on an 8x8 grid, present on the listed frames.
    pub(crate) fn square(frames: usize, x: usize, y: usize, on: &[usize]) -> MaskVolume {
        let mut m = MaskVolume::empty(frames, 8, 8);
        for &t in on {
            let f = m.frame_mut(t);
            for dy in 0..2 {
                for dx in 0..2 {
                    f[(y + dy) * 8 + x + dx] = true;
                }
            }
        }
        m
    }

    pub(crate) fn track(id: u32, label: usize, confidence: f64, masks: MaskVolume) -> Trajectory {
        Trajectory { id, label, confidence, masks }
    }

    /// Two sounding objects over four frames with a few silent and single-source frames
    /// in a second clip.
    pub(crate) fn gt_videos() -> Vec<EvalVideo> {
        let a = EvalVideo {
            frames: 4,
            height: 8,
            width: 8,
            gt: vec![track(1, 1, 1.0, square(4, 0, 0, &[0, 1, 2, 3])), track(2, 2, 1.0, square(4, 4, 4, &[0, 1, 2, 3]))],
            pred: vec![],
            sounding_counts: vec![2, 2, 2, 2],
        };
        let b = EvalVideo {
            frames: 4,
            height: 8,
            width: 8,
            gt: vec![track(7, 3, 1.0, square(4, 2, 2, &[1, 2]))],
            pred: vec![],
            sounding_counts: vec![0, 1, 1, 0],
        };
        vec![a, b]
    }

    pub(crate) fn as_predictions(videos: &[EvalVideo]) -> Vec<EvalVideo> {
        videos
            .iter()
            .map(|v| EvalVideo {
                pred: v.gt.clone(),
                ..v.clone()
            })
            .collect()
    }

    /// Perfect masks, but the two predicted ids swap objects after frame 1.
    pub(crate) fn id_swap() -> EvalVideo {
        let g1 = square(4, 0, 0, &[0, 1, 2, 3]);
        let g2 = square(4, 4, 4, &[0, 1, 2, 3]);
        let mut p1 = square(4, 0, 0, &[0, 1]);
        let mut p2 = square(4, 4, 4, &[0, 1]);
        for t in 2..4 {
            p1.frame_mut(t).copy_from_slice(g2.frame(t));
            p2.frame_mut(t).copy_from_slice(g1.frame(t));
        }
        EvalVideo {
            frames: 4,
            height: 8,
            width: 8,
            gt: vec![track(1, 1, 1.0, g1), track(2, 1, 1.0, g2)],
            pred: vec![track(1, 1, 0.9, p1), track(2, 1, 0.8, p2)],
            sounding_counts: vec![2, 2, 2, 2],
        }
    }
}
