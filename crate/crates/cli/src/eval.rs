use std::fmt::Write as _;
use std::path::Path;

use acvis_core::metrics::{evaluate, present_count, EvalVideo, MetricReport};
use serde::{Deserialize, Serialize};

use crate::error::{write, CliError, Result};
use crate::format::{pair, TrackFile};

/// Metrics plus counting errors.
///
/// `count_mae` compares the decoded count head with the ground-truth number of sounding
/// objects per frame; it is absent when any prediction record lacks counts.
/// `instance_count_mae` compares the number of predicted trajectories present on a frame
/// with the same ground truth. The `_multi` variants restrict both to frames with two or
/// more sounding objects and are absent when there are none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub count_mae: Option<f64>,
    pub count_mae_multi: Option<f64>,
    pub instance_count_mae: f64,
    pub instance_count_mae_multi: Option<f64>,
    pub videos: usize,
    pub frames: usize,
}

/// Mean of `|a - b|` over the selected frames, `None` when nothing is selected.
fn mae(pairs: impl Iterator<Item = (usize, usize)>) -> Option<f64> {
    let (mut sum, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        sum += a.abs_diff(b);
        n += 1;
    }
    (n > 0).then(|| sum as f64 / n as f64)
}

pub fn evaluate_pairs(videos: &[EvalVideo], counts: Option<&[Vec<usize>]>) -> Result<EvalReport, acvis_core::metrics::MetricError> {
    let metrics = evaluate(videos)?;
    let frames = || videos.iter().flat_map(|v| (0..v.frames).map(move |t| (v, t)));
    let instance = |multi: bool| {
        mae(frames()
            .filter(|&(v, t)| !multi || v.sounding_counts[t] >= 2)
            .map(|(v, t)| (present_count(&v.pred, t), v.sounding_counts[t])))
    };
    let decoded = |multi: bool| {
        counts.and_then(|c| {
            mae(videos
                .iter()
                .zip(c)
                .flat_map(|(v, c)| v.sounding_counts.iter().zip(c).map(|(&g, &p)| (p, g)))
                .filter(|&(_, g)| !multi || g >= 2))
        })
    };
    Ok(EvalReport {
        metrics,
        count_mae: decoded(false),
        count_mae_multi: decoded(true),
        instance_count_mae: instance(false).unwrap_or(0.0),
        instance_count_mae_multi: instance(true),
        videos: videos.len(),
        frames: frames().count(),
    })
}

/// Scores a prediction file against a ground-truth file.
pub fn evaluate_files(gt: &TrackFile, gt_path: &Path, pred: &TrackFile, pred_path: &Path) -> Result<EvalReport> {
    let videos = pair(gt, gt_path, pred, pred_path)?;
    let counts: Option<Vec<Vec<usize>>> = gt.videos.iter().map(|g| pred.get(&g.id).and_then(|p| p.counts.clone())).collect();
    evaluate_pairs(&videos, counts.as_deref()).map_err(|e| CliError::schema(pred_path, e.to_string()))
}

impl EvalReport {
    /// `metric,value` lines; missing values are left empty.
    pub fn summary_csv(&self) -> String {
        let m = &self.metrics;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("metric,value\n");
        for (k, v) in [
            ("mAP", m.map.to_string()),
            ("HOTA", m.hota.to_string()),
            ("DetA", m.det_a.to_string()),
            ("AssA", m.ass_a.to_string()),
            ("FSLA", m.fsla.to_string()),
            ("FSLAn", m.fsla_n.to_string()),
            ("FSLAs", m.fsla_s.to_string()),
            ("FSLAm", m.fsla_m.to_string()),
            ("count_mae", opt(self.count_mae)),
            ("count_mae_multi", opt(self.count_mae_multi)),
            ("instance_count_mae", self.instance_count_mae.to_string()),
            ("instance_count_mae_multi", opt(self.instance_count_mae_multi)),
        ] {
            writeln!(s, "{k},{v}").expect("writing to a String");
        }
        s
    }

    /// One row per IoU threshold.
    pub fn per_alpha_csv(&self) -> String {
        let mut s = String::from("alpha,HOTA,DetA,AssA,FSLA\n");
        for a in &self.metrics.per_alpha {
            writeln!(s, "{},{},{},{},{}", a.alpha, a.hota, a.det_a, a.ass_a, a.fsla).expect("writing to a String");
        }
        s
    }

    /// Writes `metrics.json`, `metrics.csv` and `per_alpha.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        write(&dir.join("metrics.json"), json.as_bytes())?;
        write(&dir.join("metrics.csv"), self.summary_csv().as_bytes())?;
        write(&dir.join("per_alpha.csv"), self.per_alpha_csv().as_bytes())
    }
}
