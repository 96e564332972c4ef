//! JSON track files holding ground truth or predictions.
//!
//! ```json
//! {
//!   "format": "acvis-tracks",
//!   "version": 1,
//!   "videos": [
//!     {
//!       "id": "video_0003", "frames": 8, "height": 32, "width": 32,
//!       "sounding_counts": [0, 1, 2, ...],
//!       "counts": [0, 1, 1, ...],
//!       "trajectories": [
//!         { "id": 1, "label": 2, "confidence": 0.93, "rle": [[1024], [300, 12, 712], ...] }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! `rle` holds one run-length code per frame over row-major pixels, starting with a run
//! of background (possibly 0). Labels are `1..=K`. Ground truth carries
//! `sounding_counts`; predictions may carry decoded `counts`.

use std::collections::BTreeMap;
use std::path::Path;

use acvis_core::mask::MaskVolume;
use acvis_core::metrics::{EvalVideo, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{read, write, CliError, Result};

pub const FORMAT_TAG: &str = "acvis-tracks";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: u32,
    pub label: usize,
    pub confidence: f64,
    pub rle: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sounding_counts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    pub trajectories: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub format: String,
    pub version: u32,
    pub videos: Vec<VideoRecord>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        TrajectoryRecord {
            id: t.id,
            label: t.label,
            confidence: t.confidence,
            rle: t.masks.to_rle(),
        }
    }
}

impl VideoRecord {
    pub fn new(id: impl Into<String>, frames: usize, height: usize, width: usize, tracks: &[Trajectory]) -> Self {
        VideoRecord {
            id: id.into(),
            frames,
            height,
            width,
            sounding_counts: None,
            counts: None,
            trajectories: tracks.iter().map(TrajectoryRecord::from_trajectory).collect(),
        }
    }

    /// Decoded trajectories. The record must have passed [`TrackFile::validate`].
    pub fn decode(&self) -> Vec<Trajectory> {
        self.trajectories
            .iter()
            .map(|t| Trajectory {
                id: t.id,
                label: t.label,
                confidence: t.confidence,
                masks: MaskVolume::from_rle(self.height, self.width, &t.rle).expect("validated"),
            })
            .collect()
    }
}

impl TrackFile {
    pub fn new(videos: Vec<VideoRecord>) -> Self {
        TrackFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            videos,
        }
    }

    /// Structural checks with a field path in every message.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.format != FORMAT_TAG {
            return Err(format!("format: expected {FORMAT_TAG:?}, got {:?}", self.format));
        }
        if self.version != FORMAT_VERSION {
            return Err(format!("version: expected {FORMAT_VERSION}, got {}", self.version));
        }
        let mut seen = BTreeMap::new();
        for (i, v) in self.videos.iter().enumerate() {
            let at = format!("videos[{i}]");
            if let Some(prev) = seen.insert(v.id.as_str(), i) {
                return Err(format!("{at}.id: {:?} already used by videos[{prev}]", v.id));
            }
            if v.frames == 0 || v.height == 0 || v.width == 0 {
                return Err(format!("{at}: frames, height and width must be positive"));
            }
            for (name, counts) in [("sounding_counts", &v.sounding_counts), ("counts", &v.counts)] {
                if let Some(c) = counts {
                    if c.len() != v.frames {
                        return Err(format!("{at}.{name}: {} entries for {} frames", c.len(), v.frames));
                    }
                }
            }
            let mut ids = Vec::with_capacity(v.trajectories.len());
            for (j, t) in v.trajectories.iter().enumerate() {
                let at = format!("{at}.trajectories[{j}]");
                if ids.contains(&t.id) {
                    return Err(format!("{at}.id: duplicate id {}", t.id));
                }
                ids.push(t.id);
                if t.label == 0 {
                    return Err(format!("{at}.label: labels start at 1"));
                }
                if !(0.0..=1.0).contains(&t.confidence) {
                    return Err(format!("{at}.confidence: {} is outside [0, 1]", t.confidence));
                }
                if t.rle.len() != v.frames {
                    return Err(format!("{at}.rle: {} frames, expected {}", t.rle.len(), v.frames));
                }
                for (f, counts) in t.rle.iter().enumerate() {
                    acvis_core::mask::rle_decode(counts, v.height * v.width).map_err(|e| format!("{at}.rle[{f}]: {e}"))?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let file: TrackFile = serde_json::from_slice(&bytes).map_err(|e| CliError::schema(path, e.to_string()))?;
        file.validate().map_err(|d| CliError::schema(path, d))?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).expect("track files serialize");
        text.push('\n');
        write(path, text.as_bytes())
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }
}

/// Lines ground truth up with predictions by video id. Every ground-truth video needs a
/// prediction record of the same shape and vice versa; ground truth must carry
/// `sounding_counts`.
pub fn pair(gt: &TrackFile, gt_path: &Path, pred: &TrackFile, pred_path: &Path) -> Result<Vec<EvalVideo>> {
    for (i, p) in pred.videos.iter().enumerate() {
        if gt.get(&p.id).is_none() {
            return Err(CliError::schema(pred_path, format!("videos[{i}].id: {:?} is not in the ground truth", p.id)));
        }
    }
    gt.videos
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let counts = g
                .sounding_counts
                .clone()
                .ok_or_else(|| CliError::schema(gt_path, format!("videos[{i}].sounding_counts: required in ground truth")))?;
            let p = pred
                .get(&g.id)
                .ok_or_else(|| CliError::schema(pred_path, format!("videos: no record for ground-truth video {:?}", g.id)))?;
            if (p.frames, p.height, p.width) != (g.frames, g.height, g.width) {
                return Err(CliError::schema(
                    pred_path,
                    format!(
                        "video {:?}: shape {}x{}x{} differs from ground truth {}x{}x{}",
                        g.id, p.frames, p.height, p.width, g.frames, g.height, g.width
                    ),
                ));
            }
            Ok(EvalVideo {
                frames: g.frames,
                height: g.height,
                width: g.width,
                gt: g.decode(),
                pred: p.decode(),
                sounding_counts: counts,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrackFile {
        let mut m = MaskVolume::empty(2, 3, 4);
        m.frame_mut(1)[5] = true;
        m.frame_mut(1)[6] = true;
        let mut v = VideoRecord::new(
            "a",
            2,
            3,
            4,
            &[Trajectory {
                id: 1,
                label: 2,
                confidence: 0.1 + 0.2,
                masks: m,
            }],
        );
        v.sounding_counts = Some(vec![0, 1]);
        TrackFile::new(vec![v])
    }

    #[test]
    fn json_round_trip_is_exact() {
        let f = sample();
        let text = serde_json::to_string(&f).unwrap();
        let back: TrackFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.videos[0].trajectories[0].confidence.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back.videos[0].trajectories[0].rle, vec![vec![12], vec![5, 2, 5]]);
        back.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let mut f = sample();
        f.videos[0].trajectories[0].rle[1] = vec![5, 2, 4];
        assert!(f.validate().unwrap_err().starts_with("videos[0].trajectories[0].rle[1]"));
        let mut f = sample();
        f.videos[0].trajectories[0].label = 0;
        assert!(f.validate().unwrap_err().contains(".label"));
        let mut f = sample();
        f.videos[0].sounding_counts = Some(vec![1]);
        assert!(f.validate().unwrap_err().contains("sounding_counts"));
    }

    #[test]
    fn pairing_requires_matching_ids() {
        let gt = sample();
        let mut pred = sample();
        pred.videos[0].id = "b".into();
        let p = Path::new("p.json");
        assert!(matches!(pair(&gt, p, &pred, p), Err(CliError::Schema { .. })));
        let videos = pair(&gt, p, &gt, p).unwrap();
        assert_eq!(videos[0].gt, videos[0].pred);
    }
}
