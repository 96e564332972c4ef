use acvis_core::mask::MaskVolume;
use acvis_core::metrics::Trajectory;
use acvis_core::Model;

use crate::corpus::Sample;
use crate::error::Result;
use crate::format::{TrackFile, VideoRecord};

/// Predicted track record for one clip.
pub fn predict_video(model: &Model, sample: &Sample, threshold: f64) -> Result<VideoRecord> {
    let cfg = &model.config;
    let pred = model.predict(&sample.clip, threshold)?;
    let frames = sample.clip.len();
    let tracks: Vec<Trajectory> = pred
        .trajectories
        .iter()
        .map(|t| Trajectory {
            id: t.id,
            label: t.label,
            confidence: t.confidence,
            masks: MaskVolume::from_probs(frames, cfg.height, cfg.width, &t.masks).expect("mask size follows the config"),
        })
        .collect();
    let mut record = VideoRecord::new(sample.id.clone(), frames, cfg.height, cfg.width, &tracks);
    record.counts = pred.counts;
    Ok(record)
}

/// Predictions for every sample, computed on scoped worker threads. Output order follows
/// `samples`, so the result does not depend on the thread count.
pub fn predict_all(model: &Model, samples: &[Sample], threshold: f64) -> Result<TrackFile> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len()).max(1);
    let chunk = samples.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<VideoRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|x| predict_video(model, x, threshold)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
    });
    let mut videos = Vec::with_capacity(samples.len());
    for p in parts {
        videos.extend(p?);
    }
    Ok(TrackFile::new(videos))
}
