//! On-disk corpus: raw frames and audio in one little-endian `f64` file, described by a
//! JSON manifest, plus one ground-truth track file per split.
//!
//! ```text
//! out/manifest.json   shapes, byte offsets, generator config and seed, data checksum
//! out/data.bin        frames [T, H*W, C] then audio [T, M, D] for every video
//! out/gt_train.json   track file (see `format`)
//! out/gt_val.json
//! ```

use std::fmt::Write as _;
use std::path::Path;

use acvis_core::model::{Clip, ClipTargets, TrackTarget};
use acvis_core::synth::{Corpus, CorpusConfig, SyntheticVideo};
use acvis_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read, write, CliError, Result};
use crate::format::{TrackFile, VideoRecord};

pub const MANIFEST: &str = "manifest.json";
pub const DATA: &str = "data.bin";
const CORPUS_TAG: &str = "acvis-corpus";
const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn gt_file(self) -> String {
        format!("gt_{}.json", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    /// Byte offset into the data file.
    pub offset: u64,
    pub shape: Vec<usize>,
}

impl ArrayEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub index: usize,
    pub frames: ArrayEntry,
    pub audio: ArrayEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub dtype: String,
    pub data_file: String,
    pub data_bytes: u64,
    pub data_sha256: String,
    pub train: Vec<VideoEntry>,
    pub val: Vec<VideoEntry>,
}

/// One clip ready for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub clip: Clip,
    pub targets: ClipTargets,
    pub truth: VideoRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: CorpusConfig,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// Converts an in-memory corpus without touching the disk.
    pub fn from_corpus(c: &Corpus) -> Self {
        Dataset {
            config: c.config.clone(),
            seed: c.seed,
            train: c.train.iter().map(|v| sample_of(v, &c.config)).collect(),
            val: c.val.iter().map(|v| sample_of(v, &c.config)).collect(),
        }
    }

    /// Ground-truth track file for one split.
    pub fn truth(&self, s: Split) -> TrackFile {
        TrackFile::new(self.split(s).iter().map(|x| x.truth.clone()).collect())
    }
}

fn truth_record(v: &SyntheticVideo, cfg: &CorpusConfig) -> VideoRecord {
    let mut r = VideoRecord::new(v.id.clone(), cfg.frames, cfg.height, cfg.width, &v.tracks);
    r.sounding_counts = Some(v.sounding_counts.clone());
    r
}

fn targets_of(truth: &VideoRecord) -> ClipTargets {
    ClipTargets {
        tracks: truth
            .decode()
            .iter()
            .map(|t| TrackTarget {
                class: t.label - 1,
                masks: t.masks.to_f64(),
            })
            .collect(),
        counts: truth.sounding_counts.clone().unwrap_or_default(),
    }
}

fn sample_of(v: &SyntheticVideo, cfg: &CorpusConfig) -> Sample {
    Sample {
        id: v.id.clone(),
        clip: v.clip(),
        targets: v.targets(),
        truth: truth_record(v, cfg),
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a String");
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn push_tensors(buf: &mut Vec<u8>, ts: &[Tensor]) -> ArrayEntry {
    let offset = buf.len() as u64;
    let inner = ts.first().map_or(vec![0, 0], |t| t.shape().to_vec());
    for t in ts {
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut shape = vec![ts.len()];
    shape.extend(inner);
    ArrayEntry { offset, shape }
}

/// Writes `corpus` under `dir`, creating it if needed.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let cfg = &corpus.config;
    let mut data = Vec::new();
    let mut entries = |videos: &[SyntheticVideo]| -> Vec<VideoEntry> {
        videos
            .iter()
            .map(|v| VideoEntry {
                id: v.id.clone(),
                index: v.index,
                frames: push_tensors(&mut data, &v.frames),
                audio: push_tensors(&mut data, &v.audio),
            })
            .collect()
    };
    let train = entries(&corpus.train);
    let val = entries(&corpus.val);
    let manifest = Manifest {
        format: CORPUS_TAG.into(),
        version: CORPUS_VERSION,
        seed: corpus.seed,
        config: cfg.clone(),
        dtype: "f64-le".into(),
        data_file: DATA.into(),
        data_bytes: data.len() as u64,
        data_sha256: sha256_hex(&data),
        train,
        val,
    };
    write(&dir.join(DATA), &data)?;
    for (split, videos) in [(Split::Train, &corpus.train), (Split::Val, &corpus.val)] {
        let file = TrackFile::new(videos.iter().map(|v| truth_record(v, cfg)).collect());
        file.write(&dir.join(split.gt_file()))?;
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

fn read_tensors(data: &[u8], e: &ArrayEntry, path: &Path, what: &str) -> Result<Vec<Tensor>> {
    let bad = |d: String| CliError::schema(path, format!("{what}: {d}"));
    if e.shape.len() != 3 {
        return Err(bad(format!("shape {:?} must have three axes", e.shape)));
    }
    let start = usize::try_from(e.offset).map_err(|_| bad("offset overflows".into()))?;
    let end = e.len().checked_mul(8).and_then(|n| n.checked_add(start)).ok_or_else(|| bad("size overflows".into()))?;
    let bytes = data.get(start..end).ok_or_else(|| bad(format!("bytes {start}..{end} are past the end of the data file")))?;
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let per = e.shape[1] * e.shape[2];
    Ok((0..e.shape[0])
        .map(|t| Tensor::new(vec![e.shape[1], e.shape[2]], values[t * per..(t + 1) * per].to_vec()).expect("sized from shape"))
        .collect())
}

/// Reads a corpus written by [`write_corpus`], checking the data checksum and that the
/// ground truth agrees with the manifest.
pub fn read_corpus(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_slice(&read(&mpath)?).map_err(|e| CliError::schema(&mpath, e.to_string()))?;
    if manifest.format != CORPUS_TAG || manifest.version != CORPUS_VERSION || manifest.dtype != "f64-le" {
        return Err(CliError::schema(
            &mpath,
            format!("format/version/dtype: unsupported {} v{} {}", manifest.format, manifest.version, manifest.dtype),
        ));
    }
    let dpath = dir.join(&manifest.data_file);
    let data = read(&dpath)?;
    if data.len() as u64 != manifest.data_bytes || sha256_hex(&data) != manifest.data_sha256 {
        return Err(CliError::schema(&dpath, "contents do not match data_bytes/data_sha256 in the manifest"));
    }
    let load = |split: Split, entries: &[VideoEntry]| -> Result<Vec<Sample>> {
        let gpath = dir.join(split.gt_file());
        let gt = TrackFile::read(&gpath)?;
        if gt.videos.len() != entries.len() {
            return Err(CliError::schema(&gpath, format!("videos: {} records, manifest lists {}", gt.videos.len(), entries.len())));
        }
        entries
            .iter()
            .zip(gt.videos)
            .enumerate()
            .map(|(i, (e, truth))| {
                let at = format!("{}[{i}]", split.name());
                if truth.id != e.id {
                    return Err(CliError::schema(&gpath, format!("videos[{i}].id: {:?}, manifest has {:?}", truth.id, e.id)));
                }
                let frames = read_tensors(&data, &e.frames, &mpath, &format!("{at}.frames"))?;
                let audio = read_tensors(&data, &e.audio, &mpath, &format!("{at}.audio"))?;
                if frames.len() != truth.frames || audio.len() != truth.frames {
                    return Err(CliError::schema(&mpath, format!("{at}: frame count differs from the ground truth")));
                }
                if truth.sounding_counts.is_none() {
                    return Err(CliError::schema(&gpath, format!("videos[{i}].sounding_counts: required in ground truth")));
                }
                Ok(Sample {
                    id: e.id.clone(),
                    clip: Clip { frames, audio },
                    targets: targets_of(&truth),
                    truth,
                })
            })
            .collect()
    };
    let train = load(Split::Train, &manifest.train)?;
    let val = load(Split::Val, &manifest.val)?;
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        train,
        val,
    })
}
