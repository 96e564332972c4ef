//! Seeded synthetic audiovisual corpus.
//!
//! Each clip shows a few moving sprites (discs and squares) over a noisy background. Some
//! sprites make sound on some frames; at least one sprite per clip is a silent distractor
//! that looks just like the others. Ground truth only covers sounding sprites on the
//! frames where they sound, and the audio track is the sum of the sounding sprites'
//! signatures pushed through a fixed random projection plus Gaussian noise.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mask::MaskVolume;
use crate::math;
use crate::metrics::Trajectory;
use crate::model::{Clip, ClipTargets, TrackTarget};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct CorpusConfig {
    pub train_videos: usize,
    pub val_videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    pub min_radius: usize,
    pub max_radius: usize,
    /// Ceiling on the number of sprites sounding in one frame.
    pub max_sounding: usize,
    /// Silent distractors per clip.
    pub min_silent: usize,
    pub max_speed: f64,
    pub signature_dim: usize,
    pub audio_tokens: usize,
    /// Width of an audio token; must equal the model width.
    pub audio_dim: usize,
    pub audio_noise: f64,
    pub visual_noise: f64,
    /// Spread of a sprite's signature around its class prototype.
    pub signature_spread: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_videos: 64,
            val_videos: 16,
            frames: 8,
            height: 32,
            width: 32,
            channels: 3,
            classes: 4,
            min_sprites: 2,
            max_sprites: 4,
            min_radius: 3,
            max_radius: 6,
            max_sounding: 2,
            min_silent: 1,
            max_speed: 1.5,
            signature_dim: 16,
            audio_tokens: 1,
            audio_dim: 32,
            audio_noise: 0.1,
            visual_noise: 0.05,
            signature_spread: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid corpus config: {0}")]
pub struct ConfigError(pub String);

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        for (name, v) in [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("classes", self.classes),
            ("signature_dim", self.signature_dim),
            ("audio_tokens", self.audio_tokens),
            ("audio_dim", self.audio_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.min_sprites > self.max_sprites {
            return fail(format!("min_sprites {} exceeds max_sprites {}", self.min_sprites, self.max_sprites));
        }
        if self.min_radius > self.max_radius {
            return fail(format!("min_radius {} exceeds max_radius {}", self.min_radius, self.max_radius));
        }
        if self.min_silent > self.min_sprites {
            return fail(format!("min_silent {} exceeds min_sprites {}", self.min_silent, self.min_sprites));
        }
        let extent = 2 * self.max_radius + 1;
        if extent > self.height.min(self.width) {
            return fail(format!("sprite extent {extent} does not fit a {}x{} frame", self.height, self.width));
        }
        if self.max_sounding > 8 {
            return fail(format!("max_sounding {} is above 8", self.max_sounding));
        }
        for (name, v) in [
            ("max_speed", self.max_speed),
            ("audio_noise", self.audio_noise),
            ("visual_noise", self.visual_noise),
            ("signature_spread", self.signature_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SpriteKind {
    Disc,
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub kind: SpriteKind,
    /// Class label in `1..=K`.
    pub label: usize,
    pub radius: usize,
    /// Center `(x, y)` per frame.
    pub path: Vec<(f64, f64)>,
    pub color: Vec<f64>,
    /// Unit vector.
    pub signature: Vec<f64>,
    /// Half-open frame ranges in which the sprite sounds.
    pub sounding: Vec<(usize, usize)>,
}

impl Sprite {
    pub fn sounds_at(&self, t: usize) -> bool {
        self.sounding.iter().any(|&(a, b)| a <= t && t < b)
    }

    fn covers(&self, t: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.path[t];
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let r = self.radius as f64;
        match self.kind {
            SpriteKind::Disc => dx * dx + dy * dy <= r * r,
            SpriteKind::Square => dx.abs() <= r && dy.abs() <= r,
        }
    }
}

/// A frame before noise: `[H*W x C]` pixels and one visible-footprint mask per sprite.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub pixels: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
}

/// Draws sprites in order over a zero background; later sprites hide earlier ones.
pub fn render_frame(sprites: &[Sprite], t: usize, height: usize, width: usize, channels: usize) -> RenderedFrame {
    let mut owner: Vec<Option<usize>> = vec![None; height * width];
    for (i, s) in sprites.iter().enumerate() {
        for y in 0..height {
            for x in 0..width {
                if s.covers(t, x, y) {
                    owner[y * width + x] = Some(i);
                }
            }
        }
    }
    let mut pixels = vec![0.0; height * width * channels];
    let mut masks = vec![vec![false; height * width]; sprites.len()];
    for (p, o) in owner.iter().enumerate() {
        if let Some(i) = *o {
            masks[i][p] = true;
            pixels[p * channels..(p + 1) * channels].copy_from_slice(&sprites[i].color);
        }
    }
    RenderedFrame { pixels, masks }
}

/// Colour of a class: evenly spaced hues on a cosine palette.
pub fn class_color(label: usize, classes: usize, channels: usize) -> Vec<f64> {
    let hue = (label - 1) as f64 / classes as f64;
    (0..channels)
        .map(|c| 0.5 + 0.5 * math::cos(core::f64::consts::TAU * (hue + c as f64 / channels as f64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub index: usize,
    /// `[H*W x C]` per frame.
    pub frames: Vec<Tensor>,
    /// `[M x D]` per frame.
    pub audio: Vec<Tensor>,
    pub sprites: Vec<Sprite>,
    /// Ground truth for sounding sprites; ids are sprite positions plus one.
    pub tracks: Vec<Trajectory>,
    pub sounding_counts: Vec<usize>,
}

impl SyntheticVideo {
    pub fn clip(&self) -> Clip {
        Clip {
            frames: self.frames.clone(),
            audio: self.audio.clone(),
        }
    }

    /// Training targets with class indices shifted to `0..K`.
    pub fn targets(&self) -> ClipTargets {
        ClipTargets {
            tracks: self
                .tracks
                .iter()
                .map(|t| TrackTarget {
                    class: t.label - 1,
                    masks: t.masks.to_f64(),
                })
                .collect(),
            counts: self.sounding_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub train: Vec<SyntheticVideo>,
    pub val: Vec<SyntheticVideo>,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn video_rng(seed: u64, index: usize, attempt: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed) ^ index as u64) ^ attempt);
    ChaCha8Rng::seed_from_u64(s)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    math::box_muller(u1, u2)
}

fn normalize(v: &mut [f64]) {
    let n = math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

/// Corpus-wide audio structure: class prototypes and per-token projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSpace {
    pub prototypes: Vec<Vec<f64>>,
    /// `audio_tokens` matrices of shape `[signature_dim x audio_dim]`.
    pub projections: Vec<Tensor>,
}

impl AudioSpace {
    pub fn new(cfg: &CorpusConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xA0D1_0000_0000_0001));
        let prototypes = (0..cfg.classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..cfg.signature_dim).map(|_| gaussian(&mut rng)).collect();
                normalize(&mut v);
                v
            })
            .collect();
        let std = 1.0 / math::sqrt(cfg.signature_dim as f64);
        let projections = (0..cfg.audio_tokens)
            .map(|_| {
                let data = (0..cfg.signature_dim * cfg.audio_dim).map(|_| std * gaussian(&mut rng)).collect();
                Tensor::new([cfg.signature_dim, cfg.audio_dim], data).expect("sizes agree")
            })
            .collect();
        AudioSpace { prototypes, projections }
    }

    /// Noise-free audio tokens for the given sounding signatures. With one token the
    /// signatures are summed; with several, source `i` goes to token `min(i, M - 1)`.
    pub fn tokens(&self, sources: &[&[f64]]) -> Vec<Vec<f64>> {
        let m = self.projections.len();
        let (sd, ad) = (self.projections[0].rows(), self.projections[0].cols());
        let mut mixes = vec![vec![0.0; sd]; m];
        for (i, s) in sources.iter().enumerate() {
            let slot = i.min(m - 1);
            for (a, b) in mixes[slot].iter_mut().zip(s.iter()) {
                *a += b;
            }
        }
        mixes
            .iter()
            .zip(&self.projections)
            .map(|(mix, proj)| {
                let mut out = vec![0.0; ad];
                for (k, &s) in mix.iter().enumerate() {
                    if s != 0.0 {
                        for (o, &w) in out.iter_mut().zip(proj.row(k)) {
                            *o += s * w;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Folds an unbounded coordinate into `[lo, hi]` as if bouncing off both ends.
fn bounce(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let mut u = (x - lo) % period;
    if u < 0.0 {
        u += period;
    }
    lo + if u > span { period - u } else { u }
}

fn make_sprites<R: Rng>(cfg: &CorpusConfig, audio: &AudioSpace, rng: &mut R) -> Vec<Sprite> {
    let n = rng.gen_range(cfg.min_sprites..=cfg.max_sprites);
    let silent = cfg.min_silent.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let is_silent: Vec<bool> = (0..n).map(|i| order[..silent].contains(&i)).collect();
    let t_len = cfg.frames;
    let mut sprites: Vec<Sprite> = (0..n)
        .map(|i| {
            let kind = if rng.gen_bool(0.5) { SpriteKind::Disc } else { SpriteKind::Square };
            let label = rng.gen_range(1..=cfg.classes);
            let radius = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let r = radius as f64;
            let (hx, hy) = ((cfg.width - 1) as f64 - r, (cfg.height - 1) as f64 - r);
            let x0 = r + rng.gen::<f64>() * (hx - r);
            let y0 = r + rng.gen::<f64>() * (hy - r);
            let vx = (2.0 * rng.gen::<f64>() - 1.0) * cfg.max_speed;
            let vy = (2.0 * rng.gen::<f64>() - 1.0) * cfg.max_speed;
            let path = (0..t_len)
                .map(|t| (bounce(x0 + vx * t as f64, r, hx), bounce(y0 + vy * t as f64, r, hy)))
                .collect();
            let mut signature: Vec<f64> = audio.prototypes[label - 1]
                .iter()
                .map(|&p| p + cfg.signature_spread * gaussian(rng))
                .collect();
            normalize(&mut signature);
            let sounding = if is_silent[i] {
                vec![]
            } else {
                // At least a quarter of the clip, so overlapping sources are common.
                let len = rng.gen_range(t_len.div_ceil(4).max(1)..=t_len);
                let start = rng.gen_range(0..=t_len - len);
                vec![(start, start + len)]
            };
            Sprite {
                kind,
                label,
                radius,
                path,
                color: class_color(label, cfg.classes, cfg.channels),
                signature,
                sounding,
            }
        })
        .collect();
    // Enforce the per-frame ceiling by silencing the latest-listed sources first.
    let mut flags: Vec<Vec<bool>> = sprites.iter().map(|s| (0..t_len).map(|t| s.sounds_at(t)).collect()).collect();
    for t in 0..t_len {
        let mut active = 0;
        for f in flags.iter_mut() {
            if f[t] {
                active += 1;
                if active > cfg.max_sounding {
                    f[t] = false;
                }
            }
        }
    }
    for (s, f) in sprites.iter_mut().zip(&flags) {
        s.sounding = intervals(f);
    }
    sprites
}

fn intervals(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len()));
    }
    out
}

/// One clip, fully determined by `(seed, index, attempt)`.
pub fn generate_video(cfg: &CorpusConfig, audio: &AudioSpace, seed: u64, index: usize, attempt: u64) -> SyntheticVideo {
    let mut rng = video_rng(seed, index, attempt);
    let sprites = make_sprites(cfg, audio, &mut rng);
    let (t_len, pixels, c) = (cfg.frames, cfg.pixels(), cfg.channels);
    let mut frames = Vec::with_capacity(t_len);
    let mut footprints: Vec<MaskVolume> = vec![MaskVolume::empty(t_len, cfg.height, cfg.width); sprites.len()];
    for t in 0..t_len {
        let r = render_frame(&sprites, t, cfg.height, cfg.width, c);
        for (i, m) in r.masks.iter().enumerate() {
            footprints[i].frame_mut(t).copy_from_slice(m);
        }
        let data = r.pixels.iter().map(|&v| v + cfg.visual_noise * gaussian(&mut rng)).collect();
        frames.push(Tensor::new([pixels, c], data).expect("sizes agree"));
    }
    let mut audio_frames = Vec::with_capacity(t_len);
    let mut sounding_counts = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let sources: Vec<&[f64]> = sprites.iter().filter(|s| s.sounds_at(t)).map(|s| s.signature.as_slice()).collect();
        sounding_counts.push(sources.len());
        let data: Vec<f64> = audio
            .tokens(&sources)
            .into_iter()
            .flatten()
            .map(|v| v + cfg.audio_noise * gaussian(&mut rng))
            .collect();
        audio_frames.push(Tensor::new([cfg.audio_tokens, cfg.audio_dim], data).expect("sizes agree"));
    }
    let mut tracks = Vec::new();
    for (i, (s, fp)) in sprites.iter().zip(&footprints).enumerate() {
        let mut masks = MaskVolume::empty(t_len, cfg.height, cfg.width);
        for t in 0..t_len {
            if s.sounds_at(t) {
                masks.frame_mut(t).copy_from_slice(fp.frame(t));
            }
        }
        if masks.area() > 0 {
            tracks.push(Trajectory {
                id: i as u32 + 1,
                label: s.label,
                confidence: 1.0,
                masks,
            });
        }
    }
    SyntheticVideo {
        id: format!("video_{index:04}"),
        index,
        frames,
        audio: audio_frames,
        sprites,
        tracks,
        sounding_counts,
    }
}

/// Which kinds of frame (silent, single-source, multi-source) a split contains.
pub fn coverage(videos: &[SyntheticVideo]) -> [bool; 3] {
    let mut seen = [false; 3];
    for v in videos {
        for &c in &v.sounding_counts {
            seen[c.min(2)] = true;
        }
    }
    seen
}

const MAX_ATTEMPTS: u64 = 32;

/// Builds the corpus. Clips with the lowest seed hashes form the validation split. A
/// split that lacks a silent, single-source or multi-source frame (where the config
/// allows one) is regenerated with fresh draws, up to 32 times.
pub fn generate(cfg: &CorpusConfig, seed: u64) -> Result<Corpus, ConfigError> {
    cfg.validate()?;
    let audio = AudioSpace::new(cfg, seed);
    let total = cfg.train_videos + cfg.val_videos;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| (splitmix64(seed ^ splitmix64(i as u64 ^ 0x5EED)), i));
    let mut val_idx: Vec<usize> = order[..cfg.val_videos].to_vec();
    let mut train_idx: Vec<usize> = order[cfg.val_videos..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let capable = cfg.max_sprites.saturating_sub(cfg.min_silent);
    let feasible = [true, cfg.max_sounding >= 1 && capable >= 1, cfg.max_sounding >= 2 && capable >= 2];
    let build = |indices: &[usize]| {
        let mut videos = Vec::new();
        for attempt in 0..MAX_ATTEMPTS {
            videos = indices.iter().map(|&i| generate_video(cfg, &audio, seed, i, attempt)).collect();
            let seen = coverage(&videos);
            if indices.is_empty() || (0..3).all(|k| seen[k] || !feasible[k]) {
                break;
            }
        }
        videos
    };
    Ok(Corpus {
        config: cfg.clone(),
        seed,
        train: build(&train_idx),
        val: build(&val_idx),
    })
}
