//! Binary mask volumes and their run-length encoding.
//!
//! A run-length code is a list of run lengths over the row-major pixels of one frame,
//! alternating between background and foreground and always starting with background
//! (so a mask whose first pixel is set begins with a zero-length run).

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RleError {
    #[error("runs cover {actual} pixels, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("zero-length run at position {index}")]
    EmptyRun { index: usize },
}

/// Run lengths of a binary mask.
pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in bits {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    if run > 0 || counts.is_empty() {
        counts.push(run);
    }
    counts
}

/// Strict inverse of [`rle_encode`]: only the first run may be empty and the runs must
/// cover exactly `len` pixels.
pub fn rle_decode(counts: &[u32], len: usize) -> Result<Vec<bool>, RleError> {
    let mut bits = Vec::with_capacity(len);
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 && i > 0 {
            return Err(RleError::EmptyRun { index: i });
        }
        if bits.len() + c as usize > len {
            let actual = counts.iter().map(|&c| c as usize).sum();
            return Err(RleError::Length { expected: len, actual });
        }
        bits.extend(core::iter::repeat(i % 2 == 1).take(c as usize));
    }
    if bits.len() != len {
        return Err(RleError::Length {
            expected: len,
            actual: bits.len(),
        });
    }
    Ok(bits)
}

/// `T x H x W` binary masks, frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    frames: usize,
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl MaskVolume {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        MaskVolume {
            frames,
            height,
            width,
            bits: vec![false; frames * height * width],
        }
    }

    /// Returns `None` when `bits` does not hold `frames * height * width` entries.
    pub fn from_bits(frames: usize, height: usize, width: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == frames * height * width).then_some(MaskVolume { frames, height, width, bits })
    }

    /// Binarizes probabilities at `>= 0.5`.
    pub fn from_probs(frames: usize, height: usize, width: usize, probs: &[f64]) -> Option<Self> {
        Self::from_bits(frames, height, width, probs.iter().map(|&p| p >= 0.5).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let p = self.pixels();
        &self.bits[t * p..(t + 1) * p]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [bool] {
        let p = self.pixels();
        &mut self.bits[t * p..(t + 1) * p]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn frame_area(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&b| b).count()
    }

    /// Frame `t` has at least one set pixel.
    pub fn present(&self, t: usize) -> bool {
        self.frame(t).iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &MaskVolume) -> bool {
        (self.frames, self.height, self.width) == (other.frames, other.height, other.width)
    }

    /// One run-length code per frame.
    pub fn to_rle(&self) -> Vec<Vec<u32>> {
        (0..self.frames).map(|t| rle_encode(self.frame(t))).collect()
    }

    pub fn from_rle(height: usize, width: usize, frames: &[Vec<u32>]) -> Result<Self, RleError> {
        let mut bits = Vec::with_capacity(frames.len() * height * width);
        for counts in frames {
            bits.extend(rle_decode(counts, height * width)?);
        }
        Ok(MaskVolume {
            frames: frames.len(),
            height,
            width,
            bits,
        })
    }

    /// 0.0/1.0 copy for losses.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// `(intersection, union)` pixel counts of two equally sized masks.
pub fn overlap(a: &[bool], b: &[bool]) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    (inter, union)
}

/// Intersection over union; two empty masks have IoU 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let (i, u) = overlap(a, b);
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}
