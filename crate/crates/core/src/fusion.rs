//! Audio conditioning of the learnable frame queries.
//!
//! Two variants are provided so that they can be trained side by side:
//!
//! * [`additive_fuse`] broadcasts the single per-frame audio vector onto every query
//!   (`q_i + f_t`), so all queries receive the same audio signal.
//! * [`Acqg`] (audio-centric query generator) runs a stack of cross-attention layers in
//!   which the queries attend over the audio tokens. With more than one audio token each
//!   query can weight the tokens differently.
//!
//! The count token is carried as the last row of the query stream and is conditioned the
//! same way as the frame queries.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::ModelError;
use crate::nn::{residual_norm, Attention, FeedForward, LayerNorm};
use crate::params::{Binding, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Per-frame audio tokens `[M x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeature {
    tokens: Tensor,
}

impl AudioFeature {
    pub fn new(tokens: Tensor) -> Result<Self, TensorError> {
        if tokens.rank() != 2 || tokens.rows() == 0 {
            return Err(TensorError::Rank {
                op: "AudioFeature",
                expected: 2,
                shape: tokens.shape().to_vec(),
            });
        }
        if !tokens.is_finite() {
            return Err(TensorError::NonFinite { what: "audio feature" });
        }
        Ok(AudioFeature { tokens })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Frame queries and count token as they sit on a tape.
#[derive(Debug, Clone, Copy)]
pub struct QuerySet {
    /// `[N_f x D]`
    pub queries: Var,
    /// `[1 x D]`
    pub count_token: Var,
}

impl QuerySet {
    /// `[(N_f + 1) x D]` stream with the count token as the final row.
    pub fn stream(&self, tape: &mut Tape) -> Result<Var, TensorError> {
        tape.concat_rows(&[self.queries, self.count_token])
    }
}

/// Uniform additive fusion: row `i` of the output is `q_i + f`.
///
/// Only defined for a single audio token.
pub fn additive_fuse(tape: &mut Tape, queries: Var, audio: Var) -> Result<Var, ModelError> {
    let tokens = tape.value(audio).rows();
    if tape.value(audio).rank() == 2 && tokens != 1 {
        return Err(ModelError::AdditiveNeedsSingleToken { tokens });
    }
    Ok(tape.add_row(queries, audio)?)
}

/// Cross-attention block: `h = LN(q + Attn(q, kv))`, `out = LN(h + FFN(h))`.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionLayer {
    pub attn: Attention,
    pub norm_attn: LayerNorm,
    pub ffn: FeedForward,
    pub norm_ffn: LayerNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionOutput {
    pub out: Var,
    /// Residual output before the feed-forward sublayer.
    pub hidden: Var,
    /// `[N x M]` attention weights.
    pub weights: Var,
}

impl CrossAttentionLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        CrossAttentionLayer {
            attn: Attention::new(store, &format!("{name}.attn"), dim, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 4 * dim, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, queries: Var, kv: Var) -> Result<CrossAttentionOutput, TensorError> {
        let a = self.attn.forward(tape, b, queries, kv)?;
        let hidden = residual_norm(tape, b, &self.norm_attn, queries, a.out)?;
        let f = self.ffn.forward(tape, b, hidden)?;
        let out = residual_norm(tape, b, &self.norm_ffn, hidden, f)?;
        Ok(CrossAttentionOutput {
            out,
            hidden,
            weights: a.weights,
        })
    }
}

/// Audio-centric query generator: queries attend over audio tokens in every layer.
#[derive(Debug, Clone)]
pub struct Acqg {
    pub layers: Vec<CrossAttentionLayer>,
}

impl Acqg {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|i| CrossAttentionLayer::new(store, &format!("{name}.{i}"), dim, rng))
            .collect();
        Acqg { layers }
    }

    /// Applies the layers in order, with `audio` as key and value in each.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, stream: Var, audio: Var) -> Result<Var, TensorError> {
        let mut x = stream;
        for layer in &self.layers {
            x = layer.forward(tape, b, x, audio)?.out;
        }
        Ok(x)
    }
}

/// The fusion variant used by a model.
#[derive(Debug, Clone)]
pub enum QueryFusion {
    Additive,
    AudioCentric(Acqg),
}

impl QueryFusion {
    pub fn apply(&self, tape: &mut Tape, b: &Binding, stream: Var, audio: Var) -> Result<Var, ModelError> {
        match self {
            QueryFusion::Additive => additive_fuse(tape, stream, audio),
            QueryFusion::AudioCentric(acqg) => Ok(acqg.forward(tape, b, stream, audio)?),
        }
    }
}
