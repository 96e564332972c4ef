//! Parameterized layers shared by the localizer and the tracker.

use alloc::format;
use alloc::vec;

use rand::Rng;

use crate::math;
use crate::params::{Binding, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Uniform init bound `1 / sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / math::sqrt(fan_in as f64)
}

/// `x W (+ b)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = init_bound(fan_in);
        let weight = store.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng);
        let bias = bias.then(|| store.insert(format!("{name}.bias"), Tensor::zeros([fan_out])));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, b[self.weight])?;
        match self.bias {
            Some(bias) => tape.add_row(y, b[bias]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.insert(format!("{name}.gain"), Tensor::full([dim], 1.0)),
            bias: store.insert(format!("{name}.bias"), Tensor::zeros([dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var, TensorError> {
        tape.layernorm(x, b[self.gain], b[self.bias])
    }
}

/// Single-head scaled dot-product attention with output projection.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub dim: usize,
}

/// Attention result plus the `[N x M]` weight matrix for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Var,
}

impl Attention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let bound = init_bound(dim);
        let mut mk = |w: &str| store.uniform(format!("{name}.{w}"), &[dim, dim], bound, rng);
        Attention {
            w_q: mk("w_q"),
            w_k: mk("w_k"),
            w_v: mk("w_v"),
            w_o: mk("w_o"),
            dim,
        }
    }

    /// `softmax(q W_Q (kv W_K)^T / sqrt(D)) (kv W_V) W_O`.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, queries: Var, kv: Var) -> Result<AttentionOutput, TensorError> {
        let q = tape.matmul(queries, b[self.w_q])?;
        let k = tape.matmul(kv, b[self.w_k])?;
        let v = tape.matmul(kv, b[self.w_v])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, init_bound(self.dim));
        let weights = tape.softmax_last(scores);
        let ctx = tape.matmul(weights, v)?;
        let out = tape.matmul(ctx, b[self.w_o])?;
        Ok(AttentionOutput { out, weights })
    }
}

/// `relu(x W_1) W_2`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w_1: ParamId,
    pub w_2: ParamId,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        FeedForward {
            w_1: store.uniform(format!("{name}.w_1"), &[dim, hidden], init_bound(dim), rng),
            w_2: store.uniform(format!("{name}.w_2"), &[hidden, dim], init_bound(hidden), rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var, TensorError> {
        let h = tape.matmul(x, b[self.w_1])?;
        let h = tape.relu(h);
        tape.matmul(h, b[self.w_2])
    }
}

/// Two-layer perceptron with biases: `relu(x W_1 + b_1) W_2 + b_2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.1"), dim, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var, TensorError> {
        let h = self.hidden.forward(tape, b, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, b, h)
    }
}

/// Residual sublayer `LayerNorm(x + f(x))`.
pub fn residual_norm(tape: &mut Tape, b: &Binding, norm: &LayerNorm, x: Var, update: Var) -> Result<Var, TensorError> {
    let s = tape.add(x, update)?;
    norm.forward(tape, b, s)
}

/// A tensor of ones shaped like `v`, recorded as a constant.
pub fn ones_like(tape: &mut Tape, v: Var) -> Var {
    let shape = tape.shape(v).to_vec();
    tape.constant(Tensor::full(shape, 1.0))
}

/// `[n x 1]` column of ones; `ones_col(n) * row` broadcasts a row to `n` rows.
pub fn ones_col(n: usize) -> Tensor {
    Tensor::new([n, 1], vec![1.0; n]).expect("sized")
}
