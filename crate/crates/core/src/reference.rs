//! Loop-based reference evaluations used as test oracles. Nothing here touches the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::nn::{Attention, FeedForward, LayerNorm};
use crate::params::ParamStore;
use crate::tape::LAYERNORM_EPS;
use crate::tensor::Tensor;

pub(crate) fn mm(a: &Tensor, w: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), w.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(i, p) * w.data()[p * m + j];
            }
            out[i * m + j] = s;
        }
    }
    Tensor::new([n, m], out).unwrap()
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    out
}

pub(crate) fn layernorm(store: &ParamStore, norm: &LayerNorm, x: &Tensor) -> Tensor {
    let (g, b) = (store.get(norm.gain), store.get(norm.bias));
    let d = x.cols();
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        for c in 0..d {
            out.data_mut()[r * d + c] = (row[c] - mean) / math::sqrt(var + LAYERNORM_EPS) * g.data()[c] + b.data()[c];
        }
    }
    out
}

pub(crate) fn attention(store: &ParamStore, attn: &Attention, q: &Tensor, kv: &Tensor) -> Tensor {
    let d = attn.dim;
    let qq = mm(q, store.get(attn.w_q));
    let kk = mm(kv, store.get(attn.w_k));
    let vv = mm(kv, store.get(attn.w_v));
    let mut ctx = Tensor::zeros([q.rows(), d]);
    for i in 0..q.rows() {
        let scores: Vec<f64> = (0..kv.rows())
            .map(|j| (0..d).map(|c| qq.at(i, c) * kk.at(j, c)).sum::<f64>() / math::sqrt(d as f64))
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| math::exp(s - m)).collect();
        let z: f64 = e.iter().sum();
        for j in 0..kv.rows() {
            for c in 0..d {
                ctx.data_mut()[i * d + c] += e[j] / z * vv.at(j, c);
            }
        }
    }
    mm(&ctx, store.get(attn.w_o))
}

pub(crate) fn ffn(store: &ParamStore, f: &FeedForward, x: &Tensor) -> Tensor {
    let h = mm(x, store.get(f.w_1)).map(|v| v.max(0.0));
    mm(&h, store.get(f.w_2))
}

pub(crate) fn rand_tensor<R: rand::Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}
