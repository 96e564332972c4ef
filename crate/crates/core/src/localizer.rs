//! Frame-level object localizer.
//!
//! A frame is embedded per pixel into a two-scale feature pyramid, the audio-conditioned
//! query stream (frame queries plus count token) is decoded against it, and three heads
//! read the result: a dot-product mask head, a class head with a trailing "no object"
//! logit, and the counting head fed only by the count token.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::fusion::QueryFusion;
use crate::model::{ModelConfig, ModelError};
use crate::nn::{residual_norm, Attention, FeedForward, LayerNorm, Linear, Mlp};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::TensorError;

/// Multi-scale features of one frame. `scales[0]` is full resolution and doubles as the
/// final-resolution map used by the mask heads.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    /// `[H_s * W_s x D]` per scale, each half the spatial size of the previous one.
    pub scales: Vec<Var>,
    /// `[H * W x D]`
    pub final_map: Var,
}

/// Per-pixel linear embedding plus a learned positional table.
#[derive(Debug, Clone, Copy)]
pub struct FrameEmbedding {
    pub proj: Linear,
    pub pos: ParamId,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub scales: usize,
}

impl FrameEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let pixels = cfg.height * cfg.width;
        FrameEmbedding {
            proj: Linear::new(store, "embed.proj", cfg.channels, cfg.d_model, true, rng),
            pos: store.uniform("embed.pos", &[pixels, cfg.d_model], crate::nn::init_bound(cfg.d_model), rng),
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
            scales: cfg.scales,
        }
    }

    /// `frame` is `[H * W x C]` (row-major pixels).
    pub fn forward(&self, tape: &mut Tape, b: &Binding, frame: Var) -> Result<FrameFeatures, ModelError> {
        let expected = [self.height * self.width, self.channels];
        if tape.shape(frame) != expected {
            return Err(ModelError::InputShape {
                what: "frame",
                expected: expected.to_vec(),
                actual: tape.shape(frame).to_vec(),
            });
        }
        let x = self.proj.forward(tape, b, frame)?;
        let x = tape.add(x, b[self.pos])?;
        let mut scales = Vec::with_capacity(self.scales);
        scales.push(x);
        let (mut h, mut w) = (self.height, self.width);
        for _ in 1..self.scales {
            let prev = *scales.last().expect("non-empty");
            scales.push(tape.avg_pool2x2(prev, h, w)?);
            h /= 2;
            w /= 2;
        }
        Ok(FrameFeatures { scales, final_map: x })
    }
}

/// Cross-attention to one feature scale, then query self-attention, then FFN.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLayer {
    pub cross: Attention,
    pub norm_cross: LayerNorm,
    pub self_attn: Attention,
    pub norm_self: LayerNorm,
    pub ffn: FeedForward,
    pub norm_ffn: LayerNorm,
}

impl DecoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        DecoderLayer {
            cross: Attention::new(store, &format!("{name}.cross"), dim, rng),
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), dim),
            self_attn: Attention::new(store, &format!("{name}.self"), dim, rng),
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 4 * dim, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var, kv: Var) -> Result<Var, TensorError> {
        let c = self.cross.forward(tape, b, x, kv)?;
        let h = residual_norm(tape, b, &self.norm_cross, x, c.out)?;
        let s = self.self_attn.forward(tape, b, h, h)?;
        let h = residual_norm(tape, b, &self.norm_self, h, s.out)?;
        let f = self.ffn.forward(tape, b, h)?;
        residual_norm(tape, b, &self.norm_ffn, h, f)
    }
}

/// Segmentation decoder; layer `l` attends to scale `l mod n_scales`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, depth: usize, rng: &mut R) -> Self {
        Decoder {
            layers: (0..depth)
                .map(|i| DecoderLayer::new(store, &format!("{name}.{i}"), dim, rng))
                .collect(),
        }
    }

    /// `stream` is `[(N_f + 1) x D]` with the count token last; the output has the same shape.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, stream: Var, feats: &FrameFeatures) -> Result<Var, TensorError> {
        let mut x = stream;
        for (l, layer) in self.layers.iter().enumerate() {
            let kv = feats.scales[l % feats.scales.len()];
            x = layer.forward(tape, b, x, kv)?;
        }
        Ok(x)
    }
}

/// Mask logits `MLP(q_i) . f_p` for every query `i` and pixel `p`.
#[derive(Debug, Clone, Copy)]
pub struct MaskHead {
    pub mlp: Mlp,
}

impl MaskHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        MaskHead {
            mlp: Mlp::new(store, name, dim, rng),
        }
    }

    pub fn embed(&self, tape: &mut Tape, b: &Binding, queries: Var) -> Result<Var, TensorError> {
        self.mlp.forward(tape, b, queries)
    }

    /// `[N x D]` queries against a `[P x D]` pixel map gives `[N x P]` logits.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, queries: Var, pixels: Var) -> Result<Var, TensorError> {
        let e = self.embed(tape, b, queries)?;
        mask_logits(tape, e, pixels)
    }
}

/// Dot product of every embedding row with every pixel row.
pub fn mask_logits(tape: &mut Tape, embeddings: Var, pixels: Var) -> Result<Var, TensorError> {
    let pt = tape.transpose(pixels)?;
    tape.matmul(embeddings, pt)
}

/// Everything the localizer emits for one frame.
#[derive(Debug, Clone)]
pub struct LocalizerOutput {
    /// `[N_f x D]` decoded frame queries.
    pub frame_queries: Var,
    /// `[1 x D]` decoded count token.
    pub count_token: Var,
    /// `[N_f x H*W]`
    pub mask_logits: Var,
    /// `[N_f x (K + 1)]`, last column is "no object".
    pub class_logits: Var,
    /// `[1 x n]` raw counting logits (`n = K_max` for ordinal counting).
    pub count_logits: Var,
    pub features: FrameFeatures,
}

#[derive(Debug, Clone)]
pub struct Localizer {
    pub queries: ParamId,
    pub count_token: ParamId,
    pub embed: FrameEmbedding,
    pub fusion: QueryFusion,
    pub decoder: Decoder,
    pub mask_head: MaskHead,
    pub class_head: Linear,
    pub count_head: Linear,
    pub n_queries: usize,
}

impl Localizer {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let bound = crate::nn::init_bound(d);
        let queries = store.uniform("localizer.queries", &[cfg.frame_queries, d], bound, rng);
        let count_token = store.uniform("localizer.count_token", &[1, d], bound, rng);
        let embed = FrameEmbedding::new(store, cfg, rng);
        let fusion = match cfg.fusion {
            crate::model::FusionKind::AudioCentric => {
                QueryFusion::AudioCentric(crate::fusion::Acqg::new(store, "acqg", d, cfg.acqg_layers, rng))
            }
            crate::model::FusionKind::Additive => QueryFusion::Additive,
        };
        let decoder = Decoder::new(store, "decoder", d, cfg.decoder_layers, rng);
        let mask_head = MaskHead::new(store, "localizer.mask_head", d, rng);
        let class_head = Linear::new(store, "localizer.class_head", d, cfg.classes + 1, true, rng);
        let count_head = Linear::new(store, "localizer.count_head", d, cfg.count_outputs(), true, rng);
        Localizer {
            queries,
            count_token,
            embed,
            fusion,
            decoder,
            mask_head,
            class_head,
            count_head,
            n_queries: cfg.frame_queries,
        }
    }

    /// Runs embed, fusion, decoding and heads on one frame.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, frame: Var, audio: Var) -> Result<LocalizerOutput, ModelError> {
        let features = self.embed.forward(tape, b, frame)?;
        let stream = tape.concat_rows(&[b[self.queries], b[self.count_token]])?;
        let fused = self.fusion.apply(tape, b, stream, audio)?;
        let decoded = self.decoder.forward(tape, b, fused, &features)?;
        let frame_queries = tape.slice_rows(decoded, 0, self.n_queries)?;
        let count_token = tape.slice_rows(decoded, self.n_queries, 1)?;
        let mask_logits = self.mask_head.forward(tape, b, frame_queries, features.final_map)?;
        let class_logits = self.class_head.forward(tape, b, frame_queries)?;
        let count_logits = self.count_head.forward(tape, b, count_token)?;
        Ok(LocalizerOutput {
            frame_queries,
            count_token,
            mask_logits,
            class_logits,
            count_logits,
            features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionKind, ModelConfig};
    use crate::reference::{self, rand_tensor};
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            frame_queries: 2,
            video_queries: 2,
            classes: 2,
            height: 4,
            width: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn constant_zero_frame_embeds_to_bias() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let emb = FrameEmbedding::new(&mut store, &cfg, &mut rng);
        *store.get_mut(emb.pos) = Tensor::zeros([16, 4]);
        *store.get_mut(emb.proj.bias.unwrap()) = Tensor::new([4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let frame = tape.constant(Tensor::zeros([16, 3]));
        let f = emb.forward(&mut tape, &b, frame).unwrap();
        for r in 0..16 {
            assert_eq!(tape.value(f.final_map).row(r), &[0.1, 0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn one_pixel_change_is_local_and_pooling_is_mean_of_children() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let emb = FrameEmbedding::new(&mut store, &cfg, &mut rng);
        let f1 = rand_tensor(&[16, 3], &mut rng);
        let mut f2 = f1.clone();
        f2.data_mut()[5 * 3 + 1] += 0.7;
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let v1 = tape.constant(f1);
        let v2 = tape.constant(f2);
        let a = emb.forward(&mut tape, &b, v1).unwrap();
        let c = emb.forward(&mut tape, &b, v2).unwrap();
        let (ma, mc) = (tape.value(a.final_map), tape.value(c.final_map));
        for r in 0..16 {
            let differs = ma.row(r) != mc.row(r);
            assert_eq!(differs, r == 5, "row {r}");
        }
        let fine = tape.value(a.scales[0]);
        let coarse = tape.value(a.scales[1]);
        assert_eq!(coarse.shape(), &[4, 4]);
        for py in 0..2 {
            for px in 0..2 {
                for k in 0..4 {
                    let kids = [(2 * py) * 4 + 2 * px, (2 * py) * 4 + 2 * px + 1, (2 * py + 1) * 4 + 2 * px, (2 * py + 1) * 4 + 2 * px + 1];
                    let mean = kids.iter().map(|&p| fine.at(p, k)).sum::<f64>() / 4.0;
                    assert!((coarse.at(py * 2 + px, k) - mean).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn embed_rejects_wrong_frame_size() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let emb = FrameEmbedding::new(&mut store, &cfg, &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let frame = tape.constant(Tensor::zeros([15, 3]));
        assert!(matches!(emb.forward(&mut tape, &b, frame), Err(ModelError::InputShape { .. })));
    }

    #[test]
    fn mask_head_dot_products() {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [0.5, -1.0]]));
        let px = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [0.0, 1.0], [3.0, 0.0], [-1.0, -1.0]]));
        let l = mask_logits(&mut tape, e, px).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0, 0.0, 3.0, -1.0, -1.5, -1.0, 1.5, 0.5]);

        let ortho = tape.constant(Tensor::from_rows(&[[0.0, 1.0]]));
        let px = tape.constant(Tensor::from_rows(&[[1.0, 0.0], [2.0, 0.0]]));
        let l = mask_logits(&mut tape, ortho, px).unwrap();
        let p = tape.sigmoid(l);
        assert!(tape.value(p).data().iter().all(|&v| v == 0.5));

        let unit = [0.6, 0.8];
        let q = tape.constant(Tensor::from_rows(&[unit]));
        let px = tape.constant(Tensor::from_rows(&[[0.8, -0.6], unit, [-0.6, -0.8], [0.0, 1.0]]));
        let l = mask_logits(&mut tape, q, px).unwrap();
        let v = tape.value(l).data();
        let best = (0..4).max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap()).unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn mask_logits_are_bilinear_in_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = rand_tensor(&[2, 4], &mut rng);
        let px = rand_tensor(&[6, 4], &mut rng);
        let mut tape = Tape::new();
        let ev = tape.constant(e);
        let pv = tape.constant(px);
        let base = mask_logits(&mut tape, ev, pv).unwrap();
        let scaled = tape.scale(ev, 2.0);
        let l2 = mask_logits(&mut tape, scaled, pv).unwrap();
        for (a, b) in tape.value(base).data().iter().zip(tape.value(l2).data()) {
            assert_eq!(a * 2.0, *b);
        }
    }

    #[test]
    fn heads_are_plain_linear_maps() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Linear::new(&mut store, "count", 4, 2, true, &mut rng);
        let w = rand_tensor(&[4, 2], &mut rng);
        let bias = Tensor::new([2], vec![0.25, -0.5]).unwrap();
        *store.get_mut(head.weight) = w.clone();
        *store.get_mut(head.bias.unwrap()) = bias.clone();
        let token = rand_tensor(&[1, 4], &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let t = tape.constant(token.clone());
        let out = head.forward(&mut tape, &b, t).unwrap();
        for j in 0..2 {
            let direct: f64 = (0..4).map(|i| token.data()[i] * w.at(i, j)).sum::<f64>() + bias.data()[j];
            assert!((tape.value(out).data()[j] - direct).abs() < 1e-15);
        }

        *store.get_mut(head.bias.unwrap()) = Tensor::zeros([2]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let z = tape.constant(Tensor::zeros([1, 4]));
        let out = head.forward(&mut tape, &b, z).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0]);

        let mut store = ParamStore::new();
        let head = Linear::new(&mut store, "count", 2, 2, true, &mut rng);
        *store.get_mut(head.weight) = Tensor::eye(2);
        *store.get_mut(head.bias.unwrap()) = Tensor::zeros([2]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let basis = tape.constant(Tensor::from_rows(&[[0.0, 3.0]]));
        let out = head.forward(&mut tape, &b, basis).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 3.0]);
    }

    #[test]
    fn decoder_output_shape_is_independent_of_resolution() {
        for (h, w) in [(4, 4), (8, 4)] {
            let cfg = ModelConfig {
                height: h,
                width: w,
                ..tiny_cfg()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut store = ParamStore::new();
            let loc = Localizer::new(&mut store, &cfg, &mut rng);
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let frame = tape.constant(rand_tensor(&[h * w, 3], &mut rng));
            let audio = tape.constant(rand_tensor(&[1, 4], &mut rng));
            let out = loc.forward(&mut tape, &b, frame, audio).unwrap();
            assert_eq!(tape.shape(out.frame_queries), &[2, 4]);
            assert_eq!(tape.shape(out.count_token), &[1, 4]);
            assert_eq!(tape.shape(out.mask_logits), &[2, h * w]);
            assert_eq!(tape.shape(out.class_logits), &[2, 3]);
            assert_eq!(tape.shape(out.count_logits), &[1, 2]);
        }
    }

    #[test]
    fn severed_visual_path_passes_queries_through() {
        let cfg = ModelConfig {
            decoder_layers: 1,
            fusion: FusionKind::Additive,
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, "decoder", 4, 1, &mut rng);
        *store.get_mut(dec.layers[0].cross.w_v) = Tensor::zeros([4, 4]);
        let stream = rand_tensor(&[3, 4], &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let s = tape.constant(stream.clone());
        let zero = tape.constant(Tensor::zeros([16, 4]));
        let feats = FrameFeatures {
            scales: vec![zero],
            final_map: zero,
        };
        let out = dec.forward(&mut tape, &b, s, &feats).unwrap();

        // Same layer with the cross-attention sublayer removed.
        let layer = &dec.layers[0];
        let h = tape.layernorm(s, b[layer.norm_cross.gain], b[layer.norm_cross.bias]).unwrap();
        let sa = layer.self_attn.forward(&mut tape, &b, h, h).unwrap();
        let h = residual_norm(&mut tape, &b, &layer.norm_self, h, sa.out).unwrap();
        let f = layer.ffn.forward(&mut tape, &b, h).unwrap();
        let expect = residual_norm(&mut tape, &b, &layer.norm_ffn, h, f).unwrap();
        assert!(tape.value(out).max_abs_diff(tape.value(expect)) < 1e-15);
        let _ = cfg;
    }

    #[test]
    fn one_layer_decoder_matches_reference_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, "decoder", 4, 1, &mut rng);
        let l = dec.layers[0];
        for norm in [l.norm_cross, l.norm_self, l.norm_ffn] {
            *store.get_mut(norm.gain) = rand_tensor(&[4], &mut rng);
            *store.get_mut(norm.bias) = rand_tensor(&[4], &mut rng);
        }
        let stream = rand_tensor(&[2, 4], &mut rng);
        let pixels = rand_tensor(&[4, 4], &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let s = tape.constant(stream.clone());
        let p = tape.constant(pixels.clone());
        let feats = FrameFeatures {
            scales: vec![p],
            final_map: p,
        };
        let out = dec.forward(&mut tape, &b, s, &feats).unwrap();

        let c = reference::attention(&store, &l.cross, &stream, &pixels);
        let h = reference::layernorm(&store, &l.norm_cross, &reference::add(&stream, &c));
        let sa = reference::attention(&store, &l.self_attn, &h, &h);
        let h = reference::layernorm(&store, &l.norm_self, &reference::add(&h, &sa));
        let f = reference::ffn(&store, &l.ffn, &h);
        let expect = reference::layernorm(&store, &l.norm_ffn, &reference::add(&h, &f));
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn localizer_is_query_permutation_equivariant() {
        let cfg = ModelConfig {
            frame_queries: 3,
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let loc = Localizer::new(&mut store, &cfg, &mut rng);
        let frame = rand_tensor(&[16, 3], &mut rng);
        let audio = rand_tensor(&[1, 4], &mut rng);
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let f = tape.constant(frame.clone());
            let a = tape.constant(audio.clone());
            let o = loc.forward(&mut tape, &b, f, a).unwrap();
            (
                tape.value(o.mask_logits).clone(),
                tape.value(o.class_logits).clone(),
                tape.value(o.count_logits).clone(),
            )
        };
        let (m0, c0, n0) = run(&store);
        let perm = [1usize, 2, 0];
        let q = store.get(loc.queries).clone();
        let permuted = Tensor::from_rows(&perm.iter().map(|&p| q.row(p).to_vec()).collect::<Vec<_>>());
        let mut store2 = store.clone();
        *store2.get_mut(loc.queries) = permuted;
        let (m1, c1, n1) = run(&store2);
        for (i, &p) in perm.iter().enumerate() {
            for (x, y) in m1.row(i).iter().zip(m0.row(p)) {
                assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in c1.row(i).iter().zip(c0.row(p)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        assert!(n1.max_abs_diff(&n0) < 1e-10);
    }
}
