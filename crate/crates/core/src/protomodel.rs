//! Clip-level instance prototype modelling.
//!
//! A small convolutional encoder turns each frame into a stride-4 feature map,
//! and a learned-query transformer decoder attends over the features of the
//! whole clip to produce one prototype per query.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{xavier, Attention, Conv, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Spatial stride of the encoder.
pub const STRIDE: usize = 4;

/// Per-clip feature volume `[frames, channels, height, width]`.
#[derive(Debug, Clone, Copy)]
pub struct FrameFeatures {
    pub values: Var,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameFeatures {
    pub fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }

    /// Channel-major view `[channels, frames * height * width]`.
    pub fn channel_major(&self, g: &mut Graph) -> Var {
        let sw = g.swap_axes01(self.values);
        g.reshape(sw, &[self.channels, self.positions()])
    }
}

/// `count` prototype embeddings of width `width`.
#[derive(Debug, Clone, Copy)]
pub struct PrototypeSet {
    pub values: Var,
    pub count: usize,
    pub width: usize,
}

impl PrototypeSet {
    pub fn new(g: &Graph, values: Var) -> Self {
        let s = g.shape(values);
        assert_eq!(s.len(), 2, "prototype set must be 2-D");
        Self { values, count: s[0], width: s[1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtoModelConfig {
    pub n_protos: usize,
    pub embed_dim: usize,
    pub decoder_layers: usize,
}

impl Default for ProtoModelConfig {
    fn default() -> Self {
        Self { n_protos: 8, embed_dim: 32, decoder_layers: 2 }
    }
}

/// Fixed positional basis over the feature grid: `[height * width, 12]`.
fn positional_basis(height: usize, width: usize) -> Tensor {
    use std::f64::consts::PI;
    let mut data = Vec::with_capacity(height * width * POS_DIM);
    for y in 0..height {
        for x in 0..width {
            let u = 2.0 * (x as f64 + 0.5) / width as f64 - 1.0;
            let v = 2.0 * (y as f64 + 0.5) / height as f64 - 1.0;
            data.extend_from_slice(&[
                u,
                v,
                u * u,
                v * v,
                u * v,
                (PI * u).sin(),
                (PI * v).sin(),
                (PI * u).cos(),
                (PI * v).cos(),
                (2.0 * PI * u).sin(),
                (2.0 * PI * v).sin(),
                1.0,
            ]);
        }
    }
    Tensor::new(vec![height * width, POS_DIM], data)
}

const POS_DIM: usize = 12;

struct DecoderLayer {
    norm_cross: LayerNorm,
    cross: Attention,
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_ffn: LayerNorm,
    ffn: Mlp,
}

pub struct ProtoModel {
    cfg: ProtoModelConfig,
    in_height: usize,
    in_width: usize,
    convs: [Conv; 4],
    pos_proj: Linear,
    pos_basis: Tensor,
    queries: ParamId,
    layers: Vec<DecoderLayer>,
}

impl ProtoModel {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        cfg: &ProtoModelConfig,
        in_height: usize,
        in_width: usize,
    ) -> Result<Self> {
        if !in_height.is_multiple_of(STRIDE) || !in_width.is_multiple_of(STRIDE) {
            return Err(Error::Config(format!(
                "frame size {in_height}x{in_width} is not divisible by encoder stride {STRIDE}"
            )));
        }
        if cfg.n_protos == 0 || cfg.embed_dim == 0 {
            return Err(Error::Config("n_protos and embed_dim must be positive".into()));
        }
        let c = cfg.embed_dim;
        let c1 = (c / 2).max(4);
        let down = ConvGeom { kernel: 3, stride: 2, pad: 1 };
        let same = ConvGeom { kernel: 3, stride: 1, pad: 1 };
        let convs = [
            Conv::new(store, rng, "proto.encoder.0", 3, c1, down, true),
            Conv::new(store, rng, "proto.encoder.1", c1, c, down, true),
            Conv::new(store, rng, "proto.encoder.2", c, c, same, true),
            Conv::new(store, rng, "proto.encoder.3", c, c, same, true),
        ];
        let pos_proj = Linear::new(store, rng, "proto.pos_proj", POS_DIM, c, false);
        let queries = store.add("proto.queries", xavier(rng, &[cfg.n_protos, c], c, c));
        let layers = (0..cfg.decoder_layers)
            .map(|l| {
                let name = format!("proto.decoder.{l}");
                DecoderLayer {
                    norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), c),
                    cross: Attention::new(store, rng, &format!("{name}.cross"), c),
                    norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), c),
                    self_attn: Attention::new(store, rng, &format!("{name}.self"), c),
                    norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), c),
                    ffn: Mlp::new(store, rng, &format!("{name}.ffn"), c, 2 * c, c),
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            in_height,
            in_width,
            convs,
            pos_proj,
            pos_basis: positional_basis(in_height / STRIDE, in_width / STRIDE),
            queries,
            layers,
        })
    }

    pub fn config(&self) -> &ProtoModelConfig {
        &self.cfg
    }

    pub fn queries(&self) -> ParamId {
        self.queries
    }

    /// Per-frame encoding of `clip: [n_c, 3, H, W]` into stride-4 features
    /// plus a learned projection of a fixed positional basis.
    pub fn encode_frames(&self, g: &mut Graph, store: &ParamStore, clip: Var) -> Result<FrameFeatures> {
        let s = g.shape(clip).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.in_height || s[3] != self.in_width || s[0] == 0 {
            return Err(Error::Shape(format!(
                "clip must be [n>=1, 3, {}, {}], got {s:?}",
                self.in_height, self.in_width
            )));
        }
        let mut h = clip;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, store, h);
            if i + 1 < self.convs.len() {
                h = g.relu(h);
            }
        }
        let basis = g.constant(self.pos_basis.clone());
        let w = g.param(store, self.pos_proj.weight);
        // [c, hw] = W^T basis^T
        let pos = g.matmul(w, basis, true, true);
        let values = g.add_broadcast(h, pos);
        let out = g.shape(values).to_vec();
        Ok(FrameFeatures { values, frames: out[0], channels: out[1], height: out[2], width: out[3] })
    }

    /// Learned-query decoding of the clip features into `n_protos` prototypes.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, features: &FrameFeatures) -> PrototypeSet {
        let keys = features.channel_major(g);
        let scale = 1.0 / (self.cfg.embed_dim as f64).sqrt();
        let mut q = g.param(store, self.queries);
        for layer in &self.layers {
            let n = layer.norm_cross.forward(g, store, q);
            let a = layer.cross.forward(g, store, n, keys, true, scale, None);
            q = g.add(q, a);
            let n = layer.norm_self.forward(g, store, q);
            let a = layer.self_attn.forward(g, store, n, n, false, scale, None);
            q = g.add(q, a);
            let n = layer.norm_ffn.forward(g, store, q);
            let a = layer.ffn.forward(g, store, n);
            q = g.add(q, a);
        }
        PrototypeSet::new(g, q)
    }

    /// `(p^k, F^k)` for one clip.
    pub fn model_clip(&self, g: &mut Graph, store: &ParamStore, clip: Var) -> Result<(PrototypeSet, FrameFeatures)> {
        let features = self.encode_frames(g, store, clip)?;
        let protos = self.decode(g, store, &features);
        Ok((protos, features))
    }
}
