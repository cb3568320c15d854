//! Visible mask head: an MLP embedding of each global prototype correlated
//! with the frame features by a per-pixel dot product.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp, ParamStore};
use crate::protomodel::{FrameFeatures, PrototypeSet};

/// Per-prototype mask logits `[protos, frames, height, width]`.
#[derive(Debug, Clone, Copy)]
pub struct MaskLogits {
    pub values: Var,
    pub protos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl MaskLogits {
    /// Binary masks under `sigmoid(logit) > 0.5`, i.e. `logit > 0`.
    pub fn binarize(&self, g: &Graph) -> BinaryMasks {
        BinaryMasks {
            protos: self.protos,
            frames: self.frames,
            height: self.height,
            width: self.width,
            bits: g.value(self.values).data().iter().map(|v| *v > 0.0).collect(),
        }
    }
}

/// Binary masks with the same layout as [`MaskLogits`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMasks {
    pub protos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMasks {
    pub fn empty(protos: usize, frames: usize, height: usize, width: usize) -> Self {
        Self { protos, frames, height, width, bits: vec![false; protos * frames * height * width] }
    }

    pub fn frame(&self, proto: usize, t: usize) -> &[bool] {
        let hw = self.height * self.width;
        let start = (proto * self.frames + t) * hw;
        &self.bits[start..start + hw]
    }

    pub fn frame_mut(&mut self, proto: usize, t: usize) -> &mut [bool] {
        let hw = self.height * self.width;
        let start = (proto * self.frames + t) * hw;
        &mut self.bits[start..start + hw]
    }
}

/// `logits[i, t, y, x] = <embeddings[i], features[t, :, y, x]>`.
pub fn correlate(g: &mut Graph, embeddings: Var, features: &FrameFeatures) -> Result<MaskLogits> {
    let es = g.shape(embeddings).to_vec();
    if es.len() != 2 || es[1] != features.channels {
        return Err(Error::Shape(format!(
            "embeddings {es:?} incompatible with {} feature channels",
            features.channels
        )));
    }
    let keys = features.channel_major(g);
    let flat = g.matmul(embeddings, keys, false, false);
    let values = g.reshape(flat, &[es[0], features.frames, features.height, features.width]);
    Ok(MaskLogits {
        values,
        protos: es[0],
        frames: features.frames,
        height: features.height,
        width: features.width,
    })
}

pub struct VisibleHead {
    norm: LayerNorm,
    embed: Mlp,
}

impl VisibleHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, width: usize) -> Self {
        Self { norm: LayerNorm::new(store, "visible.norm", width), embed: Mlp::new(store, rng, "visible.embed", width, width, width) }
    }

    pub fn embed_visible(&self, g: &mut Graph, store: &ParamStore, protos: &PrototypeSet) -> Var {
        let n = self.norm.forward(g, store, protos.values);
        self.embed.forward(g, store, n)
    }

    pub fn predict_visible(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        protos: &PrototypeSet,
        features: &FrameFeatures,
    ) -> Result<MaskLogits> {
        let emb = self.embed_visible(g, store, protos);
        correlate(g, emb, features)
    }
}
