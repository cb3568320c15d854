//! Global prototype state carried across the clips of a video.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::nn::{xavier, Attention, ParamId, ParamStore};
use crate::protomodel::PrototypeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    /// Normalize the attention logits with a row softmax before mixing.
    pub softmax: bool,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self { softmax: true }
    }
}

/// Learned initial `p^G` and the cross-attention that folds each clip's
/// prototypes into it.
pub struct ProtoUpdate {
    cfg: UpdateConfig,
    init: ParamId,
    attn: Attention,
}

impl ProtoUpdate {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &UpdateConfig, n_protos: usize, width: usize) -> Self {
        let init = store.add("update.init", xavier(rng, &[n_protos, width], width, width));
        let attn = Attention::new(store, rng, "update.cross", width);
        Self { cfg: cfg.clone(), init, attn }
    }

    pub fn init_param(&self) -> ParamId {
        self.init
    }

    pub fn value_projection(&self) -> ParamId {
        self.attn.value
    }

    pub fn init_global(&self, g: &mut Graph, store: &ParamStore) -> PrototypeSet {
        let v = g.param(store, self.init);
        PrototypeSet::new(g, v)
    }

    /// `p^G + A(p^G W_Q (p^k W_K)^T / sqrt(C)) p^k W_V` where `A` is a row
    /// softmax or the identity.
    pub fn update_global(&self, g: &mut Graph, store: &ParamStore, global: &PrototypeSet, clip: &PrototypeSet) -> PrototypeSet {
        let (z, v) = self.attn.scores(g, store, global.values, clip.values, false);
        let z = g.scale(z, 1.0 / (g.shape(global.values)[1] as f64).sqrt());
        let w = if self.cfg.softmax { g.softmax_rows(z, None) } else { z };
        let mixed = g.matmul(w, v, false, false);
        let out = g.add(global.values, mixed);
        PrototypeSet::new(g, out)
    }
}
