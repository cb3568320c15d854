//! Spatiotemporal-prior amodal mask head.
//!
//! Per clip:
//!
//! 1. A stack of 3x3 stride-1 convolutions turns the frame features into an
//!    attention feature `O` (output of the first half of the stack) and an
//!    amodal mask feature `E` (output of the full stack).
//! 2. For each of `L` decoder layers the current prototypes read out amodal
//!    masks against `E`; the union over the clip of the visible masks (VSPM)
//!    and of those amodal masks (ASPM) becomes an additive `{0, -inf}` prior
//!    on the attention keys; the prototypes cross-attend to `O` under that
//!    prior, then self-attend.
//! 3. A final readout with the decoded prototypes gives the amodal masks.
//!
//! The prior covers one `height x width` grid and is replicated across the
//! clip's frames, since the keys span every frame of the clip. A prototype
//! whose prior is empty attends without restriction for that layer.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Graph};
use crate::error::{Error, Result};
use crate::nn::{Attention, Conv, LayerNorm, Mlp, ParamStore};
use crate::protomodel::{FrameFeatures, PrototypeSet};
use crate::visible_head::{correlate, BinaryMasks, MaskLogits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamhConfig {
    /// Decoder layers `L`; `0` removes the prior-masked decoding entirely.
    pub layers: usize,
    /// Convolutions in the amodal feature extractor; must be even.
    pub conv_layers: usize,
    pub use_vspm: bool,
    pub use_aspm: bool,
    /// Build the VSPM from ground-truth visible masks during training.
    pub teacher_force_vspm: bool,
    /// Also supervise the amodal readout of every decoder layer.
    pub aux_loss: bool,
}

impl Default for SamhConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            conv_layers: 4,
            use_vspm: true,
            use_aspm: true,
            teacher_force_vspm: false,
            aux_loss: false,
        }
    }
}

impl SamhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_layers < 2 || !self.conv_layers.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "samh.conv_layers must be an even number >= 2, got {}",
                self.conv_layers
            )));
        }
        Ok(())
    }
}

/// Amodal mask feature `E` and amodal attention feature `O`.
#[derive(Debug, Clone, Copy)]
pub struct AmodalFeatures {
    pub mask: FrameFeatures,
    pub attention: FrameFeatures,
}

/// Additive attention prior `[protos, height, width]` with entries in
/// `{0, -inf}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMask {
    pub protos: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PriorMask {
    pub fn row(&self, proto: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.values[proto * hw..(proto + 1) * hw]
    }

    /// Whether the prior of `proto` excludes every position.
    pub fn is_empty_row(&self, proto: usize) -> bool {
        self.row(proto).iter().all(|v| *v == f64::NEG_INFINITY)
    }

    /// Attention bias over `frames * height * width` keys with the prior
    /// replicated per frame. Empty rows are replaced by zeros; the second
    /// value counts them.
    pub fn attention_bias(&self, frames: usize) -> (Vec<f64>, usize) {
        let hw = self.height * self.width;
        let mut bias = Vec::with_capacity(self.protos * frames * hw);
        let mut fallbacks = 0;
        for p in 0..self.protos {
            if self.is_empty_row(p) {
                fallbacks += 1;
                bias.extend(std::iter::repeat_n(0.0, frames * hw));
            } else {
                for _ in 0..frames {
                    bias.extend_from_slice(self.row(p));
                }
            }
        }
        (bias, fallbacks)
    }
}

/// Union over the clip of the selected binary masks, mapped to `0` inside
/// and `-inf` outside. With both priors disabled every entry is `0`.
pub fn build_prior_mask(visible: &BinaryMasks, amodal: &BinaryMasks, use_vspm: bool, use_aspm: bool) -> PriorMask {
    assert_eq!(
        (visible.protos, visible.frames, visible.height, visible.width),
        (amodal.protos, amodal.frames, amodal.height, amodal.width),
        "visible and amodal masks must share a layout"
    );
    let hw = visible.height * visible.width;
    let mut values = vec![0.0; visible.protos * hw];
    if use_vspm || use_aspm {
        for p in 0..visible.protos {
            for i in 0..hw {
                let covered = (0..visible.frames).any(|t| {
                    (use_vspm && visible.frame(p, t)[i]) || (use_aspm && amodal.frame(p, t)[i])
                });
                values[p * hw + i] = if covered { 0.0 } else { f64::NEG_INFINITY };
            }
        }
    }
    PriorMask { protos: visible.protos, height: visible.height, width: visible.width, values }
}

/// `p_prev + softmax(T + Q K^T / sqrt(C)) V` with `Q = p_prev W_Q`,
/// `K = O W_K`, `V = O W_V`. Returns the updated prototypes, the attention weights, and
/// the number of rows that fell back to unrestricted attention.
pub fn st_prior_masked_attention(
    g: &mut Graph,
    store: &ParamStore,
    attn: &Attention,
    prev: &PrototypeSet,
    attention_feature: &FrameFeatures,
    prior: &PriorMask,
) -> (PrototypeSet, crate::autograd::Var, usize) {
    let keys = attention_feature.channel_major(g);
    let (scores, v) = attn.scores(g, store, prev.values, keys, true);
    let scores = g.scale(scores, 1.0 / (attention_feature.channels as f64).sqrt());
    let (bias, fallbacks) = prior.attention_bias(attention_feature.frames);
    let weights = g.softmax_rows(scores, Some(&bias));
    let mixed = g.matmul(weights, v, false, false);
    let out = g.add(mixed, prev.values);
    (PrototypeSet::new(g, out), weights, fallbacks)
}

pub struct SamhOutput {
    pub amodal: MaskLogits,
    pub prototypes: PrototypeSet,
    /// Amodal readout at the start of every decoder layer.
    pub layer_amodal: Vec<MaskLogits>,
    /// Attention weights of every prior-masked attention call.
    pub attention_weights: Vec<crate::autograd::Var>,
    pub priors: Vec<PriorMask>,
    pub fallback_rows: usize,
}

struct SamhLayer {
    masked: Attention,
    self_norm: LayerNorm,
    self_attn: Attention,
}

pub struct Samh {
    cfg: SamhConfig,
    convs: Vec<Conv>,
    beta_norm: LayerNorm,
    beta: Mlp,
    layers: Vec<SamhLayer>,
}

impl Samh {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &SamhConfig, width: usize) -> Result<Self> {
        cfg.validate()?;
        let geom = ConvGeom { kernel: 3, stride: 1, pad: 1 };
        let convs = (0..cfg.conv_layers)
            .map(|i| Conv::new(store, rng, &format!("samh.extract.{i}"), width, width, geom, true))
            .collect();
        let beta_norm = LayerNorm::new(store, "samh.beta_norm", width);
        let beta = Mlp::new(store, rng, "samh.beta", width, width, width);
        let layers = (0..cfg.layers)
            .map(|l| SamhLayer {
                masked: Attention::new(store, rng, &format!("samh.layer.{l}.masked"), width),
                self_norm: LayerNorm::new(store, &format!("samh.layer.{l}.self_norm"), width),
                self_attn: Attention::new(store, rng, &format!("samh.layer.{l}.self"), width),
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), convs, beta_norm, beta, layers })
    }

    pub fn config(&self) -> &SamhConfig {
        &self.cfg
    }

    pub fn masked_attention(&self, layer: usize) -> &Attention {
        &self.layers[layer].masked
    }

    pub fn amodal_feature_extraction(&self, g: &mut Graph, store: &ParamStore, f: &FrameFeatures) -> AmodalFeatures {
        let half = self.convs.len() / 2;
        let mut h = f.values;
        let mut attention = None;
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = conv.forward(g, store, h);
            if i + 1 == half {
                attention = Some(h);
            }
        }
        let wrap = |values| FrameFeatures { values, ..*f };
        AmodalFeatures { mask: wrap(h), attention: wrap(attention.expect("conv_layers >= 2")) }
    }

    /// `Phi(beta(LN(p)), E)`.
    pub fn amodal_mask_extraction(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        protos: &PrototypeSet,
        mask_feature: &FrameFeatures,
    ) -> Result<MaskLogits> {
        let n = self.beta_norm.forward(g, store, protos.values);
        let emb = self.beta.forward(g, store, n);
        correlate(g, emb, mask_feature)
    }

    fn self_attention(&self, g: &mut Graph, store: &ParamStore, layer: usize, p: &PrototypeSet) -> PrototypeSet {
        let l = &self.layers[layer];
        let n = l.self_norm.forward(g, store, p.values);
        let scale = 1.0 / (g.shape(n)[1] as f64).sqrt();
        let a = l.self_attn.forward(g, store, n, n, false, scale, None);
        let out = g.add(a, p.values);
        PrototypeSet::new(g, out)
    }

    /// Runs the head on one clip. `visible` are the binarized visible masks
    /// for this clip that feed the VSPM.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: &FrameFeatures,
        protos: &PrototypeSet,
        visible: &BinaryMasks,
    ) -> Result<SamhOutput> {
        if visible.protos != protos.count || visible.frames != features.frames {
            return Err(Error::Shape(format!(
                "visible masks {}x{} do not match {} prototypes over {} frames",
                visible.protos, visible.frames, protos.count, features.frames
            )));
        }
        let feats = self.amodal_feature_extraction(g, store, features);
        let mut p = *protos;
        let mut layer_amodal = Vec::with_capacity(self.layers.len());
        let mut attention_weights = Vec::with_capacity(self.layers.len());
        let mut priors = Vec::with_capacity(self.layers.len());
        let mut fallback_rows = 0;
        for l in 0..self.layers.len() {
            let amodal = self.amodal_mask_extraction(g, store, &p, &feats.mask)?;
            let prior = build_prior_mask(visible, &amodal.binarize(g), self.cfg.use_vspm, self.cfg.use_aspm);
            let (next, weights, fallbacks) =
                st_prior_masked_attention(g, store, &self.layers[l].masked, &p, &feats.attention, &prior);
            fallback_rows += fallbacks;
            p = self.self_attention(g, store, l, &next);
            layer_amodal.push(amodal);
            attention_weights.push(weights);
            priors.push(prior);
        }
        let amodal = self.amodal_mask_extraction(g, store, &p, &feats.mask)?;
        Ok(SamhOutput { amodal, prototypes: p, layer_amodal, attention_weights, priors, fallback_rows })
    }
}
