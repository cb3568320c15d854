//! Classification head, bipartite matching of prototypes to ground truth,
//! and the set-prediction training loss.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp, ParamStore};
use crate::protomodel::PrototypeSet;
use crate::synthgen::VideoSample;
use crate::tensor::{bce_with_logit, softmax_rows_in_place, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub class_weight: f64,
    pub visible_weight: f64,
    pub amodal_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { class_weight: 1.0, visible_weight: 1.0, amodal_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.class_weight, self.visible_weight, self.amodal_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub struct ClassHead {
    norm: LayerNorm,
    embed: Mlp,
    fc: Linear,
    n_classes: usize,
}

impl ClassHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, width: usize, n_classes: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, "class.norm", width),
            embed: Mlp::new(store, rng, "class.embed", width, width, width),
            fc: Linear::new(store, rng, "class.fc", width, n_classes + 1, true),
            n_classes,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `[N_p, C + 1]` logits; the last column is "no object".
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, protos: &PrototypeSet) -> Var {
        let n = self.norm.forward(g, store, protos.values);
        let h = self.embed.forward(g, store, n);
        self.fc.forward(g, store, h)
    }

    pub fn classify(&self, g: &mut Graph, store: &ParamStore, protos: &PrototypeSet) -> (Var, ClassProbs) {
        let logits = self.logits(g, store, protos);
        let probs = ClassProbs::from_logits(g.value(logits));
        (logits, probs)
    }
}

/// Row-softmax class probabilities with the "no object" class last.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    probs: Tensor,
    log_probs: Tensor,
}

impl ClassProbs {
    pub fn from_logits(logits: &Tensor) -> Self {
        let cols = logits.shape()[1];
        let mut probs = logits.data().to_vec();
        softmax_rows_in_place(&mut probs, cols);
        let log_probs = logits
            .data()
            .chunks(cols)
            .flat_map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter().map(move |v| v - lse)
            })
            .collect();
        Self {
            probs: Tensor::new(logits.shape().to_vec(), probs),
            log_probs: Tensor::new(logits.shape().to_vec(), log_probs),
        }
    }

    pub fn n_protos(&self) -> usize {
        self.probs.shape()[0]
    }

    /// Number of real classes `C`.
    pub fn n_classes(&self) -> usize {
        self.probs.shape()[1] - 1
    }

    pub fn values(&self) -> &Tensor {
        &self.probs
    }

    pub fn prob(&self, proto: usize, class: usize) -> f64 {
        self.probs.row(proto)[class]
    }

    pub fn log_prob(&self, proto: usize, class: usize) -> f64 {
        self.log_probs.row(proto)[class]
    }

    /// Most likely real class and its probability; lowest index wins ties.
    pub fn best_class(&self, proto: usize) -> (usize, f64) {
        let row = &self.probs.row(proto)[..self.n_classes()];
        row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
    }
}

/// Ground truth downsampled to feature resolution, restricted to instances
/// that are visible at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTargets {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub categories: Vec<usize>,
    /// Per instance, `frames * height * width` bits.
    pub visible: Vec<Vec<bool>>,
    pub amodal: Vec<Vec<bool>>,
    /// Per instance and frame, whether the amodal target is defined.
    pub amodal_valid: Vec<Vec<bool>>,
}

impl VideoTargets {
    pub fn from_sample(sample: &VideoSample, stride: usize) -> Self {
        let mut t = Self {
            frames: sample.n_frames(),
            height: sample.height / stride,
            width: sample.width / stride,
            categories: Vec::new(),
            visible: Vec::new(),
            amodal: Vec::new(),
            amodal_valid: Vec::new(),
        };
        for i in 0..sample.n_instances() {
            let Some(first) = sample.first_visible[i] else { continue };
            let flat = |tube: &[crate::mask::Mask]| -> Vec<bool> {
                tube.iter().flat_map(|m| m.downsample(stride).bits().to_vec()).collect()
            };
            t.categories.push(sample.categories[i]);
            t.visible.push(flat(&sample.visible[i]));
            t.amodal.push(flat(&sample.amodal[i]));
            t.amodal_valid.push((0..t.frames).map(|f| f >= first).collect());
        }
        t
    }

    pub fn n_instances(&self) -> usize {
        self.categories.len()
    }

    fn frame_len(&self) -> usize {
        self.height * self.width
    }
}

/// Mean binary cross-entropy of `logits` against `gt` over the frames marked
/// valid. `logits`, `gt` hold `valid.len()` equally sized frames. Zero when
/// no frame is valid.
pub fn mask_bce(logits: &[f64], gt: &[bool], valid: &[bool]) -> Result<f64> {
    if logits.len() != gt.len() || valid.is_empty() || !logits.len().is_multiple_of(valid.len()) {
        return Err(Error::Shape(format!(
            "mask_bce: {} logits, {} targets, {} frames",
            logits.len(),
            gt.len(),
            valid.len()
        )));
    }
    let fl = logits.len() / valid.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        for k in t * fl..(t + 1) * fl {
            total += bce_with_logit(logits[k], if gt[k] { 1.0 } else { 0.0 });
        }
        count += fl;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn proto_tube(logits: &Tensor, proto: usize) -> &[f64] {
    let n = logits.len() / logits.shape()[0];
    &logits.data()[proto * n..(proto + 1) * n]
}

/// Weighted matching cost of prototype `proto` for ground truth `gt`:
/// class negative log-likelihood plus visible and amodal mask BCE.
pub fn match_cost(
    probs: &ClassProbs,
    visible: &Tensor,
    amodal: &Tensor,
    targets: &VideoTargets,
    gt: usize,
    proto: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    let all = vec![true; targets.frames];
    let lv = mask_bce(proto_tube(visible, proto), &targets.visible[gt], &all)?;
    let la = mask_bce(proto_tube(amodal, proto), &targets.amodal[gt], &targets.amodal_valid[gt])?;
    Ok(-cfg.class_weight * probs.log_prob(proto, targets.categories[gt]) + cfg.visible_weight * lv + cfg.amodal_weight * la)
}

/// `N x N_p` matrix of [`match_cost`].
pub fn cost_matrix(
    probs: &ClassProbs,
    visible: &Tensor,
    amodal: &Tensor,
    targets: &VideoTargets,
    cfg: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..targets.n_instances())
        .map(|i| (0..probs.n_protos()).map(|j| match_cost(probs, visible, amodal, targets, i, j, cfg)).collect())
        .collect()
}

/// Injective map from ground-truth index to prototype index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub gt_to_proto: Vec<usize>,
    pub n_protos: usize,
}

impl Assignment {
    pub fn proto_to_gt(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n_protos];
        for (i, &j) in self.gt_to_proto.iter().enumerate() {
            out[j] = Some(i);
        }
        out
    }
}

/// Minimum-cost assignment with lexicographic (gt, prototype) tie-breaking.
pub fn hungarian_match(cost: &[Vec<f64>], n_protos: usize) -> Result<Assignment> {
    if cost.len() > n_protos {
        return Err(Error::TooManyInstances { gt: cost.len(), protos: n_protos });
    }
    if cost.iter().any(|r| r.len() != n_protos) {
        return Err(Error::Shape(format!("cost rows must have {n_protos} entries")));
    }
    Ok(Assignment { gt_to_proto: min_cost_assignment(cost)?, n_protos })
}

/// Weighted classification term: matched prototypes against their ground
/// truth class, unmatched ones against "no object".
pub fn class_loss(g: &mut Graph, class_logits: Var, n_classes: usize, targets: &VideoTargets, a: &Assignment, weight: f64) -> Var {
    let terms = a
        .proto_to_gt()
        .iter()
        .enumerate()
        .map(|(j, gt)| (j, gt.map_or(n_classes, |i| targets.categories[i]), weight))
        .collect();
    g.cross_entropy(class_logits, terms)
}

/// Weighted mean-BCE term for every matched pair, over the full tube
/// (`amodal == false`) or over the frames where the amodal target is defined.
pub fn mask_loss(g: &mut Graph, logits: Var, targets: &VideoTargets, a: &Assignment, weight: f64, amodal: bool) -> Var {
    let n = g.value(logits).len();
    let per_proto = n / a.n_protos;
    let fl = targets.frame_len();
    assert_eq!(per_proto, targets.frames * fl, "mask logits do not match target layout");
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    for (i, &j) in a.gt_to_proto.iter().enumerate() {
        let gt = if amodal { &targets.amodal[i] } else { &targets.visible[i] };
        let valid: Vec<bool> = if amodal { targets.amodal_valid[i].clone() } else { vec![true; targets.frames] };
        let count = valid.iter().filter(|v| **v).count() * fl;
        if count == 0 {
            continue;
        }
        for (f, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
            for k in f * fl..(f + 1) * fl {
                t[j * per_proto + k] = if gt[k] { 1.0 } else { 0.0 };
                w[j * per_proto + k] = weight / count as f64;
            }
        }
    }
    g.bce_with_logits(logits, Arc::new(t), Arc::new(w))
}

/// Total set-prediction loss for one video under a fixed assignment.
pub fn final_loss(
    g: &mut Graph,
    class_logits: Var,
    visible: Var,
    amodal: Var,
    targets: &VideoTargets,
    a: &Assignment,
    cfg: &LossConfig,
) -> Var {
    let n_classes = g.shape(class_logits)[1] - 1;
    let c = class_loss(g, class_logits, n_classes, targets, a, cfg.class_weight);
    let v = mask_loss(g, visible, targets, a, cfg.visible_weight, false);
    let m = mask_loss(g, amodal, targets, a, cfg.amodal_weight, true);
    let s = g.add(c, v);
    g.add(s, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{numeric_grad, relative_error};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::LN_2;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = ClassProbs::from_logits(&Tensor::full(&[2, 4], 0.3));
        for j in 0..2 {
            for k in 0..4 {
                assert!((p.prob(j, k) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn random_prototypes_give_stochastic_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = ClassHead::new(&mut store, &mut rng, 8, 3);
        let mut g = Graph::new();
        let p = g.input(Tensor::new(vec![5, 8], (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect()));
        let p = PrototypeSet::new(&g, p);
        let (_, probs) = head.classify(&mut g, &store, &p);
        for j in 0..5 {
            let s: f64 = (0..4).map(|k| probs.prob(j, k)).sum();
            assert!((s - 1.0).abs() <= 1e-6);
            assert!((0..4).all(|k| (0.0..=1.0).contains(&probs.prob(j, k))));
        }
    }

    #[test]
    fn dominant_logit_takes_nearly_all_mass() {
        let p = ClassProbs::from_logits(&Tensor::new(vec![1, 4], vec![0.0, 20.0, 0.0, 0.0]));
        let exact = 20f64.exp() / (20f64.exp() + 3.0);
        assert!(p.prob(0, 1) >= 1.0 - 1e-8);
        assert!((p.prob(0, 1) - exact).abs() < 1e-15);
        assert_eq!(p.best_class(0), (1, p.prob(0, 1)));
    }

    #[test]
    fn bce_limits_and_zero_logits() {
        let inf = f64::INFINITY;
        let gt = [true, false, false, true];
        assert_eq!(mask_bce(&[inf, -inf, -inf, inf], &gt, &[true]).unwrap(), 0.0);
        let z = mask_bce(&[0.0; 4], &gt, &[true]).unwrap();
        assert!((z - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_two_by_two_by_hand() {
        let x = [1.5, -0.5, 0.0, 2.0];
        let gt = [true, true, false, false];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hand: f64 = x
            .iter()
            .zip(&gt)
            .map(|(&v, &y)| if y { -ln(sig(v)) } else { -ln(1.0 - sig(v)) })
            .sum::<f64>()
            / 4.0;
        assert!((mask_bce(&x, &gt, &[true]).unwrap() - hand).abs() < 1e-14);
    }

    #[test]
    fn bce_skips_invalid_frames() {
        let x = [5.0, 5.0, 0.0, 0.0];
        let gt = [false, false, true, false];
        assert!((mask_bce(&x, &gt, &[false, true]).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(mask_bce(&x, &gt, &[false, false]).unwrap(), 0.0);
        assert!(mask_bce(&x, &gt[..3], &[true]).is_err());
    }

    /// One frame of 2x2 at feature resolution, one instance of class 0.
    fn one_gt() -> VideoTargets {
        VideoTargets {
            frames: 1,
            height: 2,
            width: 2,
            categories: vec![0],
            visible: vec![vec![true, false, false, false]],
            amodal: vec![vec![true, true, false, false]],
            amodal_valid: vec![vec![true]],
        }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let inf = f64::INFINITY;
        let probs = ClassProbs::from_logits(&Tensor::new(vec![1, 2], vec![inf.min(1e6), -1e6]));
        let vis = Tensor::new(vec![1, 1, 2, 2], vec![inf, -inf, -inf, -inf]);
        let am = Tensor::new(vec![1, 1, 2, 2], vec![inf, inf, -inf, -inf]);
        let c = match_cost(&probs, &vis, &am, &one_gt(), 0, 0, &LossConfig::default()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn zero_mask_logits_cost_two_ln2() {
        let probs = ClassProbs::from_logits(&Tensor::new(vec![1, 2], vec![1e6, -1e6]));
        let z = Tensor::zeros(&[1, 1, 2, 2]);
        let c = match_cost(&probs, &z, &z, &one_gt(), 0, 0, &LossConfig::default()).unwrap();
        assert!((c - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn cost_decreases_with_class_probability() {
        let z = Tensor::zeros(&[1, 1, 2, 2]);
        let mut last = f64::INFINITY;
        for l in [-3.0, -1.0, 0.0, 1.0, 4.0] {
            let probs = ClassProbs::from_logits(&Tensor::new(vec![1, 2], vec![l, 0.0]));
            let c = match_cost(&probs, &z, &z, &one_gt(), 0, 0, &LossConfig::default()).unwrap();
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn matching_rejects_surplus_ground_truth() {
        assert!(matches!(hungarian_match(&[vec![0.0], vec![1.0]], 1), Err(Error::TooManyInstances { gt: 2, protos: 1 })));
        let a = hungarian_match(&[vec![1.0, 2.0], vec![2.0, 1.0]], 2).unwrap();
        assert_eq!(a.gt_to_proto, vec![0, 1]);
    }

    fn loss_value(class: &Tensor, vis: &Tensor, am: &Tensor, t: &VideoTargets, a: &Assignment, cfg: &LossConfig) -> f64 {
        let mut g = Graph::new();
        let c = g.input(class.clone());
        let v = g.input(vis.clone());
        let m = g.input(am.clone());
        let l = final_loss(&mut g, c, v, m, t, a, cfg);
        g.value(l).item()
    }

    #[test]
    fn perfect_everything_has_zero_loss_and_unmatched_null_terms() {
        let t = one_gt();
        let a = Assignment { gt_to_proto: vec![0], n_protos: 2 };
        let big = 1e6;
        let class = Tensor::new(vec![2, 2], vec![big, -big, -big, big]);
        let vis = Tensor::new(vec![2, 1, 2, 2], vec![big, -big, -big, -big, 0.0, 0.0, 0.0, 0.0]);
        let am = Tensor::new(vec![2, 1, 2, 2], vec![big, big, -big, -big, 0.0, 0.0, 0.0, 0.0]);
        let cfg = LossConfig::default();
        assert_eq!(loss_value(&class, &vis, &am, &t, &a, &cfg), 0.0);
        // unmatched prototype with null probability 0.5
        let class = Tensor::new(vec![2, 2], vec![big, -big, 0.0, 0.0]);
        assert!((loss_value(&class, &vis, &am, &t, &a, &cfg) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn one_gt_two_protos_by_hand() {
        let t = one_gt();
        let class = Tensor::new(vec![2, 2], vec![0.4, -0.2, 1.0, 0.5]);
        let vis = Tensor::new(vec![2, 1, 2, 2], vec![0.3, -1.0, 0.2, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let am = Tensor::new(vec![2, 1, 2, 2], vec![2.0, 0.5, -0.7, 0.1, 1.0, 1.0, 1.0, 1.0]);
        let a = Assignment { gt_to_proto: vec![0], n_protos: 2 };
        let sp = |v: f64| (1.0 + v.exp()).ln();
        // -log softmax([0.4, -0.2])[0] and -log softmax([1.0, 0.5])[1]
        let cls = sp(-0.2 - 0.4) + sp(1.0 - 0.5);
        let lv = (sp(-0.3) + sp(-1.0) + sp(0.2) + sp(0.0)) / 4.0;
        let la = (sp(-2.0) + sp(-0.5) + sp(-0.7) + sp(0.1)) / 4.0;
        let got = loss_value(&class, &vis, &am, &t, &a, &LossConfig::default());
        assert!((got - (cls + lv + la)).abs() < 1e-14);
    }

    fn random_targets(rng: &mut ChaCha8Rng, n: usize, frames: usize, hw: usize) -> VideoTargets {
        let first: Vec<usize> = (0..n).map(|_| rng.gen_range(0..frames)).collect();
        VideoTargets {
            frames,
            height: 1,
            width: hw,
            categories: (0..n).map(|_| rng.gen_range(0..3)).collect(),
            visible: (0..n).map(|_| (0..frames * hw).map(|_| rng.gen_bool(0.4)).collect()).collect(),
            amodal: (0..n).map(|_| (0..frames * hw).map(|_| rng.gen_bool(0.6)).collect()).collect(),
            amodal_valid: first.iter().map(|&f| (0..frames).map(|t| t >= f).collect()).collect(),
        }
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn loss_is_invariant_to_prototype_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (np, frames, hw) = (5, 3, 4);
        let t = random_targets(&mut rng, 3, frames, hw);
        let class = random_tensor(&mut rng, &[np, 4]);
        let vis = random_tensor(&mut rng, &[np, frames, 1, hw]);
        let am = random_tensor(&mut rng, &[np, frames, 1, hw]);
        let cfg = LossConfig::default();
        let run = |class: &Tensor, vis: &Tensor, am: &Tensor| {
            let probs = ClassProbs::from_logits(class);
            let cost = cost_matrix(&probs, vis, am, &t, &cfg).unwrap();
            let a = hungarian_match(&cost, np).unwrap();
            (a.clone(), loss_value(class, vis, am, &t, &a, &cfg))
        };
        let (a0, l0) = run(&class, &vis, &am);
        let order = [3, 0, 4, 2, 1];
        let permute = |x: &Tensor| x.clone().reshaped(&[np, x.len() / np]).permute_rows(&order).reshaped(x.shape());
        let (a1, l1) = run(&class.permute_rows(&order), &permute(&vis), &permute(&am));
        assert!((l0 - l1).abs() <= 1e-8);
        // new row r holds old row order[r]
        for (i, &j) in a1.gt_to_proto.iter().enumerate() {
            assert_eq!(order[j], a0.gt_to_proto[i]);
        }
        assert!(l0 >= 0.0);
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_targets(&mut rng, 2, 2, 3);
        let cfg = LossConfig { class_weight: 0.0, visible_weight: 0.0, amodal_weight: 0.0 };
        let a = Assignment { gt_to_proto: vec![2, 0], n_protos: 3 };
        let mut g = Graph::new();
        let c = g.input(random_tensor(&mut rng, &[3, 4]));
        let v = g.input(random_tensor(&mut rng, &[3, 2, 1, 3]));
        let m = g.input(random_tensor(&mut rng, &[3, 2, 1, 3]));
        let l = final_loss(&mut g, c, v, m, &t, &a, &cfg);
        g.backward(l);
        for x in [c, v, m] {
            assert!(g.grad(x).map_or(true, |gr| gr.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn gradient_through_classifier_and_masks_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = ClassHead::new(&mut store, &mut rng, 4, 3);
        let t = random_targets(&mut rng, 2, 2, 3);
        let protos = random_tensor(&mut rng, &[3, 4]);
        let vis = random_tensor(&mut rng, &[3, 2, 1, 3]);
        let am = random_tensor(&mut rng, &[3, 2, 1, 3]);
        let a = Assignment { gt_to_proto: vec![1, 2], n_protos: 3 };
        let cfg = LossConfig { class_weight: 1.0, visible_weight: 0.7, amodal_weight: 1.3 };
        let eval = |store: &ParamStore, p: &Tensor, v: &Tensor, m: &Tensor, g: &mut Graph| {
            let pv = g.input(p.clone());
            let pv = PrototypeSet::new(g, pv);
            let logits = head.logits(g, store, &pv);
            let vv = g.input(v.clone());
            let mv = g.input(m.clone());
            let l = final_loss(g, logits, vv, mv, &t, &a, &cfg);
            (l, pv.values, vv, mv)
        };
        let mut g = Graph::new();
        let (l, pv, vv, mv) = eval(&store, &protos, &vis, &am, &mut g);
        g.backward(l);
        let scalar = |p: &Tensor, v: &Tensor, m: &Tensor, s: &ParamStore| {
            let mut g = Graph::new();
            let (l, ..) = eval(s, p, v, m, &mut g);
            g.value(l).item()
        };
        let checks = [
            (g.grad(pv).unwrap().to_vec(), numeric_grad(&protos, 1e-5, |x| scalar(x, &vis, &am, &store))),
            (g.grad(vv).unwrap().to_vec(), numeric_grad(&vis, 1e-5, |x| scalar(&protos, x, &am, &store))),
            (g.grad(mv).unwrap().to_vec(), numeric_grad(&am, 1e-5, |x| scalar(&protos, &vis, x, &store))),
        ];
        for (analytic, numeric) in &checks {
            assert!(relative_error(analytic, numeric) <= 1e-4);
        }
        let grads: std::collections::HashMap<_, _> = g.param_grads().map(|(id, v)| (id, v.to_vec())).collect();
        for id in store.ids() {
            let numeric = numeric_grad(store.value(id), 1e-5, |x| {
                let mut s = store.clone();
                *s.value_mut(id) = x.clone();
                scalar(&protos, &vis, &am, &s)
            });
            assert!(relative_error(&grads[&id], &numeric) <= 1e-4, "{}", store.name(id));
        }
    }

    #[test]
    fn targets_drop_never_visible_instances_and_mask_early_frames() {
        use crate::mask::Mask;
        let full = Mask::from_fn(8, 8, |_, _| true);
        let empty = Mask::empty(8, 8);
        let sample = VideoSample {
            height: 8,
            width: 8,
            frames: vec![vec![0; 3 * 64]; 3],
            visible: vec![vec![empty.clone(), full.clone(), full.clone()], vec![empty.clone(); 3]],
            amodal: vec![vec![empty.clone(), full.clone(), full.clone()], vec![empty.clone(); 3]],
            categories: vec![2, 1],
            depths: vec![0, 1],
            first_visible: vec![Some(1), None],
        };
        let t = VideoTargets::from_sample(&sample, 4);
        assert_eq!(t.n_instances(), 1);
        assert_eq!((t.frames, t.height, t.width), (3, 2, 2));
        assert_eq!(t.categories, vec![2]);
        assert_eq!(t.amodal_valid[0], vec![false, true, true]);
        assert_eq!(t.visible[0].iter().filter(|b| **b).count(), 8);
    }
}
