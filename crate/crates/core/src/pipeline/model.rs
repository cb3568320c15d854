//! The full video model and its clip-by-clip forward pass.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::heads_loss::{cost_matrix, final_loss, hungarian_match, mask_loss, Assignment, ClassHead, ClassProbs, VideoTargets};
use crate::nn::ParamStore;
use crate::proto_update::ProtoUpdate;
use crate::protomodel::{ProtoModel, STRIDE};
use crate::samh::Samh;
use crate::synthgen::VideoSample;
use crate::tensor::Tensor;
use crate::visible_head::{BinaryMasks, MaskLogits, VisibleHead};

/// Consecutive non-overlapping frame windows of length `clip_len`; the last
/// window keeps the remainder.
pub fn split_into_clips(n_frames: usize, clip_len: usize) -> Result<Vec<Range<usize>>> {
    if n_frames == 0 {
        return Err(Error::InvalidInput("cannot split an empty video".into()));
    }
    if clip_len == 0 {
        return Err(Error::InvalidInput("clip length must be at least 1".into()));
    }
    Ok((0..n_frames).step_by(clip_len).map(|s| s..(s + clip_len).min(n_frames)).collect())
}

/// Ground-truth visible masks substituted for the predicted ones in the
/// visible prior of matched prototypes.
pub struct Teacher<'a> {
    pub targets: &'a VideoTargets,
    pub assignment: &'a Assignment,
}

/// Whole-video outputs; mask logits cover all frames at feature resolution.
pub struct VideoOutput {
    pub class_logits: Var,
    pub probs: ClassProbs,
    pub visible: MaskLogits,
    pub amodal: MaskLogits,
    /// Per decoder layer, the amodal readout at the start of that layer.
    pub layer_amodal: Vec<MaskLogits>,
    pub clips: usize,
    pub fallback_rows: usize,
}

pub struct Model {
    pub config: RunConfig,
    pub store: ParamStore,
    proto: ProtoModel,
    update: ProtoUpdate,
    visible: VisibleHead,
    samh: Samh,
    class: ClassHead,
}

fn concat_logits(g: &mut Graph, parts: &[MaskLogits]) -> MaskLogits {
    let vars: Vec<Var> = parts.iter().map(|m| m.values).collect();
    let values = if vars.len() == 1 { vars[0] } else { g.concat1(&vars) };
    MaskLogits { values, frames: parts.iter().map(|m| m.frames).sum(), ..parts[0] }
}

impl Model {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.proto.embed_dim;
        let proto = ProtoModel::new(&mut store, &mut rng, &config.proto, config.height, config.width)?;
        let update = ProtoUpdate::new(&mut store, &mut rng, &config.update, config.proto.n_protos, c);
        let visible = VisibleHead::new(&mut store, &mut rng, c);
        let samh = Samh::new(&mut store, &mut rng, &config.samh, c)?;
        let class = ClassHead::new(&mut store, &mut rng, c, config.n_classes);
        Ok(Self { config: config.clone(), store, proto, update, visible, samh, class })
    }

    pub fn n_protos(&self) -> usize {
        self.config.proto.n_protos
    }

    pub fn samh(&self) -> &Samh {
        &self.samh
    }

    fn check_video(&self, video: &VideoSample) -> Result<()> {
        if (video.height, video.width) != (self.config.height, self.config.width) {
            return Err(Error::Shape(format!(
                "video is {}x{}, model expects {}x{}",
                video.height, video.width, self.config.height, self.config.width
            )));
        }
        Ok(())
    }

    /// Input tensor `[n, 3, H, W]` for frames `range`, centred around zero.
    fn clip_tensor(video: &VideoSample, range: Range<usize>) -> Tensor {
        let data = video.frames[range.clone()].iter().flatten().map(|&b| b as f64 / 255.0 - 0.5).collect();
        Tensor::new(vec![range.len(), 3, video.height, video.width], data)
    }

    fn teacher_masks(&self, predicted: BinaryMasks, range: &Range<usize>, teacher: &Teacher) -> BinaryMasks {
        let mut m = predicted;
        let fl = m.height * m.width;
        for (i, &j) in teacher.assignment.gt_to_proto.iter().enumerate() {
            for (t, f) in range.clone().enumerate() {
                m.frame_mut(j, t).copy_from_slice(&teacher.targets.visible[i][f * fl..(f + 1) * fl]);
            }
        }
        m
    }

    /// Runs every clip in order: clip prototypes and features, global update,
    /// visible head, amodal head. Classification follows the last clip.
    pub fn forward_video(&self, g: &mut Graph, video: &VideoSample, teacher: Option<&Teacher>) -> Result<VideoOutput> {
        self.check_video(video)?;
        let clips = split_into_clips(video.n_frames(), self.config.clip_len)?;
        let mut global = self.update.init_global(g, &self.store);
        let mut visible = Vec::with_capacity(clips.len());
        let mut amodal = Vec::with_capacity(clips.len());
        let mut layers: Vec<Vec<MaskLogits>> = vec![Vec::new(); self.config.samh.layers];
        let mut fallback_rows = 0;
        for range in &clips {
            let input = g.constant(Self::clip_tensor(video, range.clone()));
            let (clip_protos, features) = self.proto.model_clip(g, &self.store, input)?;
            global = self.update.update_global(g, &self.store, &global, &clip_protos);
            let vis = self.visible.predict_visible(g, &self.store, &global, &features)?;
            let mut prior = vis.binarize(g);
            if let Some(t) = teacher {
                prior = self.teacher_masks(prior, range, t);
            }
            let out = self.samh.forward(g, &self.store, &features, &global, &prior)?;
            global = out.prototypes;
            fallback_rows += out.fallback_rows;
            visible.push(vis);
            amodal.push(out.amodal);
            for (l, m) in out.layer_amodal.into_iter().enumerate() {
                layers[l].push(m);
            }
        }
        let (class_logits, probs) = self.class.classify(g, &self.store, &global);
        let visible = concat_logits(g, &visible);
        let amodal = concat_logits(g, &amodal);
        let layer_amodal = layers.iter().map(|parts| concat_logits(g, parts)).collect();
        Ok(VideoOutput { class_logits, probs, visible, amodal, layer_amodal, clips: clips.len(), fallback_rows })
    }

    pub fn targets(&self, video: &VideoSample) -> VideoTargets {
        VideoTargets::from_sample(video, STRIDE)
    }

    fn assign(&self, g: &Graph, out: &VideoOutput, targets: &VideoTargets) -> Result<Assignment> {
        let cost = cost_matrix(&out.probs, g.value(out.visible.values), g.value(out.amodal.values), targets, &self.config.loss)?;
        hungarian_match(&cost, self.n_protos())
    }

    /// Builds the training loss of one video on `g`. The assignment is
    /// computed from forward values only.
    pub fn video_loss(&self, g: &mut Graph, video: &VideoSample, targets: &VideoTargets) -> Result<(Var, Assignment)> {
        let teacher_assignment = if self.config.samh.teacher_force_vspm && self.config.samh.use_vspm {
            let mut probe = Graph::new();
            let out = self.forward_video(&mut probe, video, None)?;
            Some(self.assign(&probe, &out, targets)?)
        } else {
            None
        };
        let teacher = teacher_assignment.as_ref().map(|a| Teacher { targets, assignment: a });
        let out = self.forward_video(g, video, teacher.as_ref())?;
        let a = self.assign(g, &out, targets)?;
        let cfg = &self.config.loss;
        let mut loss = final_loss(g, out.class_logits, out.visible.values, out.amodal.values, targets, &a, cfg);
        if self.config.samh.aux_loss {
            for layer in &out.layer_amodal {
                let l = mask_loss(g, layer.values, targets, &a, cfg.amodal_weight, true);
                loss = g.add(loss, l);
            }
        }
        Ok((loss, a))
    }

    /// Gradients of every parameter, in parameter order; untouched
    /// parameters get an empty vector.
    pub fn gradients(&self, g: &Graph) -> Vec<Vec<f64>> {
        let mut grads = vec![Vec::new(); self.store.len()];
        for (id, grad) in g.param_grads() {
            grads[id.0] = grad.to_vec();
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_scene, SceneConfig};

    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig { height: 16, width: 16, clip_len: 2, ..Default::default() };
        cfg.proto.embed_dim = 8;
        cfg.proto.n_protos = 4;
        cfg
    }

    fn tiny_video(frames: usize) -> VideoSample {
        let scene = SceneConfig {
            n_frames: frames,
            height: 16,
            width: 16,
            min_instances: 2,
            max_instances: 2,
            min_size: 3.0,
            max_size: 4.0,
            ..Default::default()
        };
        generate_scene(&scene, 5).unwrap()
    }

    #[test]
    fn clip_splitting() {
        let lens = |n, c| split_into_clips(n, c).unwrap().iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(lens(10, 3), vec![3, 3, 3, 1]);
        assert_eq!(lens(5, 1), vec![1; 5]);
        assert_eq!(lens(3, 3), vec![3]);
        assert_eq!(split_into_clips(10, 3).unwrap()[3], 9..10);
        assert!(split_into_clips(0, 3).is_err());
    }

    #[test]
    fn tubes_cover_every_frame_with_a_remainder_clip() {
        let model = Model::new(&tiny_config()).unwrap();
        let video = tiny_video(5);
        let mut g = Graph::new();
        let out = model.forward_video(&mut g, &video, None).unwrap();
        assert_eq!(out.clips, 3);
        assert_eq!(g.shape(out.visible.values), &[4, 5, 4, 4]);
        assert_eq!(g.shape(out.amodal.values), &[4, 5, 4, 4]);
        assert_eq!(out.layer_amodal.len(), 2);
        assert_eq!(g.shape(out.class_logits), &[4, 4]);
    }

    #[test]
    fn single_clip_video_runs_one_pass() {
        let model = Model::new(&tiny_config()).unwrap();
        let mut g = Graph::new();
        let out = model.forward_video(&mut g, &tiny_video(2), None).unwrap();
        assert_eq!(out.clips, 1);
    }

    #[test]
    fn forward_is_deterministic() {
        let video = tiny_video(4);
        let run = || {
            let model = Model::new(&tiny_config()).unwrap();
            let mut g = Graph::new();
            let out = model.forward_video(&mut g, &video, None).unwrap();
            (g.value(out.visible.values).clone(), g.value(out.amodal.values).clone(), out.probs)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_frame_size_is_rejected() {
        let model = Model::new(&RunConfig { height: 32, ..tiny_config() }).unwrap();
        let mut g = Graph::new();
        assert!(matches!(model.forward_video(&mut g, &tiny_video(2), None), Err(Error::Shape(_))));
    }

    #[test]
    fn teacher_forcing_replaces_matched_rows() {
        let mut cfg = tiny_config();
        cfg.samh.teacher_force_vspm = true;
        let model = Model::new(&cfg).unwrap();
        let video = tiny_video(4);
        let targets = model.targets(&video);
        let mut g = Graph::new();
        let (loss, a) = model.video_loss(&mut g, &video, &targets).unwrap();
        assert!(g.value(loss).item().is_finite());
        assert_eq!(a.gt_to_proto.len(), targets.n_instances());
        let teacher = Teacher { targets: &targets, assignment: &a };
        let m = model.teacher_masks(BinaryMasks::empty(4, 2, 4, 4), &(2..4), &teacher);
        let j = a.gt_to_proto[0];
        assert_eq!(m.frame(j, 1), &targets.visible[0][3 * 16..4 * 16]);
    }

    #[test]
    fn loss_is_finite_and_gradients_cover_all_parameters() {
        let mut cfg = tiny_config();
        cfg.samh.aux_loss = true;
        let model = Model::new(&cfg).unwrap();
        let video = tiny_video(4);
        let targets = model.targets(&video);
        let mut g = Graph::new();
        let (loss, _) = model.video_loss(&mut g, &video, &targets).unwrap();
        g.backward(loss);
        let grads = model.gradients(&g);
        for (id, grad) in model.store.ids().zip(&grads) {
            assert_eq!(grad.len(), model.store.value(id).len(), "{} has no gradient", model.store.name(id));
        }
    }
}
