//! Training loop and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::Model;
use crate::autograd::Graph;
use crate::error::{io_err, Error, Result};
use crate::heads_loss::VideoTargets;
use crate::optim::Adam;
use crate::synthgen::VideoSample;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const CHECKPOINT_NAME: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub step: usize,
    pub params: Vec<NamedTensor>,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, serde_json::to_string(self)?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint { name: "format".into(), reason: format!("unsupported version {}", ckpt.format) });
        }
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint { name: "config_hash".into(), reason: "does not match stored config".into() });
        }
        Ok(ckpt)
    }
}

impl Model {
    /// Copy checkpoint parameters in, requiring identical names and shapes.
    pub fn load_params(&mut self, params: &[NamedTensor]) -> Result<()> {
        for p in params {
            if self.store.find(&p.name).is_none() {
                return Err(Error::Checkpoint { name: p.name.clone(), reason: "not a parameter of this model".into() });
            }
        }
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id).to_string();
            let src = params
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::Checkpoint { name: name.clone(), reason: "missing from checkpoint".into() })?;
            let want = self.store.value(id).shape();
            if src.tensor.shape() != want || src.tensor.len() != src.tensor.shape().iter().product::<usize>() {
                return Err(Error::Checkpoint {
                    name,
                    reason: format!("shape {:?} does not match model shape {:?}", src.tensor.shape(), want),
                });
            }
            *self.store.value_mut(id) = src.tensor.clone();
        }
        Ok(())
    }

    pub fn named_params(&self) -> Vec<NamedTensor> {
        self.store
            .ids()
            .map(|id| NamedTensor { name: self.store.name(id).to_string(), tensor: self.store.value(id).clone() })
            .collect()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(&ckpt.config)?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }
}

/// Visiting order of the training videos in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1));
    order.shuffle(&mut rng);
    order
}

/// Model, optimizer state and step counter.
pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let model = Model::new(config)?;
        let optimizer = Adam::new(config.optim, &model.store);
        Ok(Self { model, optimizer, step: 0 })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(ckpt)?;
        let fresh = Adam::new(ckpt.config.optim, &model.store);
        let sizes = |a: &Adam| a.first_moment.iter().chain(&a.second_moment).map(Vec::len).collect::<Vec<_>>();
        if sizes(&fresh) != sizes(&ckpt.optimizer) {
            return Err(Error::Checkpoint { name: "optimizer".into(), reason: "moment sizes do not match parameters".into() });
        }
        Ok(Self { model, optimizer: ckpt.optimizer.clone(), step: ckpt.step })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: self.model.config.clone(),
            config_hash: self.model.config.hash(),
            step: self.step,
            params: self.model.named_params(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Loss of `video` under the current parameters, without updating.
    pub fn evaluate_loss(&self, video: &VideoSample, targets: &VideoTargets) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = self.model.video_loss(&mut g, video, targets)?;
        Ok(g.value(loss).item())
    }

    /// One gradient step on one video; returns the loss before the update.
    pub fn train_step(&mut self, video: &VideoSample, targets: &VideoTargets) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = self.model.video_loss(&mut g, video, targets)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite loss at step {}", self.step)));
        }
        g.backward(loss);
        let grads = self.model.gradients(&g);
        self.optimizer.update(&mut self.model.store, &grads);
        self.step += 1;
        Ok(value)
    }

    /// Train until `total_steps`, visiting videos in per-epoch shuffled
    /// order. Returns the per-step losses of this call.
    pub fn run(&mut self, videos: &[VideoSample], total_steps: usize, out_dir: Option<&Path>) -> Result<Vec<f64>> {
        if videos.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        let targets: Vec<VideoTargets> = videos.iter().map(|v| self.model.targets(v)).collect();
        for (v, t) in videos.iter().zip(&targets) {
            if t.n_instances() > self.model.n_protos() {
                return Err(Error::TooManyInstances { gt: t.n_instances(), protos: self.model.n_protos() });
            }
            if (v.height, v.width) != (self.model.config.height, self.model.config.width) {
                return Err(Error::Shape(format!("training video is {}x{}", v.height, v.width)));
            }
        }
        let n = videos.len();
        let train_cfg = self.model.config.train.clone();
        let mut losses = Vec::new();
        let mut order = Vec::new();
        let mut order_epoch = usize::MAX;
        while self.step < total_steps {
            let epoch = self.step / n;
            if epoch != order_epoch {
                order = epoch_order(self.model.config.seed, epoch, n);
                order_epoch = epoch;
            }
            let idx = order[self.step % n];
            let loss = self.train_step(&videos[idx], &targets[idx])?;
            losses.push(loss);
            if self.step.is_multiple_of(train_cfg.log_every) || self.step == total_steps {
                let recent = &losses[losses.len().saturating_sub(train_cfg.log_every)..];
                let mean = recent.iter().sum::<f64>() / recent.len() as f64;
                log::info!("step {}/{} epoch {} loss {:.4}", self.step, total_steps, epoch, mean);
            }
            if let Some(dir) = out_dir {
                if train_cfg.checkpoint_every > 0 && self.step.is_multiple_of(train_cfg.checkpoint_every) {
                    self.checkpoint().save(&dir.join(format!("checkpoint_{:06}.json", self.step)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join(CHECKPOINT_NAME))?;
        }
        Ok(losses)
    }
}

/// Total steps requested by the training config for `n_videos` videos.
pub fn planned_steps(config: &RunConfig, n_videos: usize) -> usize {
    config.train.max_steps.unwrap_or(config.train.epochs * n_videos)
}

/// Train from scratch, or resume from `resume`, writing checkpoints into
/// `out_dir`. Returns the trainer and this run's per-step losses.
pub fn train(config: &RunConfig, videos: &[VideoSample], out_dir: Option<&Path>, resume: Option<&Checkpoint>) -> Result<(Trainer, Vec<f64>)> {
    let mut trainer = match resume {
        Some(ckpt) => {
            if ckpt.config_hash != config.hash() {
                return Err(Error::Checkpoint { name: "config_hash".into(), reason: "checkpoint was trained with a different config".into() });
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(config)?,
    };
    let losses = trainer.run(videos, planned_steps(config, videos.len()), out_dir)?;
    Ok((trainer, losses))
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_NAME)
}
