//! Run and dataset-generation configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::heads_loss::LossConfig;
use crate::optim::AdamConfig;
use crate::proto_update::UpdateConfig;
use crate::protomodel::{ProtoModelConfig, STRIDE};
use crate::samh::SamhConfig;
use crate::synthgen::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many steps instead of running full epochs.
    pub max_steps: Option<usize>,
    /// Write a checkpoint every this many steps; `0` writes only the final one.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, max_steps: None, checkpoint_every: 0, log_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Keep a prototype when its best real-class probability exceeds this.
    pub score_threshold: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { score_threshold: 0.3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Frames per clip `N_c`.
    pub clip_len: usize,
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub proto: ProtoModelConfig,
    pub update: UpdateConfig,
    pub samh: SamhConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clip_len: 3,
            n_classes: 3,
            height: 64,
            width: 64,
            proto: ProtoModelConfig::default(),
            update: UpdateConfig::default(),
            samh: SamhConfig::default(),
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clip_len == 0 {
            return bad("clip_len must be at least 1".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(STRIDE) || !self.width.is_multiple_of(STRIDE) {
            return bad(format!("frame size {}x{} must be a positive multiple of {STRIDE}", self.height, self.width));
        }
        if self.proto.n_protos == 0 || self.proto.embed_dim == 0 {
            return bad("proto.n_protos and proto.embed_dim must be positive".into());
        }
        self.samh.validate()?;
        self.loss.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad("optim: need lr > 0, beta1 and beta2 in [0, 1), eps > 0".into());
        }
        if o.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("optim.grad_clip must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.infer.score_threshold) {
            return bad("infer.score_threshold must lie in [0, 1]".into());
        }
        if self.train.log_every == 0 {
            return bad("train.log_every must be positive".into());
        }
        Ok(())
    }

    /// Read and validate a JSON config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Parameters of the `generate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub scene: SceneConfig,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Train scenes use seeds `seed..seed + train_videos`; test scenes follow.
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), train_videos: 200, test_videos: 40, seed: 0 }
    }
}

impl GenerateConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.scene.validate()?;
        Ok(cfg)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
