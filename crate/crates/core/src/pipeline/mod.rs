//! Video-level orchestration: configuration, the clip-by-clip model,
//! training, inference, prediction interchange and overlay rendering.

mod config;
mod model;
mod render;
mod tracks;
mod train;

pub use config::{DataConfig, GenerateConfig, InferConfig, RunConfig, TrainConfig};
pub use model::{split_into_clips, Model, Teacher, VideoOutput};
pub use render::{render_overlays, track_color};
pub use tracks::{infer, is_prediction_dir, read_tracks, write_tracks, Track, TrackSet};
pub use train::{checkpoint_path, epoch_order, planned_steps, train, Checkpoint, NamedTensor, Trainer, CHECKPOINT_NAME};
