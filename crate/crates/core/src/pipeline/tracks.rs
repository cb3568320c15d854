//! Track sets: inference output, ground truth in the same shape, and their
//! on-disk interchange format.
//!
//! A prediction directory mirrors a dataset video directory: `manifest.json`
//! lists every track with its id, class and score plus file checksums, and
//! each track stores `visible_XX.png` and `amodal_XX.png` mask stacks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::autograd::Graph;
use crate::error::{io_err, Error, Result};
use crate::mask::{Mask, Tube};
use crate::protomodel::STRIDE;
use crate::synthgen::{load_tube, save_tube, sha256_file, VideoSample, MANIFEST_NAME};

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub class: usize,
    pub score: f64,
    pub visible: Tube,
    pub amodal: Tube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn empty(n_frames: usize, height: usize, width: usize) -> Self {
        Self { n_frames, height, width, tracks: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Ground-truth instances as tracks with score 1 and id = instance index.
    pub fn from_ground_truth(sample: &VideoSample) -> Self {
        Self {
            n_frames: sample.n_frames(),
            height: sample.height,
            width: sample.width,
            tracks: (0..sample.n_instances())
                .filter(|&i| sample.first_visible[i].is_some())
                .map(|i| Track {
                    id: i,
                    class: sample.categories[i],
                    score: 1.0,
                    visible: sample.visible[i].clone(),
                    amodal: sample.amodal[i].clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.tracks.len() {
            return Err(Error::InvalidInput("track ids must be unique".into()));
        }
        for t in &self.tracks {
            let ok = |tube: &Tube| {
                tube.len() == self.n_frames && tube.iter().all(|m| (m.height(), m.width()) == (self.height, self.width))
            };
            if !ok(&t.visible) || !ok(&t.amodal) {
                return Err(Error::Shape(format!("track {} tubes do not span {} frames of {}x{}", t.id, self.n_frames, self.height, self.width)));
            }
            if !(0.0..=1.0).contains(&t.score) {
                return Err(Error::InvalidInput(format!("track {} score {} outside [0, 1]", t.id, t.score)));
            }
        }
        Ok(())
    }
}

/// Binary tube of one prototype from `[protos, frames, h, w]` logits,
/// thresholded at logit 0 and upsampled to frame resolution.
fn tube_from_logits(data: &[f64], proto: usize, frames: usize, h: usize, w: usize) -> Tube {
    let fl = h * w;
    (0..frames)
        .map(|t| {
            let start = (proto * frames + t) * fl;
            Mask::from_bits(h, w, data[start..start + fl].iter().map(|v| *v > 0.0).collect()).upsample(STRIDE)
        })
        .collect()
}

/// Runs the model on `video` and keeps prototypes whose best real-class
/// probability exceeds the configured score threshold. Amodal masks are
/// cleared before the first frame in which the track is visible.
pub fn infer(model: &Model, video: &VideoSample) -> Result<TrackSet> {
    let mut g = Graph::new();
    let out = model.forward_video(&mut g, video, None)?;
    let threshold = model.config.infer.score_threshold;
    let (frames, h, w) = (out.visible.frames, out.visible.height, out.visible.width);
    let vis = g.value(out.visible.values).data();
    let am = g.value(out.amodal.values).data();
    let mut set = TrackSet::empty(video.n_frames(), video.height, video.width);
    for j in 0..model.n_protos() {
        let (class, score) = out.probs.best_class(j);
        if score <= threshold {
            continue;
        }
        let visible = tube_from_logits(vis, j, frames, h, w);
        let mut amodal = tube_from_logits(am, j, frames, h, w);
        let first = visible.iter().position(|m| !m.is_empty()).unwrap_or(frames);
        for m in &mut amodal[..first] {
            *m = Mask::empty(video.height, video.width);
        }
        set.tracks.push(Track { id: j, class, score, visible, amodal });
    }
    Ok(set)
}

const PREDICTION_SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionManifest {
    schema_version: u32,
    kind: String,
    n_frames: usize,
    height: usize,
    width: usize,
    tracks: Vec<TrackEntry>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackEntry {
    id: usize,
    class: usize,
    score: f64,
}

fn track_file(kind: &str, i: usize) -> String {
    format!("{kind}_{i:02}.png")
}

/// Whether `dir` holds a prediction manifest.
pub fn is_prediction_dir(dir: &Path) -> bool {
    fs::read_to_string(dir.join(MANIFEST_NAME))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .is_some_and(|v| v.get("kind").and_then(|k| k.as_str()) == Some("predictions"))
}

pub fn write_tracks(set: &TrackSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = BTreeMap::new();
    for (i, t) in set.tracks.iter().enumerate() {
        for (kind, tube) in [("visible", &t.visible), ("amodal", &t.amodal)] {
            let name = track_file(kind, i);
            let path = dir.join(&name);
            save_tube(&path, tube)?;
            files.insert(name, sha256_file(&path)?);
        }
    }
    let manifest = PredictionManifest {
        schema_version: PREDICTION_SCHEMA,
        kind: "predictions".into(),
        n_frames: set.n_frames,
        height: set.height,
        width: set.width,
        tracks: set.tracks.iter().map(|t| TrackEntry { id: t.id, class: t.class, score: t.score }).collect(),
        files,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
}

pub fn read_tracks(dir: &Path) -> Result<TrackSet> {
    let mpath = dir.join(MANIFEST_NAME);
    if !mpath.exists() {
        return Err(Error::MissingFile(mpath));
    }
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let bad = |reason: String| Error::Manifest { path: mpath.clone(), reason };
    let m: PredictionManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.schema_version != PREDICTION_SCHEMA || m.kind != "predictions" {
        return Err(bad(format!("expected predictions schema {PREDICTION_SCHEMA}")));
    }
    let mut set = TrackSet::empty(m.n_frames, m.height, m.width);
    for (i, e) in m.tracks.iter().enumerate() {
        let load = |kind: &str| -> Result<Tube> {
            let name = track_file(kind, i);
            let path = dir.join(&name);
            let expected = m.files.get(&name).ok_or_else(|| bad(format!("no checksum entry for {name}")))?;
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            if &sha256_file(&path)? != expected {
                return Err(Error::Checksum(path));
            }
            load_tube(&path, m.n_frames, m.height, m.width)
        };
        let visible = load("visible")?;
        let amodal = load("amodal")?;
        set.tracks.push(Track { id: e.id, class: e.class, score: e.score, visible, amodal });
    }
    set.validate()?;
    Ok(set)
}
