//! Deterministic synthetic occlusion videos with exact visible and amodal
//! ground truth.
//!
//! Every instance is a rigid shape translating at constant velocity (with an
//! optional wall bounce) at a fixed depth. Amodal masks are the full
//! silhouettes clipped to the frame; visible masks subtract every closer
//! silhouette. An instance has no amodal mask before the first frame in
//! which some part of it is visible.

mod dataset;

pub use dataset::{list_videos, read_dataset, read_video, write_dataset, write_video, MANIFEST_NAME, SCHEMA_VERSION};
pub(crate) use dataset::{save_rgb, save_tube, load_tube, sha256_file};
#[cfg(test)]
pub(crate) use dataset::load_rgb;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{Mask, Tube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Rectangle, ShapeKind::Triangle];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Radius for circles, half-extent for rectangles and triangles.
    pub size: f64,
    pub position: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Smaller is closer to the camera.
    pub depth: i32,
    pub category: usize,
    pub bounce: bool,
}

impl ShapeSpec {
    /// Centre at frame `t`. With `bounce`, the centre reflects off the walls
    /// `0` and `dim - 1` whenever it crosses one while moving outward.
    pub fn center_at(&self, t: usize, bounds: (usize, usize)) -> (f64, f64) {
        let (mut x, mut y) = self.position;
        if !self.bounce {
            return (x + self.velocity.0 * t as f64, y + self.velocity.1 * t as f64);
        }
        let (mut vx, mut vy) = self.velocity;
        let (xmax, ymax) = ((bounds.1 - 1) as f64, (bounds.0 - 1) as f64);
        for _ in 0..t {
            x += vx;
            y += vy;
            if x < 0.0 && vx < 0.0 {
                x = -x;
                vx = -vx;
            } else if x > xmax && vx > 0.0 {
                x = 2.0 * xmax - x;
                vx = -vx;
            }
            if y < 0.0 && vy < 0.0 {
                y = -y;
                vy = -vy;
            } else if y > ymax && vy > 0.0 {
                y = 2.0 * ymax - y;
                vy = -vy;
            }
        }
        (x, y)
    }

    /// Whether integer pixel `(px, py)` lies inside the shape centred at `c`.
    fn contains(&self, c: (f64, f64), px: f64, py: f64) -> bool {
        let (dx, dy) = (px - c.0, py - c.1);
        let s = self.size;
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= s * s,
            ShapeKind::Rectangle => dx.abs() <= s && dy.abs() <= 0.6 * s,
            ShapeKind::Triangle => {
                // apex up, base down; edge-function test
                let (ax, ay) = (0.0, -s);
                let (bx, by) = (-s, s);
                let (cx, cy) = (s, s);
                let e = |x0: f64, y0: f64, x1: f64, y1: f64| (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0);
                let (e0, e1, e2) = (e(ax, ay, bx, by), e(bx, by, cx, cy), e(cx, cy, ax, ay));
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }
}

/// Full silhouette of `shape` at frame `t`, clipped to `bounds = (H, W)`.
pub fn rasterize_amodal(shape: &ShapeSpec, t: usize, bounds: (usize, usize)) -> Mask {
    let (h, w) = bounds;
    let c = shape.center_at(t, bounds);
    let reach = shape.size.ceil() + 1.0;
    let mut mask = Mask::empty(h, w);
    let y0 = (c.1 - reach).floor().max(0.0) as i64;
    let y1 = ((c.1 + reach).ceil() as i64).min(h as i64 - 1);
    let x0 = (c.0 - reach).floor().max(0.0) as i64;
    let x1 = ((c.0 + reach).ceil() as i64).min(w as i64 - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if shape.contains(c, x as f64, y as f64) {
                mask.set(y as usize, x as usize, true);
            }
        }
    }
    mask
}

/// `visible_i = amodal_i` minus every silhouette with a smaller depth.
pub fn compose_visible(amodal: &[Mask], depths: &[i32]) -> Result<Vec<Mask>> {
    if amodal.len() != depths.len() {
        return Err(Error::InvalidInput(format!(
            "{} masks but {} depths",
            amodal.len(),
            depths.len()
        )));
    }
    let mut sorted = depths.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateDepth(w[0]));
    }
    Ok(amodal
        .iter()
        .zip(depths)
        .map(|(mask, &d)| {
            amodal
                .iter()
                .zip(depths)
                .filter(|(_, &od)| od < d)
                .fold(mask.clone(), |acc, (occ, _)| acc.difference(occ))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub num_classes: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub max_speed: f64,
    /// Probability that an instance starts outside the frame and enters later.
    pub enter_prob: f64,
    pub bounce: bool,
    /// Standard deviation of additive per-pixel noise, in `[0, 255]` units.
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 16,
            height: 64,
            width: 64,
            min_instances: 2,
            max_instances: 5,
            num_classes: 3,
            min_size: 6.0,
            max_size: 12.0,
            max_speed: 2.5,
            enter_prob: 0.25,
            bounce: true,
            noise_std: 6.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if self.n_frames == 0 {
            return bad("n_frames must be positive");
        }
        if self.height == 0 || self.width == 0 {
            return bad("frame size must be positive");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad("need 1 <= min_instances <= max_instances");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return bad("need 0 < min_size <= max_size");
        }
        if !(0.0..=1.0).contains(&self.enter_prob) {
            return bad("enter_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One video with per-instance ground truth. Frames are channel-first RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub height: usize,
    pub width: usize,
    /// `n_frames` buffers of `3 * height * width` bytes.
    pub frames: Vec<Vec<u8>>,
    pub visible: Vec<Tube>,
    pub amodal: Vec<Tube>,
    pub categories: Vec<usize>,
    pub depths: Vec<i32>,
    pub first_visible: Vec<Option<usize>>,
}

impl VideoSample {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_instances(&self) -> usize {
        self.categories.len()
    }

    /// Frames scaled to `[0, 1]` as `[n_frames, 3, h, w]` data.
    pub fn frame_values(&self) -> Vec<f64> {
        self.frames.iter().flatten().map(|&b| b as f64 / 255.0).collect()
    }

    /// Assemble a sample from shapes: rasterize, resolve occlusion, apply the
    /// first-visible rule, and paint frames.
    pub fn from_shapes(
        shapes: &[ShapeSpec],
        colors: &[[f64; 3]],
        n_frames: usize,
        bounds: (usize, usize),
        background: [f64; 3],
        noise: &mut dyn FnMut() -> f64,
    ) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidInput("scene needs at least one instance".into()));
        }
        if n_frames == 0 {
            return Err(Error::InvalidInput("scene needs at least one frame".into()));
        }
        let (h, w) = bounds;
        let n = shapes.len();
        let depths: Vec<i32> = shapes.iter().map(|s| s.depth).collect();
        let mut amodal: Vec<Tube> = vec![Vec::with_capacity(n_frames); n];
        let mut visible: Vec<Tube> = vec![Vec::with_capacity(n_frames); n];
        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let full: Vec<Mask> = shapes.iter().map(|s| rasterize_amodal(s, t, bounds)).collect();
            let vis = compose_visible(&full, &depths)?;
            let mut frame = vec![0u8; 3 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let color = (0..n)
                        .find(|&i| vis[i].get(y, x))
                        .map_or(background, |i| colors[i]);
                    for ch in 0..3 {
                        let v = color[ch] + noise();
                        frame[(ch * h + y) * w + x] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            frames.push(frame);
            for i in 0..n {
                amodal[i].push(full[i].clone());
                visible[i].push(vis[i].clone());
            }
        }
        let first_visible: Vec<Option<usize>> =
            visible.iter().map(|tube| tube.iter().position(|m| !m.is_empty())).collect();
        for (i, fv) in first_visible.iter().enumerate() {
            let start = fv.unwrap_or(n_frames);
            for m in &mut amodal[i][..start] {
                *m = Mask::empty(h, w);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            frames,
            visible,
            amodal,
            categories: shapes.iter().map(|s| s.category).collect(),
            depths,
            first_visible,
        })
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

fn sample_shape(rng: &mut ChaCha8Rng, cfg: &SceneConfig, depth: i32) -> ShapeSpec {
    let category = rng.gen_range(0..cfg.num_classes);
    let kind = ShapeKind::ALL[category % ShapeKind::ALL.len()];
    let size = rng.gen_range(cfg.min_size..=cfg.max_size);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let speed = rng.gen_range(0.3 * cfg.max_speed..=cfg.max_speed);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut velocity = (speed * angle.cos(), speed * angle.sin());
    let mut bounce = cfg.bounce;
    let position = if rng.gen_bool(cfg.enter_prob) {
        // start just outside one wall, heading inward, entering within a few frames
        let lead = size + 1.0 + rng.gen_range(1.0..=4.0) * speed;
        bounce = false;
        match rng.gen_range(0..4) {
            0 => {
                velocity.0 = velocity.0.abs().max(0.5 * speed);
                (-lead, rng.gen_range(0.2 * h..0.8 * h))
            }
            1 => {
                velocity.0 = -velocity.0.abs().max(0.5 * speed);
                (w - 1.0 + lead, rng.gen_range(0.2 * h..0.8 * h))
            }
            2 => {
                velocity.1 = velocity.1.abs().max(0.5 * speed);
                (rng.gen_range(0.2 * w..0.8 * w), -lead)
            }
            _ => {
                velocity.1 = -velocity.1.abs().max(0.5 * speed);
                (rng.gen_range(0.2 * w..0.8 * w), h - 1.0 + lead)
            }
        }
    } else {
        // keep the whole shape inside when it fits, else centre it
        let mut inside = |extent: f64| {
            if extent - size > size {
                rng.gen_range(size..extent - size)
            } else {
                extent / 2.0
            }
        };
        (inside(w), inside(h))
    };
    ShapeSpec { kind, size, position, velocity, depth, category, bounce }
}

/// Deterministic scene for `(cfg, seed)`.
///
/// Scenes in which some instance would never be visible are redrawn from the
/// same random stream; after a bounded number of attempts the last draw is
/// kept and the instance carries `first_visible = None`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<VideoSample> {
    cfg.validate().map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = (cfg.height, cfg.width);
    let mut last = None;
    for _attempt in 0..32 {
        let n = rng.gen_range(cfg.min_instances..=cfg.max_instances);
        let mut depths: Vec<i32> = (0..n as i32).collect();
        depths.shuffle(&mut rng);
        let shapes: Vec<ShapeSpec> = depths.iter().map(|&d| sample_shape(&mut rng, cfg, d)).collect();
        let hue0 = rng.gen_range(0.0..1.0);
        let mut hues: Vec<f64> = (0..n).map(|i| hue0 + i as f64 / n as f64).collect();
        hues.shuffle(&mut rng);
        let colors: Vec<[f64; 3]> = hues
            .iter()
            .map(|&hue| hsv_to_rgb(hue, rng.gen_range(0.6..0.95), rng.gen_range(0.75..1.0)))
            .collect();
        let background = [30.0, 30.0, 34.0];
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let std = cfg.noise_std;
        let mut noise = move || {
            // Irwin-Hall approximation of a unit normal
            let s: f64 = (0..12).map(|_| noise_rng.gen::<f64>()).sum();
            (s - 6.0) * std
        };
        let sample = VideoSample::from_shapes(&shapes, &colors, cfg.n_frames, bounds, background, &mut noise)?;
        let all_seen = sample.first_visible.iter().all(Option::is_some);
        last = Some(sample);
        if all_seen {
            break;
        }
    }
    Ok(last.expect("at least one attempt"))
}

/// `count` scenes with seeds `base_seed + i`.
pub fn generate_dataset(cfg: &SceneConfig, count: usize, base_seed: u64) -> Result<Vec<VideoSample>> {
    (0..count as u64).map(|i| generate_scene(cfg, base_seed.wrapping_add(i))).collect()
}

/// Violations of the ground-truth invariants, as human-readable messages.
pub fn check_invariants(sample: &VideoSample) -> Vec<String> {
    let mut errors = Vec::new();
    let (h, w) = (sample.height, sample.width);
    let n = sample.n_instances();
    for i in 0..n {
        for t in 0..sample.n_frames() {
            let (vis, am) = (&sample.visible[i][t], &sample.amodal[i][t]);
            if (vis.height(), vis.width(), am.height(), am.width()) != (h, w, h, w) {
                errors.push(format!("instance {i} frame {t}: mask exceeds frame bounds"));
            }
            if !vis.is_subset_of(am) {
                errors.push(format!("instance {i} frame {t}: visible not inside amodal"));
            }
            let before_first = sample.first_visible[i].is_none_or(|f| t < f);
            if before_first && !am.is_empty() {
                errors.push(format!("instance {i} frame {t}: amodal before first visible frame"));
            }
        }
        let expected = sample.visible[i].iter().position(|m| !m.is_empty());
        if expected != sample.first_visible[i] {
            errors.push(format!("instance {i}: first_visible inconsistent with visible tube"));
        }
    }
    for t in 0..sample.n_frames() {
        for i in 0..n {
            for j in i + 1..n {
                if sample.visible[i][t].intersection_count(&sample.visible[j][t]) > 0 {
                    errors.push(format!("frame {t}: visible masks {i} and {j} overlap"));
                }
            }
        }
    }
    errors
}
