//! Overlay rendering: visible masks filled with a translucent track colour,
//! amodal masks outlined in the same colour.

use std::fs;
use std::path::{Path, PathBuf};

use super::tracks::TrackSet;
use crate::error::{io_err, Error, Result};
use crate::synthgen::{save_rgb, VideoSample};

/// Colour of track `id`: golden-ratio hue steps at full value.
pub fn track_color(id: usize) -> [u8; 3] {
    let hue = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.85, 1.0);
    let c = v * s;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let (r, g, b) = match hue as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

/// Writes `frame_%04d.png` composites into `out_dir` and returns their paths.
pub fn render_overlays(video: &VideoSample, tracks: &TrackSet, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if (tracks.n_frames, tracks.height, tracks.width) != (video.n_frames(), video.height, video.width) {
        return Err(Error::Shape("track set does not match the video".into()));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let hw = video.height * video.width;
    let mut order: Vec<_> = tracks.tracks.iter().collect();
    order.sort_by_key(|t| t.id);
    let mut paths = Vec::with_capacity(video.n_frames());
    for (t, frame) in video.frames.iter().enumerate() {
        let mut img = frame.clone();
        for track in &order {
            let color = track_color(track.id);
            for (p, _) in track.visible[t].bits().iter().enumerate().filter(|(_, b)| **b) {
                for ch in 0..3 {
                    let v = &mut img[ch * hw + p];
                    *v = ((*v as u16 + color[ch] as u16) / 2) as u8;
                }
            }
            for (p, _) in track.amodal[t].boundary().bits().iter().enumerate().filter(|(_, b)| **b) {
                for ch in 0..3 {
                    img[ch * hw + p] = color[ch];
                }
            }
        }
        let path = out_dir.join(format!("frame_{t:04}.png"));
        save_rgb(&path, video.width, video.height, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_scene, load_rgb, SceneConfig};

    fn video() -> VideoSample {
        generate_scene(&SceneConfig { n_frames: 3, height: 32, width: 32, ..Default::default() }, 4).unwrap()
    }

    #[test]
    fn empty_set_copies_frames() {
        let v = video();
        let dir = tempfile::tempdir().unwrap();
        let paths = render_overlays(&v, &TrackSet::empty(3, 32, 32), dir.path()).unwrap();
        for (p, f) in paths.iter().zip(&v.frames) {
            assert_eq!(&load_rgb(p, 32, 32).unwrap(), f);
        }
    }

    #[test]
    fn rendering_is_byte_identical_across_runs() {
        let v = video();
        let set = TrackSet::from_ground_truth(&v);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = render_overlays(&v, &set, a.path()).unwrap();
        let pb = render_overlays(&v, &set, b.path()).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }

    #[test]
    fn outline_colour_is_the_track_colour_in_every_frame() {
        let v = video();
        let set = TrackSet::from_ground_truth(&v);
        let dir = tempfile::tempdir().unwrap();
        let paths = render_overlays(&v, &set, dir.path()).unwrap();
        // tracks are drawn in id order, so the last one's outline is never covered
        let last = set.tracks.iter().max_by_key(|t| t.id).unwrap();
        let color = track_color(last.id);
        for (t, p) in paths.iter().enumerate() {
            let img = load_rgb(p, 32, 32).unwrap();
            for (i, _) in last.amodal[t].boundary().bits().iter().enumerate().filter(|(_, b)| **b) {
                assert_eq!([img[i], img[1024 + i], img[2048 + i]], color);
            }
        }
        assert_ne!(track_color(0), track_color(1));
        assert_eq!(track_color(7), track_color(7));
    }
}
