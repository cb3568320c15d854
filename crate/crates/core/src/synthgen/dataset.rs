//! On-disk dataset layout.
//!
//! ```text
//! <root>/<video>/manifest.json
//! <root>/<video>/frame_0000.png ...     RGB frames
//! <root>/<video>/visible_00.png ...     per-instance masks, frames stacked vertically
//! <root>/<video>/amodal_00.png ...
//! ```
//!
//! The manifest records categories, depths, first visible frames and a
//! SHA-256 checksum of every image file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VideoSample;
use crate::error::{io_err, Error, Result};
use crate::mask::{Mask, Tube};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    n_frames: usize,
    height: usize,
    width: usize,
    instances: Vec<InstanceEntry>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceEntry {
    category: usize,
    depth: i32,
    first_visible_frame: Option<usize>,
}

pub(crate) fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.png")
}

pub(crate) fn visible_name(i: usize) -> String {
    format!("visible_{i:02}.png")
}

pub(crate) fn amodal_name(i: usize) -> String {
    format!("amodal_{i:02}.png")
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn save_rgb(path: &Path, width: usize, height: usize, chw: &[u8]) -> Result<()> {
    let mut hwc = vec![0u8; chw.len()];
    for ch in 0..3 {
        for p in 0..height * width {
            hwc[p * 3 + ch] = chw[ch * height * width + p];
        }
    }
    let img = RgbImage::from_raw(width as u32, height as u32, hwc).expect("buffer sized for image");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub(crate) fn load_rgb(path: &Path, width: usize, height: usize) -> Result<Vec<u8>> {
    let img = open_image(path)?.to_rgb8();
    if (img.width() as usize, img.height() as usize) != (width, height) {
        return Err(Error::Shape(format!("{}: expected {width}x{height}", path.display())));
    }
    let hwc = img.into_raw();
    let mut chw = vec![0u8; hwc.len()];
    for ch in 0..3 {
        for p in 0..height * width {
            chw[ch * height * width + p] = hwc[p * 3 + ch];
        }
    }
    Ok(chw)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub(crate) fn save_tube(path: &Path, tube: &[Mask]) -> Result<()> {
    let (h, w) = (tube[0].height(), tube[0].width());
    let mut buf = Vec::with_capacity(h * w * tube.len());
    for m in tube {
        buf.extend(m.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    }
    let img = GrayImage::from_raw(w as u32, (h * tube.len()) as u32, buf).expect("buffer sized for image");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub(crate) fn load_tube(path: &Path, n_frames: usize, height: usize, width: usize) -> Result<Tube> {
    let img = open_image(path)?.to_luma8();
    if (img.width() as usize, img.height() as usize) != (width, height * n_frames) {
        return Err(Error::Shape(format!(
            "{}: expected {width}x{} mask stack",
            path.display(),
            height * n_frames
        )));
    }
    let raw = img.into_raw();
    Ok(raw
        .chunks(height * width)
        .map(|c| Mask::from_bits(height, width, c.iter().map(|&v| v >= 128).collect()))
        .collect())
}

/// Write one video into `dir` (created if needed).
pub fn write_video(sample: &VideoSample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = BTreeMap::new();
    let mut record = |name: String| -> Result<()> {
        let hash = sha256_file(&dir.join(&name))?;
        files.insert(name, hash);
        Ok(())
    };
    for (t, frame) in sample.frames.iter().enumerate() {
        save_rgb(&dir.join(frame_name(t)), sample.width, sample.height, frame)?;
        record(frame_name(t))?;
    }
    for i in 0..sample.n_instances() {
        save_tube(&dir.join(visible_name(i)), &sample.visible[i])?;
        record(visible_name(i))?;
        save_tube(&dir.join(amodal_name(i)), &sample.amodal[i])?;
        record(amodal_name(i))?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_frames: sample.n_frames(),
        height: sample.height,
        width: sample.width,
        instances: (0..sample.n_instances())
            .map(|i| InstanceEntry {
                category: sample.categories[i],
                depth: sample.depths[i],
                first_visible_frame: sample.first_visible[i],
            })
            .collect(),
        files,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
}

fn verified(dir: &Path, files: &BTreeMap<String, String>, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let expected = files.get(name).ok_or_else(|| Error::Manifest {
        path: dir.join(MANIFEST_NAME),
        reason: format!("no checksum entry for {name}"),
    })?;
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    if &sha256_file(&path)? != expected {
        return Err(Error::Checksum(path));
    }
    Ok(path)
}

/// Read and verify one video directory.
pub fn read_video(dir: &Path) -> Result<VideoSample> {
    let mpath = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(mpath.clone())
        } else {
            Error::Io { path: mpath.clone(), source: e }
        }
    })?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest { path: mpath.clone(), reason: e.to_string() })?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Manifest {
            path: mpath,
            reason: format!("unsupported schema version {}", m.schema_version),
        });
    }
    let frames = (0..m.n_frames)
        .map(|t| load_rgb(&verified(dir, &m.files, &frame_name(t))?, m.width, m.height))
        .collect::<Result<Vec<_>>>()?;
    let mut visible = Vec::new();
    let mut amodal = Vec::new();
    for i in 0..m.instances.len() {
        visible.push(load_tube(&verified(dir, &m.files, &visible_name(i))?, m.n_frames, m.height, m.width)?);
        amodal.push(load_tube(&verified(dir, &m.files, &amodal_name(i))?, m.n_frames, m.height, m.width)?);
    }
    Ok(VideoSample {
        height: m.height,
        width: m.width,
        frames,
        visible,
        amodal,
        categories: m.instances.iter().map(|e| e.category).collect(),
        depths: m.instances.iter().map(|e| e.depth).collect(),
        first_visible: m.instances.iter().map(|e| e.first_visible_frame).collect(),
    })
}

pub(crate) fn video_dir_name(i: usize) -> String {
    format!("video_{i:05}")
}

/// Write `samples` as `root/video_00000`, `root/video_00001`, ...
pub fn write_dataset(samples: &[VideoSample], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    for (i, s) in samples.iter().enumerate() {
        write_video(s, &root.join(video_dir_name(i)))?;
    }
    Ok(())
}

/// Video directories under `root` (those holding a manifest), sorted by name.
pub fn list_videos(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.is_dir() && path.join(MANIFEST_NAME).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<VideoSample>> {
    list_videos(root)?.iter().map(|d| read_video(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_scene, SceneConfig};

    fn two_instance_sample() -> VideoSample {
        let cfg = SceneConfig { min_instances: 2, max_instances: 2, n_frames: 4, height: 32, width: 32, ..Default::default() };
        generate_scene(&cfg, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = two_instance_sample();
        write_dataset(std::slice::from_ref(&s), dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn empty_directory_reads_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_mask_file_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = two_instance_sample();
        write_video(&s, dir.path()).unwrap();
        fs::remove_file(dir.path().join("amodal_01.png")).unwrap();
        let err = read_video(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::MissingFile(p) if p.ends_with("amodal_01.png")), "{err}");
        assert!(err.to_string().contains("amodal_01.png"));
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        write_video(&two_instance_sample(), dir.path()).unwrap();
        let other = generate_scene(&SceneConfig { n_frames: 4, height: 32, width: 32, ..Default::default() }, 99).unwrap();
        save_rgb(&dir.path().join("frame_0001.png"), 32, 32, &other.frames[0]).unwrap();
        assert!(matches!(read_video(dir.path()), Err(Error::Checksum(_))));
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_video(&two_instance_sample(), dir.path()).unwrap();
        fs::write(dir.path().join(MANIFEST_NAME), "{\"schema_version\": 1}").unwrap();
        assert!(matches!(read_video(dir.path()), Err(Error::Manifest { .. })));
    }
}
