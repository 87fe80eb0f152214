//! Loader for KITTI raw-data directory layouts.
//!
//! ```text
//! <root>/<date>/calib_cam_to_cam.txt
//! <root>/<date>/<drive>/image_02/data/0000000000.png   (or .ppm)
//! <root>/<date>/<drive>/proj_depth/groundtruth/image_02/0000000005.png   (optional)
//! ```
//!
//! Split and exclusion files use one `<date>/<drive> <frame> <l|r>` entry
//! per line.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::image_io::{load_depth_png16, load_rgb, resize};
use super::ImageTriplet;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    /// `<date>/<drive>`.
    pub folder: String,
    pub index: usize,
    /// `'l'` (image_02) or `'r'` (image_03).
    pub side: char,
}

impl FrameRef {
    pub fn parse(line: &str) -> Result<Self> {
        let mut it = line.split_whitespace();
        let (Some(folder), Some(index)) = (it.next(), it.next()) else {
            return Err(Error::Data(format!("split line {line:?} needs <folder> <frame> [side]")));
        };
        let index = index
            .parse()
            .map_err(|_| Error::Data(format!("split line {line:?}: frame index is not an integer")))?;
        let side = match it.next() {
            None | Some("l") => 'l',
            Some("r") => 'r',
            Some(s) => return Err(Error::Data(format!("split line {line:?}: side {s:?}"))),
        };
        Ok(Self { folder: folder.trim_end_matches('/').to_string(), index, side })
    }

    pub fn with_index(&self, index: usize) -> Self {
        Self { index, ..self.clone() }
    }

    fn camera_dir(&self) -> &'static str {
        if self.side == 'r' {
            "image_03"
        } else {
            "image_02"
        }
    }

    /// Path of the frame image, preferring PNG over PPM.
    pub fn image_path(&self, root: &Path) -> Option<PathBuf> {
        let dir = root.join(&self.folder).join(self.camera_dir()).join("data");
        ["png", "ppm"]
            .iter()
            .map(|ext| dir.join(format!("{:010}.{ext}", self.index)))
            .find(|p| p.is_file())
    }

    pub fn depth_path(&self, root: &Path) -> PathBuf {
        root.join(&self.folder)
            .join("proj_depth/groundtruth")
            .join(self.camera_dir())
            .join(format!("{:010}.png", self.index))
    }

    fn date(&self) -> &str {
        self.folder.split('/').next().unwrap_or(&self.folder)
    }
}

pub fn read_frame_list(path: &Path) -> Result<Vec<FrameRef>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(FrameRef::parse)
        .collect()
}

/// Rectified intrinsics of camera 2 (`side = 'l'`) or 3 from the
/// `P_rect_0x` projection matrix of a calibration file.
pub fn parse_calibration(text: &str, side: char) -> Result<Intrinsics> {
    let key = if side == 'r' { "P_rect_03:" } else { "P_rect_02:" };
    let line = text
        .lines()
        .find(|l| l.trim_start().starts_with(key))
        .ok_or_else(|| Error::Data(format!("calibration lacks {key}")))?;
    let vals: Vec<f64> = line
        .trim_start()
        .trim_start_matches(key)
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| Error::Data(format!("{key} value {v:?} is not a number"))))
        .collect::<Result<_>>()?;
    if vals.len() != 12 {
        return Err(Error::Data(format!("{key} has {} values, expected 12", vals.len())));
    }
    Intrinsics::new(vals[0], vals[5], vals[2], vals[6])
        .map_err(|e| Error::Data(format!("{key}: {e}")))
}

#[derive(Clone, Debug)]
pub struct KittiOptions {
    pub height: usize,
    pub width: usize,
    /// Frames listed here never become a triplet's middle frame.
    pub exclude: Option<PathBuf>,
    /// Load `proj_depth` ground truth when present.
    pub load_depth: bool,
}

/// Every frame of every drive under `root`, sorted.
pub fn scan_frames(root: &Path) -> Result<Vec<FrameRef>> {
    let mut frames = Vec::new();
    let read_dir = |p: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    for date in read_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        for drive in read_dir(&date)?.into_iter().filter(|p| p.is_dir()) {
            let data = drive.join("image_02/data");
            if !data.is_dir() {
                continue;
            }
            let folder = format!(
                "{}/{}",
                date.file_name().unwrap_or_default().to_string_lossy(),
                drive.file_name().unwrap_or_default().to_string_lossy()
            );
            for f in read_dir(&data)? {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if let Ok(index) = stem.parse::<usize>() {
                    frames.push(FrameRef { folder: folder.clone(), index, side: 'l' });
                }
            }
        }
    }
    frames.sort();
    frames.dedup();
    Ok(frames)
}

/// Triplets `(t−1, t, t+1)` for every middle frame in `split` (or every
/// frame under `root`). Frames without both neighbours are skipped with a
/// log line.
pub fn load_kitti_layout(root: &Path, split: Option<&Path>, opts: &KittiOptions) -> Result<Vec<ImageTriplet>> {
    let frames = match split {
        Some(p) => read_frame_list(p)?,
        None => scan_frames(root)?,
    };
    let excluded: HashSet<FrameRef> = match &opts.exclude {
        Some(p) => read_frame_list(p)?.into_iter().collect(),
        None => HashSet::new(),
    };
    let mut out = Vec::new();
    for f in &frames {
        if excluded.contains(f) {
            continue;
        }
        let Some(target_path) = f.image_path(root) else {
            warn!("{} {}: frame missing, skipped", f.folder, f.index);
            continue;
        };
        let neighbours = f
            .index
            .checked_sub(1)
            .and_then(|i| f.with_index(i).image_path(root))
            .zip(f.with_index(f.index + 1).image_path(root));
        let Some((prev_path, next_path)) = neighbours else {
            info!("{} {}: missing neighbour frame, skipped", f.folder, f.index);
            continue;
        };
        let calib_path = root.join(f.date()).join("calib_cam_to_cam.txt");
        let calib = std::fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
        let k = parse_calibration(&calib, f.side)?;
        let raw = load_rgb(&target_path)?;
        let (h0, w0) = (raw.shape()[1], raw.shape()[2]);
        let sx = opts.width as f64 / w0 as f64;
        let sy = opts.height as f64 / h0 as f64;
        let depth_path = f.depth_path(root);
        let depth = if opts.load_depth && depth_path.is_file() {
            Some(load_depth_png16(&depth_path)?)
        } else {
            None
        };
        out.push(ImageTriplet {
            id: format!("{} {:010} {}", f.folder, f.index, f.side),
            prev: Some(resize(&load_rgb(&prev_path)?, opts.height, opts.width)?),
            target: resize(&raw, opts.height, opts.width)?,
            next: Some(resize(&load_rgb(&next_path)?, opts.height, opts.width)?),
            depth,
            intrinsics: Some(k.scaled(sx, sy)),
            poses: None,
        });
    }
    Ok(out)
}
