use std::path::{Path, PathBuf};

use affectkit_core::harness::{FrameSource, RgbImage};
use affectkit_core::Error as CoreError;
use image::imageops::FilterType;

/// File name of a frame inside its video directory, e.g. `00012.png`.
pub fn frame_file_name(frame_index: u64) -> String {
    format!("{frame_index:05}.png")
}

/// Frames stored as `root/{video_id}/{frame:05}.png`. Images whose size
/// differs from the requested one are resampled with a triangle filter.
#[derive(Debug, Clone)]
pub struct PngFrames {
    root: PathBuf,
}

impl PngFrames {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, video_id: &str, frame_index: u64) -> PathBuf {
        self.root.join(video_id).join(frame_file_name(frame_index))
    }
}

pub fn read_png(path: &Path, size: usize) -> Result<RgbImage, CoreError> {
    let img = image::open(path)
        .map_err(|e| CoreError::Frames(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let s = size as u32;
    let img = if img.width() == s && img.height() == s {
        img
    } else {
        image::imageops::resize(&img, s, s, FilterType::Triangle)
    };
    RgbImage::new(size, size, img.into_raw())
}

impl FrameSource for PngFrames {
    fn load(&self, video_id: &str, frame_index: u64, size: usize) -> Result<Vec<f64>, CoreError> {
        Ok(read_png(&self.path(video_id, frame_index), size)?.to_planar(size))
    }
}
