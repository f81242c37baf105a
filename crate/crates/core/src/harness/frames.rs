use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backbone::ImageBatch;
use crate::tensor::Tensor4;
use crate::{Error, Result};

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Frames(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Planar `3 × size × size` values in `[0, 1]`, nearest-neighbour
    /// resampled when the size differs.
    pub fn to_planar(&self, size: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; 3 * size * size];
        for y in 0..size {
            let sy = y * self.height / size;
            for x in 0..size {
                let sx = x * self.width / size;
                let px = &self.data[(sy * self.width + sx) * 3..][..3];
                for c in 0..3 {
                    out[(c * size + y) * size + x] = f64::from(px[c]) / 255.0;
                }
            }
        }
        out
    }
}

/// Frame pixels addressed by `(video_id, frame_index)`.
pub trait FrameSource: Sync {
    /// Planar RGB in `[0, 1]`, shape `3 × size × size`.
    fn load(&self, video_id: &str, frame_index: u64, size: usize) -> Result<Vec<f64>>;
}

/// Frames held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryFrames {
    frames: BTreeMap<(String, u64), RgbImage>,
}

impl MemoryFrames {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video_id: &str, frame_index: u64, image: RgbImage) {
        self.frames.insert((video_id.to_string(), frame_index), image);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl FrameSource for MemoryFrames {
    fn load(&self, video_id: &str, frame_index: u64, size: usize) -> Result<Vec<f64>> {
        self.frames
            .get(&(video_id.to_string(), frame_index))
            .map(|img| img.to_planar(size))
            .ok_or_else(|| Error::Frames(format!("no frame {frame_index} for video {video_id:?}")))
    }
}

/// Stack frames into an image batch.
pub fn load_batch(source: &dyn FrameSource, keys: &[(&str, u64)], size: usize) -> Result<ImageBatch> {
    let mut data = Vec::with_capacity(keys.len() * 3 * size * size);
    for &(video, frame) in keys {
        let px = source.load(video, frame, size)?;
        if px.len() != 3 * size * size {
            return Err(Error::Frames(format!("frame {frame} of {video:?} has {} values", px.len())));
        }
        data.extend_from_slice(&px);
    }
    Tensor4::from_vec(keys.len(), 3, size, size, data)
}
