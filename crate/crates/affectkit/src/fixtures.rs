//! On-disk form of synthetic fixtures.
//!
//! ```text
//! root/
//!   manifest.json
//!   images/{video_id}/{frame:05}.png
//!   annotations/{challenge}/{Train_Set|Validation_Set}/{video_id}.txt
//! ```

use std::fs;
use std::path::Path;

use affectkit_core::harness::{FixtureSet, FixtureSpec, Latent};
use affectkit_core::task::Split;
use affectkit_core::Task;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::frames::frame_file_name;

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct VideoEntry<'a> {
    task: Task,
    split: Split,
    video_id: &'a str,
    frames: usize,
    invalid: usize,
    latents: &'a [Latent],
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    spec: &'a FixtureSpec,
    videos: Vec<VideoEntry<'a>>,
}

/// Write `set` below `root`. The output depends only on `set`.
pub fn write_fixtures(set: &FixtureSet, root: &Path) -> Result<()> {
    let cfg = affectkit_core::curation::CurationConfig::default();
    for v in &set.videos {
        let img_dir = root.join(IMAGES_DIR).join(&v.video_id);
        fs::create_dir_all(&img_dir).at(&img_dir)?;
        for (i, frame) in v.frames.iter().enumerate() {
            let path = img_dir.join(frame_file_name(i as u64 + 1));
            let buf = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data.clone())
                .expect("fixture frame buffer matches its size");
            buf.save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| Error::Image { path, source })?;
        }
        let ann_dir = root
            .join(ANNOTATIONS_DIR)
            .join(v.task.challenge_dir())
            .join(v.split.dir_name());
        fs::create_dir_all(&ann_dir).at(&ann_dir)?;
        let path = ann_dir.join(format!("{}.txt", v.video_id));
        fs::write(&path, v.annotation_text(set.spec.header)).at(&path)?;
    }
    let manifest = Manifest {
        seed: set.seed,
        spec: &set.spec,
        videos: set
            .videos
            .iter()
            .map(|v| VideoEntry {
                task: v.task,
                split: v.split,
                video_id: &v.video_id,
                frames: v.frames.len(),
                invalid: v.invalid_count(&cfg),
                latents: &v.latents,
            })
            .collect(),
    };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, json).at(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::curate_dir;
    use crate::frames::PngFrames;
    use affectkit_core::harness::{generate_fixtures, FrameSource};

    #[test]
    fn written_fixtures_match_memory() {
        let spec = FixtureSpec {
            image_size: 12,
            train_videos: 1,
            val_videos: 1,
            frames_per_video: 6,
            invalid_fraction: 0.3,
            ..FixtureSpec::default()
        };
        let set = generate_fixtures(5, &spec).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_fixtures(&set, tmp.path()).unwrap();
        let disk = PngFrames::new(tmp.path().join(IMAGES_DIR));
        let mem = set.frames();
        let v = &set.videos[0];
        assert_eq!(disk.load(&v.video_id, 6, 12).unwrap(), mem.load(&v.video_id, 6, 12).unwrap());
        let cfg = affectkit_core::curation::CurationConfig::default();
        for task in Task::ALL {
            let idx = curate_dir(&tmp.path().join(ANNOTATIONS_DIR), task, &cfg).unwrap();
            for split in Split::ALL {
                assert_eq!(idx[&split], set.curated(task, split, &cfg).unwrap());
            }
        }
    }
}
