//! Run directories, prediction files and the comparison report.

use std::fs;
use std::path::{Path, PathBuf};

use affectkit_core::evaluation::{ComparisonTable, ThresholdVector};
use affectkit_core::harness::Predictions;
use affectkit_core::Task;

use crate::checkpoint;
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.afk";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

/// Video ids with their sorted frame indices.
pub type VideoFrames = Vec<(String, Vec<u64>)>;

/// Checkpoint files directly inside `runs` or one level below, sorted.
pub fn find_checkpoints(runs: &Path) -> Result<Vec<PathBuf>> {
    let is_ckpt = |p: &Path| p.is_file() && p.extension().and_then(|e| e.to_str()) == Some(checkpoint::EXTENSION);
    let mut out = Vec::new();
    for entry in fs::read_dir(runs).at(runs)? {
        let p = entry.at(runs)?.path();
        if is_ckpt(&p) {
            out.push(p);
        } else if p.is_dir() {
            for inner in fs::read_dir(&p).at(&p)? {
                let q = inner.at(&p)?.path();
                if is_ckpt(&q) {
                    out.push(q);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Validation scores of every run, one row per method. When several runs
/// fill the same cell the last in path order wins.
pub fn comparison(runs: &Path) -> Result<ComparisonTable> {
    let paths = find_checkpoints(runs)?;
    if paths.is_empty() {
        return Err(Error::Usage(format!("no checkpoints below {}", runs.display())));
    }
    let mut table = ComparisonTable::new();
    for path in paths {
        let m = checkpoint::load(&path)?;
        let report = m.report.as_ref().ok_or_else(|| Error::Format {
            path: path.clone(),
            reason: "checkpoint has no validation report".into(),
        })?;
        table.row_mut(&m.config.method()).absorb(report);
    }
    Ok(table)
}

/// One line per frame in the annotation file format.
pub fn prediction_lines(preds: &Predictions, thresholds: &ThresholdVector) -> Vec<String> {
    match preds {
        Predictions::Va(p) => p.iter().map(|v| format!("{},{}", v.valence, v.arousal)).collect(),
        Predictions::Expr(p) => p.iter().map(|e| e.0.to_string()).collect(),
        Predictions::Au(m) => (0..m.rows)
            .map(|r| {
                m.row(r)
                    .iter()
                    .zip(thresholds.0)
                    .map(|(&p, t)| if p >= t { "1" } else { "0" })
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect(),
    }
}

/// Videos below an image directory: subdirectories holding numbered PNG
/// frames. A directory that directly holds frames is a single video.
/// Returns the frame root and, per video, its sorted frame indices.
pub fn scan_images(dir: &Path) -> Result<(PathBuf, VideoFrames)> {
    fn frames_in(dir: &Path) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).at(dir)? {
            let p = e.at(dir)?.path();
            if p.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(i) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
    let direct = frames_in(dir)?;
    if !direct.is_empty() {
        let name = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Usage(format!("cannot name video {}", dir.display())))?;
        let parent = dir.parent().unwrap_or(Path::new("."));
        return Ok((parent.to_path_buf(), vec![(name.to_string(), direct)]));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    subdirs.retain(|p| p.is_dir());
    subdirs.sort();
    let mut videos = Vec::new();
    for d in subdirs {
        let frames = frames_in(&d)?;
        if let (false, Some(name)) = (frames.is_empty(), d.file_name().and_then(|s| s.to_str())) {
            videos.push((name.to_string(), frames));
        }
    }
    if videos.is_empty() {
        return Err(Error::Usage(format!("no PNG frames below {}", dir.display())));
    }
    Ok((dir.to_path_buf(), videos))
}

/// Write `{out}/{video}.txt` per video with a header line.
pub fn write_predictions(
    out: &Path,
    task: Task,
    videos: &[(String, Vec<u64>)],
    lines: &[String],
) -> Result<()> {
    fs::create_dir_all(out).at(out)?;
    let mut rest = lines;
    for (video, frames) in videos {
        let (mine, tail) = rest.split_at(frames.len());
        rest = tail;
        let mut text = task.annotation_header();
        text.push('\n');
        for l in mine {
            text.push_str(l);
            text.push('\n');
        }
        let path = out.join(format!("{video}.txt"));
        fs::write(&path, text).at(&path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use affectkit_core::curation::{parse_annotation_file, ExpressionId, VaPair};
    use affectkit_core::tensor::Matrix;

    #[test]
    fn prediction_lines_parse_back() {
        let va = Predictions::Va(vec![VaPair {
            valence: 0.25,
            arousal: -0.5,
        }]);
        let lines = prediction_lines(&va, &ThresholdVector::default());
        assert_eq!(lines, vec!["0.25,-0.5"]);
        let recs = parse_annotation_file(&lines.join("\n"), Task::Va, "v").unwrap();
        assert_eq!(recs[0].payload.va().unwrap().arousal, -0.5);

        let ex = Predictions::Expr(vec![ExpressionId(3), ExpressionId(0)]);
        assert_eq!(prediction_lines(&ex, &ThresholdVector::default()), vec!["3", "0"]);

        let mut probs = Matrix::zeros(1, 12);
        probs.data[0] = 0.5;
        probs.data[1] = 0.49;
        probs.data[2] = 0.3;
        let mut t = ThresholdVector::default();
        t.0[2] = 0.25;
        let au = prediction_lines(&Predictions::Au(probs), &t);
        assert_eq!(au, vec!["1,0,1,0,0,0,0,0,0,0,0,0"]);
        assert!(parse_annotation_file(&au[0], Task::Au, "v").is_ok());
    }

    #[test]
    fn scans_video_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let img = image::RgbImage::new(2, 2);
        for (v, f) in [("b", 2), ("b", 10), ("a", 1)] {
            let d = tmp.path().join(v);
            fs::create_dir_all(&d).unwrap();
            img.save(d.join(crate::frames::frame_file_name(f))).unwrap();
        }
        let (root, videos) = scan_images(tmp.path()).unwrap();
        assert_eq!(root, tmp.path());
        assert_eq!(videos, vec![("a".to_string(), vec![1]), ("b".to_string(), vec![2, 10])]);
        let (root, single) = scan_images(&tmp.path().join("b")).unwrap();
        assert_eq!(root, tmp.path());
        assert_eq!(single.len(), 1);
    }
}
