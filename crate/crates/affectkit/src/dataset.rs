//! Annotation directories and curated index files.
//!
//! An annotation directory holds one text file per video, grouped into
//! `Train_Set` and `Validation_Set` subdirectories, optionally below a
//! per-task challenge directory. Curated indices are JSON lines, one frame
//! per line, each tagged with its split.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use affectkit_core::curation::{
    check_unique_keys, filter_invalid, parse_annotation_file, summarize, CuratedIndex, CurationConfig, CurationSummary,
    FrameAnnotation,
};
use affectkit_core::task::Split;
use affectkit_core::Task;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    split: Split,
    #[serde(flatten)]
    record: FrameAnnotation,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    out.sort();
    Ok(out)
}

fn split_of(dir: &Path) -> Option<Split> {
    dir.file_name()?.to_str()?.parse().ok()
}

/// Split directories below `root`, which may be the annotation root, a
/// challenge directory or a single split directory.
pub fn split_dirs(root: &Path, task: Task) -> Result<Vec<(Split, PathBuf)>> {
    let challenge = root.join(task.challenge_dir());
    let base = if challenge.is_dir() { challenge } else { root.to_path_buf() };
    if let Some(s) = split_of(&base) {
        return Ok(vec![(s, base)]);
    }
    let found: Vec<(Split, PathBuf)> = sorted_entries(&base)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| split_of(&p).map(|s| (s, p)))
        .collect();
    if found.is_empty() {
        return Err(Error::Format {
            path: base,
            reason: format!("no {} or {} directory", Split::Train.dir_name(), Split::Val.dir_name()),
        });
    }
    Ok(found)
}

/// Parse every `.txt` file of one split directory; the file stem is the
/// video id.
pub fn read_split(dir: &Path, task: Task) -> Result<Vec<FrameAnnotation>> {
    let mut records = Vec::new();
    for path in sorted_entries(dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let video = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = fs::read_to_string(&path).at(&path)?;
        let parsed = parse_annotation_file(&text, task, &video).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        records.extend(parsed);
    }
    check_unique_keys(&records)?;
    Ok(records)
}

/// Parse and filter every split found below `root`.
pub fn curate_dir(root: &Path, task: Task, config: &CurationConfig) -> Result<BTreeMap<Split, CuratedIndex>> {
    let mut out = BTreeMap::new();
    for (split, dir) in split_dirs(root, task)? {
        let records = read_split(&dir, task)?;
        out.insert(split, filter_invalid(&records, task, config));
    }
    Ok(out)
}

pub fn summary(indices: &BTreeMap<Split, CuratedIndex>) -> Result<CurationSummary> {
    let named = indices.iter().map(|(s, i)| (s.as_str().to_string(), i.clone())).collect();
    Ok(summarize(&named)?)
}

pub fn write_index(indices: &BTreeMap<Split, CuratedIndex>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for (&split, index) in indices {
        for record in &index.records {
            let line = IndexLine {
                split,
                record: record.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            w.write_all(b"\n").at(path)?;
        }
    }
    w.flush().at(path)
}

/// Records of one split. Every record must belong to `task`.
pub fn read_index(path: &Path, task: Task, split: Split) -> Result<CuratedIndex> {
    let file = fs::File::open(path).at(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: IndexLine = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        if parsed.record.payload.task() != task {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {} record in a {task} index", i + 1, parsed.record.payload.task()),
            });
        }
        if parsed.split == split {
            records.push(parsed.record);
        }
    }
    check_unique_keys(&records)?;
    Ok(CuratedIndex {
        task,
        records,
        dropped_count: 0,
    })
}
