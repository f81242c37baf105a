//! TOML run configuration and dataset path resolution.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use affectkit_core::harness::RunConfig;

use crate::error::{Error, IoContext, Result};

pub const DATA_ENV: &str = "AFFECTKIT_DATA";

pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    toml::from_str(text).map_err(|source| Error::Toml {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).at(path)?;
    parse_config(&text, path)
}

/// Concrete locations of a run's inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataLayout {
    pub root: PathBuf,
    pub images: PathBuf,
    pub train_index: PathBuf,
    pub val_index: PathBuf,
    pub pretrained: Option<PathBuf>,
}

/// Default curated index location for `task` below `root`.
pub fn default_index(root: &Path, task: affectkit_core::Task) -> PathBuf {
    root.join("curated").join(format!("{task}.jsonl"))
}

/// Resolve the data root from `cli` (highest precedence), the config, or
/// the `AFFECTKIT_DATA` environment variable, then the remaining paths
/// relative to it.
pub fn resolve_data(config: &RunConfig, cli: Option<&Path>) -> Result<DataLayout> {
    let root = cli
        .map(Path::to_path_buf)
        .or_else(|| config.data.root.as_ref().map(PathBuf::from))
        .or_else(|| env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Usage(format!("no data root: pass --data, set data.root or {DATA_ENV}")))?;
    let under = |p: &Option<String>| p.as_ref().map(|p| root.join(p));
    let d = &config.data;
    Ok(DataLayout {
        images: under(&d.images).unwrap_or_else(|| root.join("images")),
        train_index: under(&d.train_index).unwrap_or_else(|| default_index(&root, config.task)),
        val_index: under(&d.val_index).unwrap_or_else(|| default_index(&root, config.task)),
        pretrained: under(&d.pretrained),
        root,
    })
}
