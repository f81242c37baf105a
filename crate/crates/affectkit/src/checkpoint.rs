//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `AFKCKPT1`, the JSON header length as a
//! little-endian `u64`, the JSON header, then every parameter tensor as
//! little-endian `f32` in header order. The header carries the full run
//! configuration, metrics and, per tensor, its name, shape and offset.

use std::fs;
use std::path::Path;

use affectkit_core::harness::{CheckpointManifest, EvalPoint, RunConfig};
use affectkit_core::evaluation::{MetricReport, ThresholdVector};
use affectkit_core::nn::{ParamEntry, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"AFKCKPT1";
pub const EXTENSION: &str = "afk";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: usize,
    steps_run: usize,
    best_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<ThresholdVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<MetricReport>,
    #[serde(default)]
    history: Vec<EvalPoint>,
    tensors: Vec<TensorInfo>,
    payload_len: usize,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn to_bytes(m: &CheckpointManifest) -> Vec<u8> {
    let mut offset = 0;
    let tensors = m
        .params
        .entries
        .iter()
        .map(|e| {
            let t = TensorInfo {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset,
            };
            offset += e.values.len();
            t
        })
        .collect();
    let header = Header {
        config: m.config.clone(),
        step: m.step,
        steps_run: m.steps_run,
        best_metric: m.best_metric,
        thresholds: m.thresholds,
        report: m.report.clone(),
        history: m.history.clone(),
        tensors,
        payload_len: offset,
    };
    let json = serde_json::to_vec(&header).expect("header is always serializable");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for e in &m.params.entries {
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint; `path` is only used in error messages.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<CheckpointManifest> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "not an affectkit checkpoint"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let payload = &bytes[end..];
    if payload.len() != 4 * header.payload_len {
        return Err(corrupt(
            path,
            format!("payload has {} bytes, header promises {}", payload.len(), 4 * header.payload_len),
        ));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut entries = Vec::with_capacity(header.tensors.len());
    let mut expected = 0;
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset != expected || t.offset + n > values.len() {
            return Err(corrupt(path, format!("tensor {} has a bad offset", t.name)));
        }
        expected += n;
        entries.push(ParamEntry {
            values: values[t.offset..t.offset + n].to_vec(),
            name: t.name,
            shape: t.shape,
        });
    }
    if expected != values.len() {
        return Err(corrupt(path, "payload has trailing values"));
    }
    Ok(CheckpointManifest {
        config: header.config,
        step: header.step,
        steps_run: header.steps_run,
        best_metric: header.best_metric,
        thresholds: header.thresholds,
        report: header.report,
        history: header.history,
        params: ParamStore { entries },
    })
}

pub fn save(m: &CheckpointManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, to_bytes(m)).at(path)
}

pub fn load(path: &Path) -> Result<CheckpointManifest> {
    let bytes = fs::read(path).at(path)?;
    from_bytes(&bytes, path)
}
